//! Small arithmetic expression language used by the configuration layer.
//!
//! Grammar: `+ - * / ^`, parentheses, unary minus, numeric literals, the
//! constant `pi`, named variables, and the functions `exp log sqrt sin cos`
//! (plus `tan abs min max`). Variables are bound by position when parsing, so
//! evaluation is a plain slice lookup. Evaluation is generic over [`Dual`]
//! numbers, which gives exact first derivatives without finite differences.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Forward-mode dual number `v + d·ε`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn constant(v: f64) -> Self {
        Dual { v, d: 0.0 }
    }

    pub fn variable(v: f64) -> Self {
        Dual { v, d: 1.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { v: self.v + o.v, d: self.d + o.d }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual { v: self.v - o.v, d: self.d - o.d }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual { v: self.v * o.v, d: self.d * o.v + self.v * o.d }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual { v: self.v / o.v, d: (self.d * o.v - self.v * o.d) / (o.v * o.v) }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual { v: -self.v, d: -self.d }
    }
}

/// Scalar types the expression evaluator can run on.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn abs(self) -> Self;
    fn powf(self, p: f64) -> Self;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tan(self) -> Self {
        f64::tan(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn powf(self, p: f64) -> Self {
        pow_const(self, p)
    }
}

fn pow_const(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() < i32::MAX as f64 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

impl Scalar for Dual {
    fn from_f64(v: f64) -> Self {
        Dual::constant(v)
    }
    fn value(self) -> f64 {
        self.v
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        Dual { v: e, d: self.d * e }
    }
    fn ln(self) -> Self {
        Dual { v: self.v.ln(), d: self.d / self.v }
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        Dual { v: s, d: self.d / (2.0 * s) }
    }
    fn sin(self) -> Self {
        Dual { v: self.v.sin(), d: self.d * self.v.cos() }
    }
    fn cos(self) -> Self {
        Dual { v: self.v.cos(), d: -self.d * self.v.sin() }
    }
    fn tan(self) -> Self {
        let t = self.v.tan();
        Dual { v: t, d: self.d * (1.0 + t * t) }
    }
    fn abs(self) -> Self {
        if self.v < 0.0 {
            -self
        } else {
            self
        }
    }
    fn powf(self, p: f64) -> Self {
        if p == 0.0 {
            return Dual::constant(1.0);
        }
        Dual { v: pow_const(self.v, p), d: self.d * p * pow_const(self.v, p - 1.0) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Func {
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Tan,
    Abs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Call(Func, Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
}

/// A parsed expression with positionally bound variables.
#[derive(Clone, PartialEq)]
pub struct Expr {
    source: String,
    vars: Vec<String>,
    root: Node,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?} over {:?})", self.source, self.vars)
    }
}

impl Expr {
    /// Parses `source`, binding each identifier in `vars` to its position.
    pub fn parse(source: &str, vars: &[&str]) -> Result<Expr> {
        let tokens = tokenize(source)?;
        let mut p = Parser { tokens: &tokens, pos: 0, vars };
        let root = p.expr()?;
        if p.pos != tokens.len() {
            return Err(Error::Expr(format!("unexpected trailing input in {source:?}")));
        }
        Ok(Expr {
            source: source.to_string(),
            vars: vars.iter().map(|s| s.to_string()).collect(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// True when no variable occurs in the expression.
    pub fn is_constant(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::Num(_) => true,
                Node::Var(_) => false,
                Node::Neg(a) | Node::Call(_, a) => walk(a),
                Node::Bin(_, a, b) => walk(a) && walk(b),
            }
        }
        walk(&self.root)
    }

    pub fn arity(&self) -> usize {
        self.vars.len()
    }

    pub fn eval(&self, args: &[f64]) -> f64 {
        eval_node(&self.root, args)
    }

    pub fn eval_generic<S: Scalar>(&self, args: &[S]) -> S {
        eval_node(&self.root, args)
    }

    /// Value and partial derivative with respect to variable `var`.
    pub fn eval_partial(&self, args: &[f64], var: usize) -> (f64, f64) {
        let duals: Vec<Dual> = args
            .iter()
            .enumerate()
            .map(|(i, &a)| if i == var { Dual::variable(a) } else { Dual::constant(a) })
            .collect();
        let r = eval_node(&self.root, &duals);
        (r.v, r.d)
    }

    /// Value and full gradient.
    pub fn eval_gradient(&self, args: &[f64]) -> (f64, Vec<f64>) {
        let mut value = self.eval(args);
        let mut grad = Vec::with_capacity(args.len());
        for k in 0..args.len() {
            let (v, d) = self.eval_partial(args, k);
            value = v;
            grad.push(d);
        }
        (value, grad)
    }
}

fn eval_node<S: Scalar>(node: &Node, args: &[S]) -> S {
    match node {
        Node::Num(v) => S::from_f64(*v),
        Node::Var(i) => args[*i],
        Node::Neg(a) => -eval_node(a, args),
        Node::Call(f, a) => {
            let x = eval_node(a, args);
            match f {
                Func::Exp => x.exp(),
                Func::Log => x.ln(),
                Func::Sqrt => x.sqrt(),
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Tan => x.tan(),
                Func::Abs => x.abs(),
            }
        }
        Node::Bin(op, a, b) => {
            if let (BinOp::Pow, Node::Num(p)) = (op, b.as_ref()) {
                return eval_node(a, args).powf(*p);
            }
            let x = eval_node(a, args);
            let y = eval_node(b, args);
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
                BinOp::Pow => (y * x.ln()).exp(),
                BinOp::Min => {
                    if x.value() <= y.value() {
                        x
                    } else {
                        y
                    }
                }
                BinOp::Max => {
                    if x.value() >= y.value() {
                        x
                    } else {
                        y
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn tokenize(s: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| Error::Expr(format!("bad number {text:?}")))?;
            out.push(Token::Num(v));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else {
            match c {
                '+' | '-' | '*' | '/' | '^' => out.push(Token::Op(c)),
                '(' => out.push(Token::LParen),
                ')' => out.push(Token::RParen),
                ',' => out.push(Token::Comma),
                _ => return Err(Error::Expr(format!("unexpected character {c:?} in {s:?}"))),
            }
            i += 1;
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, t: Token) -> Result<()> {
        match self.next() {
            Some(ref got) if *got == t => Ok(()),
            got => Err(Error::Expr(format!("expected {t:?}, found {got:?}"))),
        }
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    // term := unary (('*'|'/') unary)*
    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    // unary := '-' unary | '+' unary | power
    fn unary(&mut self) -> Result<Node> {
        match self.peek() {
            Some(Token::Op('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Token::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    // power := atom ('^' unary)?   (right associative, binds tighter than unary minus on the left)
    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            let exp = fold_constant(exp);
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.next() {
            Some(Token::Num(v)) => Ok(Node::Num(v)),
            Some(Token::LParen) => {
                let e = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(e)
            }
            Some(Token::Ident(name)) => {
                if let Some(Token::LParen) = self.peek() {
                    self.pos += 1;
                    let a = self.expr()?;
                    let node = match name.as_str() {
                        "min" | "max" => {
                            self.expect(Token::Comma)?;
                            let b = self.expr()?;
                            let op = if name == "min" { BinOp::Min } else { BinOp::Max };
                            Node::Bin(op, Box::new(a), Box::new(b))
                        }
                        _ => {
                            let f = match name.as_str() {
                                "exp" => Func::Exp,
                                "log" | "ln" => Func::Log,
                                "sqrt" => Func::Sqrt,
                                "sin" => Func::Sin,
                                "cos" => Func::Cos,
                                "tan" => Func::Tan,
                                "abs" => Func::Abs,
                                _ => return Err(Error::Expr(format!("unknown function {name:?}"))),
                            };
                            Node::Call(f, Box::new(a))
                        }
                    };
                    self.expect(Token::RParen)?;
                    return Ok(node);
                }
                if name == "pi" {
                    return Ok(Node::Num(std::f64::consts::PI));
                }
                match self.vars.iter().position(|v| *v == name) {
                    Some(i) => Ok(Node::Var(i)),
                    None => Err(Error::Expr(format!(
                        "unknown variable {name:?} (expected one of {:?})",
                        self.vars
                    ))),
                }
            }
            t => Err(Error::Expr(format!("unexpected token {t:?}"))),
        }
    }
}

fn fold_constant(node: Node) -> Node {
    fn value(node: &Node) -> Option<f64> {
        match node {
            Node::Num(v) => Some(*v),
            Node::Neg(a) => value(a).map(|v| -v),
            Node::Bin(op, a, b) => {
                let (x, y) = (value(a)?, value(b)?);
                Some(match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Pow => x.powf(y),
                    BinOp::Min => x.min(y),
                    BinOp::Max => x.max(y),
                })
            }
            _ => None,
        }
    }
    match value(&node) {
        Some(v) => Node::Num(v),
        None => node,
    }
}
