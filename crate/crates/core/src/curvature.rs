//! Prescribed mean curvature H on the cone over Ω: base families, the
//! |X|^{-ε} regularization, the C¹ extension off the annulus r1 ≤ |X| ≤ r2,
//! and sampled validators for the barrier and monotonicity hypotheses.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::ChartedDomain;

type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradientFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// User-supplied H(X) together with its ambient gradient ∇H(X).
#[derive(Clone)]
pub struct Tabulated {
    label: String,
    value: ValueFn,
    gradient: GradientFn,
}

impl Tabulated {
    pub fn new(
        label: impl Into<String>,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Tabulated { label: label.into(), value: Arc::new(value), gradient: Arc::new(gradient) }
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Debug for Tabulated {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tabulated({})", self.label)
    }
}

#[derive(Clone, Debug)]
pub enum CurvatureFamily {
    /// H ≡ c.
    Constant { c: f64 },
    /// H(X) = c·|X|^{−γ}.
    RadialPower { c: f64, gamma: f64 },
    /// H(ρq) = f(ρ)·g(q); `f` is over `rho`, `g` over `q1 … q_{n+1}`.
    Separable { f: Expr, g: Expr },
    Tabulated(Tabulated),
}

impl CurvatureFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            CurvatureFamily::Constant { .. } => "constant",
            CurvatureFamily::RadialPower { .. } => "radial_power",
            CurvatureFamily::Separable { .. } => "separable",
            CurvatureFamily::Tabulated(_) => "tabulated",
        }
    }

    /// Parses the separable family, binding `rho` in `f` and q1 … q_{dim+1} in `g`.
    pub fn separable(f: &str, g: &str, dimension: usize) -> Result<Self> {
        let names: Vec<String> = (1..=dimension + 1).map(|i| format!("q{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        Ok(CurvatureFamily::Separable { f: Expr::parse(f, &["rho"])?, g: Expr::parse(g, &refs)? })
    }
}

#[derive(Clone, Debug)]
pub struct CurvatureSpec {
    r1: f64,
    r2: f64,
    family: CurvatureFamily,
    epsilon: f64,
}

/// Sampling densities for the hypothesis validators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct SamplingDensity {
    pub directions: usize,
    pub radii: usize,
}

impl Default for SamplingDensity {
    fn default() -> Self {
        SamplingDensity { directions: 10_000, radii: 1_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HypothesisMode {
    Weak,
    Strict,
}

/// Worst-case margins over the samples; a margin is nonnegative when the
/// corresponding inequality holds.
#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub mode: HypothesisMode,
    /// min_q H(r1 q) − 1/r1.
    pub lower_barrier_margin: f64,
    /// min_q 1/r2 − H(r2 q).
    pub upper_barrier_margin: f64,
    /// min over samples of −∂ρ(ρH); absent when r1 = r2 (no radial extent).
    pub monotonicity_margin: Option<f64>,
    /// min over samples of H on A.
    pub min_h: f64,
    pub weak_pass: bool,
    pub strict_pass: bool,
    pub pass: bool,
    pub directions_sampled: usize,
    pub radii_sampled: usize,
    pub notes: Vec<String>,
}

/// Structure constants over the sampled annulus A.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TwConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// Slack for equalities that hold exactly in exact arithmetic.
const EQUALITY_SLACK: f64 = 1e-12;

impl CurvatureSpec {
    pub fn new(family: CurvatureFamily, r1: f64, r2: f64) -> Result<Self> {
        Self::with_epsilon(family, r1, r2, 0.0)
    }

    pub fn with_epsilon(family: CurvatureFamily, r1: f64, r2: f64, epsilon: f64) -> Result<Self> {
        if !(r1.is_finite() && r2.is_finite() && r1 > 0.0 && r1 <= 1.0 && 1.0 <= r2) {
            return Err(Error::Curvature(format!("radii must satisfy 0 < r1 ≤ 1 ≤ r2 < ∞, got r1 = {r1}, r2 = {r2}")));
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::Curvature(format!("epsilon must be finite and nonnegative, got {epsilon}")));
        }
        match &family {
            CurvatureFamily::Constant { c } if !(c.is_finite() && *c > 0.0) => {
                return Err(Error::Curvature(format!("constant curvature must be positive, got {c}")));
            }
            CurvatureFamily::RadialPower { c, gamma } if !(c.is_finite() && *c > 0.0 && gamma.is_finite()) => {
                return Err(Error::Curvature(format!("radial power needs c > 0 and finite γ, got c = {c}, γ = {gamma}")));
            }
            CurvatureFamily::Separable { f, .. } if f.arity() != 1 => {
                return Err(Error::Curvature("separable f must depend on rho only".into()));
            }
            _ => {}
        }
        Ok(CurvatureSpec { r1, r2, family, epsilon })
    }

    pub fn r1(&self) -> f64 {
        self.r1
    }

    pub fn r2(&self) -> f64 {
        self.r2
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// True when H depends on |X| only.
    pub fn is_radial(&self) -> bool {
        match &self.family {
            CurvatureFamily::Constant { .. } | CurvatureFamily::RadialPower { .. } => true,
            CurvatureFamily::Separable { g, .. } => g.is_constant(),
            CurvatureFamily::Tabulated(_) => false,
        }
    }

    pub fn family(&self) -> &CurvatureFamily {
        &self.family
    }

    /// Folds a further factor |X|^{−ε} into H.
    pub fn regularize(&self, epsilon: f64) -> Result<Self> {
        Self::with_epsilon(self.family.clone(), self.r1, self.r2, self.epsilon + epsilon)
    }

    /// Same family and radii with the given total exponent.
    pub fn with_total_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::with_epsilon(self.family.clone(), self.r1, self.r2, epsilon)
    }

    /// Unregularized H at the ambient point X ≠ 0.
    pub fn base_value(&self, x: &[f64]) -> f64 {
        let rho = norm(x);
        match &self.family {
            CurvatureFamily::Constant { c } => *c,
            CurvatureFamily::RadialPower { c, gamma } => c * rho.powf(-gamma),
            CurvatureFamily::Separable { f, g } => {
                let q: Vec<f64> = x.iter().map(|v| v / rho).collect();
                f.eval(&[rho]) * g.eval(&q)
            }
            CurvatureFamily::Tabulated(t) => (t.value)(x),
        }
    }

    /// Ambient gradient of the unregularized H.
    pub fn base_gradient(&self, x: &[f64]) -> Vec<f64> {
        let rho = norm(x);
        let q: Vec<f64> = x.iter().map(|v| v / rho).collect();
        match &self.family {
            CurvatureFamily::Constant { .. } => vec![0.0; x.len()],
            CurvatureFamily::RadialPower { c, gamma } => {
                let d = -gamma * c * rho.powf(-gamma - 1.0);
                q.iter().map(|v| d * v).collect()
            }
            CurvatureFamily::Separable { f, g } => {
                let (fv, fd) = f.eval_partial(&[rho], 0);
                let (gv, gg) = g.eval_gradient(&q);
                // ∇[g(X/|X|)] = (I − qqᵀ)∇g(q)/ρ.
                let radial: f64 = gg.iter().zip(&q).map(|(a, b)| a * b).sum();
                q.iter().zip(&gg).map(|(qi, gi)| fd * gv * qi + fv * (gi - radial * qi) / rho).collect()
            }
            CurvatureFamily::Tabulated(t) => (t.gradient)(x),
        }
    }

    /// ∂ρ[ρ·H_base(ρq)] for unit q.
    fn base_radial(&self, q: &[f64], rho: f64) -> f64 {
        match &self.family {
            CurvatureFamily::Constant { c } => *c,
            CurvatureFamily::RadialPower { c, gamma } => c * (1.0 - gamma) * rho.powf(-gamma),
            CurvatureFamily::Separable { f, g } => {
                let (fv, fd) = f.eval_partial(&[rho], 0);
                g.eval(q) * (fv + rho * fd)
            }
            CurvatureFamily::Tabulated(_) => {
                let s = 1e-6 * rho;
                let at = |r: f64| r * self.base_value(&scale(q, r));
                (at(rho + s) - at(rho - s)) / (2.0 * s)
            }
        }
    }

    /// H_ε(ρq) = ρ^{−ε}·H_base(ρq), valid on the annulus.
    fn regularized(&self, q: &[f64], rho: f64) -> f64 {
        rho.powf(-self.epsilon) * self.base_value(&scale(q, rho))
    }

    /// ∂ρ[ρ·H_ε(ρq)] = ρ^{−ε}[∂ρ(ρH_base) − ε·H_base].
    fn regularized_radial(&self, q: &[f64], rho: f64) -> f64 {
        let base = self.base_radial(q, rho);
        if self.epsilon == 0.0 {
            return base;
        }
        rho.powf(-self.epsilon) * (base - self.epsilon * self.base_value(&scale(q, rho)))
    }

    /// h1(q) = ∂ρ(ρH_ε) at ρ = r1.
    pub fn h1(&self, q: &[f64]) -> f64 {
        self.regularized_radial(q, self.r1)
    }

    /// h2(q) = ∂ρ(ρH_ε) at ρ = r2.
    pub fn h2(&self, q: &[f64]) -> f64 {
        self.regularized_radial(q, self.r2)
    }

    /// Extended H at the ambient point X.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let rho = norm(x);
        if !(rho > 0.0) {
            return Err(Error::NonPositiveRadius(rho));
        }
        let q: Vec<f64> = x.iter().map(|v| v / rho).collect();
        self.evaluate_polar(&q, rho)
    }

    /// Extended H at ρq for unit q.
    pub fn evaluate_polar(&self, q: &[f64], rho: f64) -> Result<f64> {
        if !(rho > 0.0) {
            return Err(Error::NonPositiveRadius(rho));
        }
        Ok(if rho < self.r1 {
            let t = self.r1 / rho;
            t * self.regularized(q, self.r1) + (1.0 - t) * self.h1(q)
        } else if rho > self.r2 {
            let t = self.r2 / rho;
            t * self.regularized(q, self.r2) + (1.0 - t) * self.h2(q)
        } else {
            self.regularized(q, rho)
        })
    }

    /// ∂ρ[ρ·H(ρq)] for the extended H.
    pub fn radial_derivative(&self, q: &[f64], rho: f64) -> Result<f64> {
        if !(rho > 0.0) {
            return Err(Error::NonPositiveRadius(rho));
        }
        Ok(if rho < self.r1 {
            self.h1(q)
        } else if rho > self.r2 {
            self.h2(q)
        } else {
            self.regularized_radial(q, rho)
        })
    }

    /// Ambient gradient of H_ε on the annulus.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let rho = norm(x);
        let g = self.base_gradient(x);
        if self.epsilon == 0.0 {
            return g;
        }
        let w = rho.powf(-self.epsilon);
        let hb = self.base_value(x);
        x.iter()
            .zip(&g)
            .map(|(xi, gi)| w * gi - self.epsilon * w * hb * xi / (rho * rho))
            .collect()
    }

    fn radii(&self, count: usize) -> Vec<f64> {
        if self.r1 == self.r2 || count <= 1 {
            return vec![self.r1];
        }
        (0..count).map(|i| self.r1 + (self.r2 - self.r1) * i as f64 / (count - 1) as f64).collect()
    }

    pub fn check_hypotheses(
        &self,
        domain: &ChartedDomain,
        mode: HypothesisMode,
        density: SamplingDensity,
    ) -> HypothesisReport {
        let qs = domain.sample_points(density.directions);
        let radii = self.radii(density.radii);
        let degenerate = self.r1 == self.r2;
        struct Acc {
            lower: f64,
            upper: f64,
            mono: f64,
            min_h: f64,
        }
        let acc = qs
            .par_iter()
            .map(|q| {
                let lower = self.regularized(q, self.r1) - 1.0 / self.r1;
                let upper = 1.0 / self.r2 - self.regularized(q, self.r2);
                let mut mono = f64::INFINITY;
                let mut min_h = f64::INFINITY;
                for &r in &radii {
                    min_h = min_h.min(self.regularized(q, r));
                    if !degenerate {
                        mono = mono.min(-self.regularized_radial(q, r));
                    }
                }
                Acc { lower, upper, mono, min_h }
            })
            .reduce(
                || Acc { lower: f64::INFINITY, upper: f64::INFINITY, mono: f64::INFINITY, min_h: f64::INFINITY },
                |a, b| Acc {
                    lower: nan_min(a.lower, b.lower),
                    upper: nan_min(a.upper, b.upper),
                    mono: nan_min(a.mono, b.mono),
                    min_h: nan_min(a.min_h, b.min_h),
                },
            );
        let mut notes = Vec::new();
        let slack_lo = EQUALITY_SLACK * (1.0 / self.r1).max(1.0);
        let slack_hi = EQUALITY_SLACK * (1.0 / self.r2).max(1.0);
        let mono_ok = degenerate || acc.mono >= -EQUALITY_SLACK;
        let positive = acc.min_h > 0.0;
        let weak_pass = positive && acc.lower >= -slack_lo && acc.upper >= -slack_hi && mono_ok;
        let strict_pass = positive && acc.lower > slack_lo && acc.upper > slack_hi && mono_ok;
        if degenerate {
            notes.push("r1 = r2: the annulus has no radial extent, monotonicity is vacuous".into());
        }
        if !positive {
            notes.push("H is not positive on the sampled annulus".into());
        }
        if matches!(self.family, CurvatureFamily::Tabulated(_)) {
            notes.push("tabulated H: margins assume the supplied data are C¹".into());
        }
        HypothesisReport {
            mode,
            lower_barrier_margin: acc.lower,
            upper_barrier_margin: acc.upper,
            monotonicity_margin: if degenerate { None } else { Some(acc.mono) },
            min_h: acc.min_h,
            weak_pass,
            strict_pass,
            pass: match mode {
                HypothesisMode::Weak => weak_pass,
                HypothesisMode::Strict => strict_pass,
            },
            directions_sampled: qs.len(),
            radii_sampled: radii.len(),
            notes,
        }
    }

    /// C1 = max |X|²|∇H|, C2 = 0, C3 = max |X|H over the sampled annulus.
    pub fn tw_constants(&self, domain: &ChartedDomain, density: SamplingDensity) -> TwConstants {
        let qs = domain.sample_points(density.directions);
        let radii = self.radii(density.radii);
        let (c1, c3) = qs
            .par_iter()
            .map(|q| {
                let mut c1 = 0.0f64;
                let mut c3 = 0.0f64;
                for &r in &radii {
                    let x = scale(q, r);
                    c1 = c1.max(r * r * norm(&self.gradient(&x)));
                    c3 = c3.max(r * self.regularized(q, r));
                }
                (c1, c3)
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
        TwConstants { c1, c2: 0.0, c3 }
    }
}

fn nan_min(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.min(b)
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn scale(q: &[f64], r: f64) -> Vec<f64> {
    q.iter().map(|v| v * r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn cap() -> ChartedDomain {
        ChartedDomain::south_cap(2, 75f64.to_radians(), 0.05).unwrap()
    }

    fn power(gamma: f64, r1: f64, r2: f64) -> CurvatureSpec {
        CurvatureSpec::new(CurvatureFamily::RadialPower { c: 1.0, gamma }, r1, r2).unwrap()
    }

    const SMALL: SamplingDensity = SamplingDensity { directions: 400, radii: 50 };

    fn unit(v: &[f64]) -> Vec<f64> {
        scale(v, 1.0 / norm(v))
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(CurvatureSpec::new(CurvatureFamily::Constant { c: 1.0 }, 1.5, 2.0).is_err());
        assert!(CurvatureSpec::new(CurvatureFamily::Constant { c: 1.0 }, 0.5, 0.9).is_err());
        assert!(CurvatureSpec::new(CurvatureFamily::Constant { c: -1.0 }, 0.5, 2.0).is_err());
        assert!(CurvatureSpec::with_epsilon(CurvatureFamily::Constant { c: 1.0 }, 0.5, 2.0, -0.1).is_err());
        let s = power(1.0, 0.5, 2.0);
        assert!(matches!(s.evaluate(&[0.0, 0.0, 0.0]), Err(Error::NonPositiveRadius(_))));
        assert!(s.radial_derivative(&[0.0, 0.0, -1.0], -1.0).is_err());
    }

    #[test]
    fn inverse_radius_extends_to_itself() {
        let s = power(1.0, 0.5, 2.0);
        let q = unit(&[0.2, -0.1, -1.0]);
        assert_eq!(s.h1(&q), 0.0);
        assert_eq!(s.h2(&q), 0.0);
        for rho in [0.01, 0.3, 0.5, 1.0, 2.0, 5.0] {
            assert!((s.evaluate_polar(&q, rho).unwrap() - 1.0 / rho).abs() < 1e-12 / rho);
            assert_eq!(s.radial_derivative(&q, rho).unwrap(), 0.0);
        }
    }

    #[test]
    fn inverse_square_extension_below_r1() {
        // ρH(ρ) = r1·H(r1) + (ρ − r1)·h1 with h1 = −r1⁻² = −4, so ρH = 4 − 4ρ.
        let s = power(2.0, 0.5, 2.0);
        let q = [0.0, 0.0, -1.0];
        assert!((s.h1(&q) + 4.0).abs() < 1e-12);
        assert!((s.evaluate_polar(&q, 0.25).unwrap() - 12.0).abs() < 1e-12);
        assert!((s.radial_derivative(&q, 1.0).unwrap() + 1.0).abs() < 1e-12);
        for rho in [0.1, 0.2, 0.45] {
            assert!((s.radial_derivative(&q, rho).unwrap() - s.h1(&q)).abs() < 1e-15);
        }
    }

    #[test]
    fn hypotheses_for_inverse_radius() {
        let r = power(1.0, 0.5, 2.0).check_hypotheses(&cap(), HypothesisMode::Weak, SMALL);
        assert!(r.pass && r.weak_pass && !r.strict_pass);
        assert!(r.lower_barrier_margin.abs() < 1e-12 && r.upper_barrier_margin.abs() < 1e-12);
        assert_eq!(r.monotonicity_margin, Some(0.0));
    }

    #[test]
    fn hypotheses_for_constant_curvature() {
        let one = CurvatureSpec::new(CurvatureFamily::Constant { c: 1.0 }, 1.0, 1.0).unwrap();
        let r = one.check_hypotheses(&cap(), HypothesisMode::Weak, SMALL);
        assert!(r.pass);
        assert!(r.monotonicity_margin.is_none());
        let bad = CurvatureSpec::new(CurvatureFamily::Constant { c: 1.0 }, 0.5, 1.0).unwrap();
        let r = bad.check_hypotheses(&cap(), HypothesisMode::Weak, SMALL);
        assert!(!r.pass);
        assert!((r.lower_barrier_margin + 1.0).abs() < 1e-12);
    }

    #[test]
    fn regularization_makes_barriers_strict() {
        let s = power(1.0, 0.5, 2.0);
        assert_eq!(s.regularize(0.0).unwrap().epsilon(), 0.0);
        let e = s.regularize(0.1).unwrap();
        let q = [0.0, 0.0, -1.0];
        assert!((e.evaluate_polar(&q, 0.5).unwrap() - 0.5f64.powf(-1.1)).abs() < 1e-12);
        let r = e.check_hypotheses(&cap(), HypothesisMode::Strict, SMALL);
        assert!(r.strict_pass && r.pass);
        assert!(r.lower_barrier_margin > 0.0 && r.upper_barrier_margin > 0.0);
    }

    #[test]
    fn tw_constants_closed_forms() {
        let t = power(1.0, 0.5, 2.0).tw_constants(&cap(), SMALL);
        assert!((t.c1 - 1.0).abs() < 1e-12 && (t.c3 - 1.0).abs() < 1e-12 && t.c2 == 0.0);
        let c = CurvatureSpec::new(CurvatureFamily::Constant { c: 0.7 }, 0.5, 2.0).unwrap();
        let t = c.tw_constants(&cap(), SMALL);
        assert_eq!(t.c1, 0.0);
        assert!((t.c3 - 1.4).abs() < 1e-12);
    }

    #[test]
    fn separable_gradient_matches_finite_differences() {
        let fam = CurvatureFamily::separable("(1 + 0.3*rho)/rho^2", "1 + 0.2*q1*q3 - 0.1*q2^2", 2).unwrap();
        let s = CurvatureSpec::with_epsilon(fam, 0.5, 2.0, 0.05).unwrap();
        let x = [0.3, -0.4, -1.1];
        let g = s.gradient(&x);
        for k in 0..3 {
            let mut p = x;
            let mut m = x;
            p[k] += 1e-6;
            m[k] -= 1e-6;
            let fd = (s.evaluate(&p).unwrap() - s.evaluate(&m).unwrap()) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-7, "{k}: {fd} vs {}", g[k]);
        }
        let q = unit(&x);
        let rho = norm(&x);
        let at = |r: f64| r * s.evaluate_polar(&q, r).unwrap();
        let fd = (at(rho + 1e-6) - at(rho - 1e-6)) / 2e-6;
        assert!((fd - s.radial_derivative(&q, rho).unwrap()).abs() < 1e-7);
    }

    #[test]
    fn tabulated_radial_derivative_uses_differences() {
        let t = Tabulated::new(
            "c/|X|^2",
            |x| 1.0 / x.iter().map(|v| v * v).sum::<f64>(),
            |x| {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                x.iter().map(|v| -2.0 * v / (r2 * r2)).collect()
            },
        );
        let s = CurvatureSpec::new(CurvatureFamily::Tabulated(t), 0.5, 2.0).unwrap();
        let q = [0.0, 0.0, -1.0];
        assert!((s.radial_derivative(&q, 1.0).unwrap() + 1.0).abs() < 1e-8);
        assert!((s.h1(&q) + 4.0).abs() < 1e-7);
    }

    fn families() -> Vec<CurvatureSpec> {
        vec![
            power(1.0, 0.5, 2.0),
            power(2.0, 0.5, 2.0),
            CurvatureSpec::new(CurvatureFamily::RadialPower { c: 0.8, gamma: 2.0 }, 0.5, 2.0).unwrap(),
            CurvatureSpec::new(CurvatureFamily::RadialPower { c: 1.2, gamma: 1.5 }, 0.6, 1.6).unwrap(),
            CurvatureSpec::new(
                CurvatureFamily::separable("(1 - 0.4*(rho - 0.5)^2)/rho", "1", 2).unwrap(),
                0.5,
                2.0,
            )
            .unwrap(),
        ]
    }

    fn direction(theta: f64, phi: f64) -> Vec<f64> {
        // Points of the 75° cap around the south pole.
        let t = theta * 75f64.to_radians();
        vec![t.sin() * phi.cos(), t.sin() * phi.sin(), -t.cos()]
    }

    proptest! {
        #[test]
        fn extension_is_c1_at_both_radii(which in 0usize..5, theta in 0.0..1.0f64, phi in 0.0..(2.0 * PI)) {
            let s = &families()[which];
            let q = direction(theta, phi);
            let f = |r: f64| r * s.evaluate_polar(&q, r).unwrap();
            for r in [s.r1(), s.r2()] {
                let step = 1e-4;
                let left = (3.0 * f(r) - 4.0 * f(r - step) + f(r - 2.0 * step)) / (2.0 * step);
                let right = (-3.0 * f(r) + 4.0 * f(r + step) - f(r + 2.0 * step)) / (2.0 * step);
                prop_assert!((left - right).abs() < 1e-6, "{left} {right}");
                prop_assert!((f(r + 1e-12) - f(r - 1e-12)).abs() < 1e-9);
            }
        }

        #[test]
        fn weak_hypotheses_give_global_monotonicity(which in 0usize..5, theta in 0.0..1.0f64, phi in 0.0..(2.0 * PI), t in 1e-3..1.0f64) {
            let s = &families()[which];
            let q = direction(theta, phi);
            let rho = t * 3.0 * s.r2();
            prop_assert!(s.radial_derivative(&q, rho).unwrap() <= 1e-12);
        }

        #[test]
        fn regularization_does_not_reduce_monotonicity_margin(which in 0usize..5, theta in 0.0..1.0f64, phi in 0.0..(2.0 * PI), t in 0.0..1.0f64, eps in 1e-3..0.3f64) {
            let s = &families()[which];
            let e = s.regularize(eps).unwrap();
            let q = direction(theta, phi);
            let rho = s.r1() + t * (s.r2() - s.r1());
            let base = s.radial_derivative(&q, rho).unwrap();
            let reg = e.radial_derivative(&q, rho).unwrap();
            prop_assert!(reg <= base * rho.powf(-eps) + 1e-12);
        }

        #[test]
        fn regularization_converges_as_epsilon_vanishes(which in 0usize..5, theta in 0.0..1.0f64, phi in 0.0..(2.0 * PI), t in 0.0..1.0f64, eps in 1e-4..0.3f64) {
            let s = &families()[which];
            let e = s.regularize(eps).unwrap();
            let q = direction(theta, phi);
            let rho = s.r1() + t * (s.r2() - s.r1());
            let max_h = (0..=200)
                .map(|i| s.evaluate_polar(&q, s.r1() + (s.r2() - s.r1()) * i as f64 / 200.0).unwrap())
                .fold(0.0f64, f64::max);
            let bound = (s.r2().powf(eps).max(s.r1().powf(-eps)) - 1.0) * max_h;
            let diff = (e.evaluate_polar(&q, rho).unwrap() - s.evaluate_polar(&q, rho).unwrap()).abs();
            prop_assert!(diff <= bound * (1.0 + 1e-9) + 1e-14);
        }

        #[test]
        fn strict_barriers_extend_off_the_annulus(which in 0usize..5, theta in 0.0..1.0f64, phi in 0.0..(2.0 * PI), t in 1e-3..1.0f64) {
            let s = families()[which].regularize(0.05).unwrap();
            let q = direction(theta, phi);
            let below = t * s.r1();
            let above = s.r2() * (1.0 + 4.0 * t);
            prop_assert!(s.evaluate_polar(&q, below).unwrap() > 1.0 / below);
            prop_assert!(s.evaluate_polar(&q, above).unwrap() < 1.0 / above);
        }
    }

    #[test]
    fn all_property_families_pass_weak_hypotheses() {
        for s in families() {
            let r = s.check_hypotheses(&cap(), HypothesisMode::Weak, SMALL);
            assert!(r.pass, "{:?}: {r:?}", s.family());
            let strict = s.regularize(0.05).unwrap().check_hypotheses(&cap(), HypothesisMode::Strict, SMALL);
            assert!(strict.pass, "{:?}", s.family());
        }
    }
}
