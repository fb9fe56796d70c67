//! Fixed-point iteration u ← T_t u with homotopies in t and ε, a Newton
//! accelerator, C⁰-bound monitoring, and the multi-start uniqueness probe.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{CurvatureSpec, HypothesisMode, HypothesisReport, SamplingDensity};
use crate::elliptic::{
    assemble, chart_coefficients, coefficient_matrix, ellipticity_check, operator_row, solve, EllipticityReport,
};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{conformal_factor, frame_derivatives, ChartedDomain, Grid, ScalarField};
use crate::linalg::{inf_norm, solve_linear, CsrMatrix, LinearMethod};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scheme {
    Picard,
    Newton,
    #[default]
    PicardThenNewton,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonDamping {
    /// Initial step fraction.
    pub initial: f64,
    /// Backtracking factor applied while ‖F‖∞ increases.
    pub backtrack: f64,
}

impl Default for NewtonDamping {
    fn default() -> Self {
        NewtonDamping { initial: 1.0, backtrack: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub t_schedule: Vec<f64>,
    pub eps_schedule: Vec<f64>,
    pub tol_residual: f64,
    pub tol_increment: f64,
    pub max_iterations: usize,
    pub newton_damping: NewtonDamping,
    /// Picard increment below which PICARD_THEN_NEWTON switches to Newton.
    pub newton_switch_increment: f64,
    pub linear_method: LinearMethod,
    /// Solve even when the WEAK hypotheses fail.
    pub force: bool,
    pub hypothesis_density: SamplingDensity,
    /// Random (node, ξ) samples for the ellipticity check of the final field.
    pub ellipticity_samples: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            scheme: Scheme::PicardThenNewton,
            t_schedule: vec![0.25, 0.5, 0.75, 1.0],
            eps_schedule: vec![0.1, 0.01, 0.0],
            tol_residual: 1e-9,
            tol_increment: 1e-11,
            max_iterations: 200,
            newton_damping: NewtonDamping::default(),
            newton_switch_increment: 1e-3,
            linear_method: LinearMethod::Direct,
            force: false,
            hypothesis_density: SamplingDensity::default(),
            ellipticity_samples: 10_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.t_schedule.is_empty() || *self.t_schedule.last().expect("nonempty") != 1.0 {
            return bad("t_schedule must be nonempty and end at 1".into());
        }
        if self.t_schedule.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) || self.t_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("t_schedule must be strictly increasing in (0, 1], got {:?}", self.t_schedule));
        }
        if !self.eps_schedule.is_empty() {
            if *self.eps_schedule.last().expect("nonempty") != 0.0 {
                return bad("eps_schedule must end at 0".into());
            }
            if self.eps_schedule.iter().any(|e| !(e.is_finite() && *e >= 0.0))
                || self.eps_schedule.windows(2).any(|w| w[0] <= w[1])
            {
                return bad(format!("eps_schedule must be strictly decreasing and nonnegative, got {:?}", self.eps_schedule));
            }
        }
        if !(self.tol_residual > 0.0 && self.tol_increment > 0.0 && self.newton_switch_increment > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        let d = self.newton_damping;
        if !(d.initial > 0.0 && d.initial <= 1.0 && d.backtrack > 0.0 && d.backtrack < 1.0) {
            return bad(format!("newton_damping needs initial in (0, 1] and backtrack in (0, 1), got {d:?}"));
        }
        if self.hypothesis_density.directions == 0 || self.hypothesis_density.radii == 0 {
            return bad("hypothesis sampling densities must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Diverged,
    HypothesisFail,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StepKind {
    Picard,
    Newton,
    /// Newton failed to reduce the residual; a Picard step was taken instead.
    NewtonFallback,
}

#[derive(Clone, Debug, Serialize)]
pub struct StageReport {
    pub epsilon: f64,
    pub t: f64,
    pub iterations: usize,
    pub steps: Vec<StepKind>,
    /// ‖F_t(u)‖∞ before the first step and after every step.
    pub residual_history: Vec<f64>,
    pub increment_history: Vec<f64>,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct C0Report {
    pub min: f64,
    pub max: f64,
    pub lower: f64,
    pub upper: f64,
    pub tolerance: f64,
    pub below_lower: bool,
    pub above_upper: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub stage_seconds: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub message: Option<String>,
    pub unknowns: usize,
    pub grid_spacing: f64,
    pub hypotheses: HypothesisReport,
    pub stages: Vec<StageReport>,
    /// Iteration count per stage.
    pub iterations: Vec<usize>,
    /// Concatenated stage residual histories.
    pub residual_history: Vec<f64>,
    /// ‖F(u)‖∞ for the full problem (t = 1, no extra ε).
    pub final_residual: f64,
    pub c0_bounds: C0Report,
    /// max over nodes of |∇u|² (frame norm); monitored only.
    pub grad_sup: f64,
    /// Sup distance between solutions of consecutive ε stages.
    pub eps_stage_distances: Vec<f64>,
    pub ellipticity: Option<EllipticityReport>,
    pub timing: Timing,
}

/// Stage residual F_t(u) = aᶦʲ(∇u)u_ij − t·n(1+|∇u|²)(1 − √(1+|∇u|²)e^u H(e^u q)).
pub fn stage_residual(u: &ScalarField, t: f64, spec: &CurvatureSpec, domain: &ChartedDomain, grid: &Grid) -> Result<Vec<f64>> {
    if u.len() != grid.len() {
        return Err(Error::FieldLength { expected: grid.len(), got: u.len() });
    }
    let n = grid.dim();
    let chart = domain.chart();
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let d = frame_derivatives(u, grid, i);
            let a = coefficient_matrix(&d.grad);
            let lhs: f64 = a.iter().zip(&d.hess).map(|(x, y)| x * y).sum();
            let q = chart.to_sphere(&grid.node(i).x);
            let b = crate::elliptic::rhs_value(n, d.grad_norm_sq(), u.values()[i], &q, spec)?;
            Ok(lhs - t * b)
        })
        .collect()
}

/// Node-wise residual of the Dirichlet problem.
pub fn residual(u: &ScalarField, spec: &CurvatureSpec, domain: &ChartedDomain, grid: &Grid) -> Result<ScalarField> {
    ScalarField::from_values(stage_residual(u, 1.0, spec, domain, grid)?)
}

/// u = T_t w.
pub fn picard_step(w: &ScalarField, t: f64, spec: &CurvatureSpec, domain: &ChartedDomain, grid: &Grid) -> Result<ScalarField> {
    picard_step_with(w, t, spec, domain, grid, LinearMethod::Direct)
}

pub fn picard_step_with(
    w: &ScalarField,
    t: f64,
    spec: &CurvatureSpec,
    domain: &ChartedDomain,
    grid: &Grid,
    method: LinearMethod,
) -> Result<ScalarField> {
    solve(&assemble(w, t, spec, domain, grid)?, method)
}

/// Linearization of F_t at u.
pub fn jacobian(u: &ScalarField, t: f64, spec: &CurvatureSpec, domain: &ChartedDomain, grid: &Grid) -> Result<CsrMatrix> {
    let n = grid.dim();
    let nf = n as f64;
    let chart = domain.chart();
    let rows: Vec<Result<Vec<(usize, f64)>>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = &grid.node(i).x;
            let d = frame_derivatives(u, grid, i);
            let p = &d.grad;
            let v = d.grad_norm_sq();
            let a = coefficient_matrix(p);
            let (second, mut first) = chart_coefficients(x, &a);
            let q = chart.to_sphere(x);
            let rho = u.values()[i].exp();
            let e = rho * spec.evaluate_polar(&q, rho)?;
            let de = rho * spec.radial_derivative(&q, rho)?;
            let root = (1.0 + v).sqrt();
            let db_dv = nf * (1.0 - root * e) - 0.5 * nf * root * e;
            let tr: f64 = (0..n).map(|k| d.hess[k * n + k]).sum();
            let lam = conformal_factor(x);
            for m in 0..n {
                let up: f64 = (0..n).map(|j| d.hess[m * n + j] * p[j]).sum();
                let beta = 2.0 * p[m] * tr - 2.0 * up - t * 2.0 * p[m] * db_dv;
                first[m] += beta / lam;
            }
            let zeroth = t * nf * (1.0 + v) * root * de;
            Ok(operator_row(grid, i, &second, &first, zeroth))
        })
        .collect();
    Ok(CsrMatrix::from_rows(rows.into_iter().collect::<Result<_>>()?))
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub field: ScalarField,
    pub step_fraction: f64,
    pub residual_before: f64,
    pub residual_after: f64,
    pub fell_back_to_picard: bool,
}

/// One damped Newton step for F_t with backtracking on ‖F_t‖∞.
pub fn newton_step(
    u: &ScalarField,
    t: f64,
    spec: &CurvatureSpec,
    domain: &ChartedDomain,
    grid: &Grid,
    damping: NewtonDamping,
) -> Result<ScalarField> {
    Ok(newton_step_detailed(u, t, spec, domain, grid, damping, LinearMethod::Direct)?.field)
}

pub fn newton_step_detailed(
    u: &ScalarField,
    t: f64,
    spec: &CurvatureSpec,
    domain: &ChartedDomain,
    grid: &Grid,
    damping: NewtonDamping,
    method: LinearMethod,
) -> Result<NewtonOutcome> {
    let f0 = stage_residual(u, t, spec, domain, grid)?;
    let r0 = inf_norm(&f0);
    if r0 == 0.0 {
        return Ok(NewtonOutcome { field: u.clone(), step_fraction: 0.0, residual_before: 0.0, residual_after: 0.0, fell_back_to_picard: false });
    }
    let fallback = |reason_residual: f64| -> Result<NewtonOutcome> {
        let _ = reason_residual;
        let field = picard_step_with(u, t, spec, domain, grid, method)?;
        let after = stage_residual(&field, t, spec, domain, grid).map(|r| inf_norm(&r)).unwrap_or(f64::INFINITY);
        Ok(NewtonOutcome { field, step_fraction: 0.0, residual_before: r0, residual_after: after, fell_back_to_picard: true })
    };
    let j = jacobian(u, t, spec, domain, grid)?;
    let rhs: Vec<f64> = f0.iter().map(|v| -v).collect();
    let delta = match solve_linear(&j, &rhs, method, crate::elliptic::KRYLOV_MAX_ITER) {
        Ok((d, _)) if d.iter().all(|v| v.is_finite()) => d,
        Ok(_) | Err(Error::Singular { .. }) => return fallback(r0),
        Err(e) => return Err(e),
    };
    let mut s = damping.initial;
    while s > 1e-4 {
        let cand: Vec<f64> = u.values().iter().zip(&delta).map(|(a, b)| a + s * b).collect();
        if let Ok(field) = ScalarField::from_values(cand) {
            if let Ok(r) = stage_residual(&field, t, spec, domain, grid) {
                let r1 = inf_norm(&r);
                if r1.is_finite() && r1 < r0 {
                    return Ok(NewtonOutcome { field, step_fraction: s, residual_before: r0, residual_after: r1, fell_back_to_picard: false });
                }
            }
        }
        s *= damping.backtrack;
    }
    fallback(r0)
}

/// C⁰ bounds log r1 − tol ≤ u ≤ log r2 + tol with tol = 1e−8 + 10h².
pub fn check_c0_bounds(u: &ScalarField, spec: &CurvatureSpec, grid_spacing: f64) -> C0Report {
    let tol = 1e-8 + 10.0 * grid_spacing * grid_spacing;
    let (lower, upper) = (spec.r1().ln(), spec.r2().ln());
    let (min, max) = if u.is_empty() { (0.0, 0.0) } else { (u.min(), u.max()) };
    let below = min < lower - tol;
    let above = max > upper + tol;
    C0Report { min, max, lower, upper, tolerance: tol, below_lower: below, above_upper: above, pass: !below && !above }
}

/// max over nodes of |∇u|².
pub fn grad_sup(u: &ScalarField, grid: &Grid) -> f64 {
    (0..grid.len()).map(|i| frame_derivatives(u, grid, i).grad_norm_sq()).fold(0.0, f64::max)
}

/// Builds the grid and solves from u₀ = 0.
pub fn solve_bump(domain: &ChartedDomain, spec: &CurvatureSpec, config: &SolverConfig) -> Result<(ScalarField, SolveReport)> {
    let grid = Grid::build(domain)?;
    solve_bump_on(&grid, domain, spec, config, None)
}

const DIVERGENCE_FACTOR: f64 = 1e6;
const ELLIPTICITY_SEED: u64 = 0x5EED;

/// Solves on an existing grid from an optional initial field.
pub fn solve_bump_on(
    grid: &Grid,
    domain: &ChartedDomain,
    spec: &CurvatureSpec,
    config: &SolverConfig,
    initial: Option<&ScalarField>,
) -> Result<(ScalarField, SolveReport)> {
    config.validate()?;
    let start = Instant::now();
    let h = grid.spacing();
    let hypotheses = spec.check_hypotheses(domain, HypothesisMode::Weak, config.hypothesis_density);
    let mut u = match initial {
        Some(f) if f.len() != grid.len() => return Err(Error::FieldLength { expected: grid.len(), got: f.len() }),
        Some(f) => f.clone(),
        None => ScalarField::zeros(grid),
    };
    let mut report = SolveReport {
        status: SolveStatus::Converged,
        message: None,
        unknowns: grid.len(),
        grid_spacing: h,
        hypotheses,
        stages: Vec::new(),
        iterations: Vec::new(),
        residual_history: Vec::new(),
        final_residual: f64::NAN,
        c0_bounds: check_c0_bounds(&u, spec, h),
        grad_sup: 0.0,
        eps_stage_distances: Vec::new(),
        ellipticity: None,
        timing: Timing::default(),
    };
    if !report.hypotheses.weak_pass && !config.force {
        report.status = SolveStatus::HypothesisFail;
        report.message = Some("curvature fails the WEAK hypotheses; set force to solve anyway".into());
        report.final_residual = stage_residual(&u, 1.0, spec, domain, grid).map(|r| inf_norm(&r)).unwrap_or(f64::NAN);
        report.grad_sup = grad_sup(&u, grid);
        report.timing.total_seconds = start.elapsed().as_secs_f64();
        return Ok((u, report));
    }

    let eps_stages: Vec<f64> = if config.eps_schedule.is_empty() { vec![0.0] } else { config.eps_schedule.clone() };
    let mut previous_eps_solution: Option<ScalarField> = None;
    'eps: for (k, &eps) in eps_stages.iter().enumerate() {
        let stage_spec = spec.regularize(eps)?;
        // The t-homotopy only runs on the first ε stage; later stages warm-start at t = 1.
        let ts: Vec<f64> = if k == 0 { config.t_schedule.clone() } else { vec![1.0] };
        for &t in &ts {
            let stage_start = Instant::now();
            let (next, stage, failure) = run_stage(u.clone(), t, eps, &stage_spec, domain, grid, config)?;
            report.iterations.push(stage.iterations);
            report.residual_history.extend(&stage.residual_history);
            report.stages.push(stage);
            report.timing.stage_seconds.push(stage_start.elapsed().as_secs_f64());
            u = next;
            if let Some((status, msg)) = failure {
                report.status = status;
                report.message = Some(msg);
                break 'eps;
            }
        }
        if let Some(prev) = &previous_eps_solution {
            report.eps_stage_distances.push(prev.sup_distance(&u));
        }
        previous_eps_solution = Some(u.clone());
    }
    report.final_residual = stage_residual(&u, 1.0, spec, domain, grid).map(|r| inf_norm(&r)).unwrap_or(f64::INFINITY);
    if report.status == SolveStatus::Converged && !(report.final_residual <= config.tol_residual) {
        report.status = SolveStatus::MaxIter;
        report.message = Some(format!("final residual {:e} above tolerance", report.final_residual));
    }
    report.c0_bounds = check_c0_bounds(&u, spec, h);
    report.grad_sup = grad_sup(&u, grid);
    if config.ellipticity_samples > 0 {
        report.ellipticity = Some(ellipticity_check(&u, grid, config.ellipticity_samples, ELLIPTICITY_SEED));
    }
    report.timing.total_seconds = start.elapsed().as_secs_f64();
    Ok((u, report))
}

type StageFailure = Option<(SolveStatus, String)>;

fn run_stage(
    mut u: ScalarField,
    t: f64,
    eps: f64,
    spec: &CurvatureSpec,
    domain: &ChartedDomain,
    grid: &Grid,
    config: &SolverConfig,
) -> Result<(ScalarField, StageReport, StageFailure)> {
    let mut stage = StageReport {
        epsilon: eps,
        t,
        iterations: 0,
        steps: Vec::new(),
        residual_history: Vec::new(),
        increment_history: Vec::new(),
        converged: false,
    };
    let norm = |f: &ScalarField| stage_residual(f, t, spec, domain, grid).map(|r| inf_norm(&r));
    let mut r = norm(&u)?;
    stage.residual_history.push(r);
    let initial = r;
    let mut newton_phase = config.scheme == Scheme::Newton;
    while stage.iterations < config.max_iterations {
        if r <= config.tol_residual {
            stage.converged = true;
            return Ok((u, stage, None));
        }
        let (next, kind) = if newton_phase {
            match newton_step_detailed(&u, t, spec, domain, grid, config.newton_damping, config.linear_method) {
                Ok(o) if o.fell_back_to_picard => (o.field, StepKind::NewtonFallback),
                Ok(o) => (o.field, StepKind::Newton),
                Err(e) => return Ok((u, stage, Some((SolveStatus::Diverged, format!("Newton step failed: {e}"))))),
            }
        } else {
            match picard_step_with(&u, t, spec, domain, grid, config.linear_method) {
                Ok(f) => (f, StepKind::Picard),
                Err(e) => return Ok((u, stage, Some((SolveStatus::Diverged, format!("Picard step failed: {e}"))))),
            }
        };
        stage.iterations += 1;
        stage.steps.push(kind);
        let inc = next.sup_distance(&u);
        stage.increment_history.push(inc);
        u = next;
        r = match norm(&u) {
            Ok(v) if v.is_finite() => v,
            _ => {
                stage.residual_history.push(f64::INFINITY);
                return Ok((u, stage, Some((SolveStatus::Diverged, "non-finite residual".into()))));
            }
        };
        stage.residual_history.push(r);
        if r > DIVERGENCE_FACTOR * initial {
            return Ok((u, stage, Some((SolveStatus::Diverged, format!("residual grew from {initial:e} to {r:e}")))));
        }
        if config.scheme == Scheme::PicardThenNewton && !newton_phase && inc < config.newton_switch_increment {
            newton_phase = true;
        }
        if inc <= config.tol_increment && r > config.tol_residual {
            return Ok((u, stage, Some((SolveStatus::MaxIter, format!("stalled at residual {r:e} (t = {t}, ε = {eps})")))));
        }
    }
    if r <= config.tol_residual {
        stage.converged = true;
        return Ok((u, stage, None));
    }
    Ok((u, stage, Some((SolveStatus::MaxIter, format!("no convergence in {} iterations (t = {t}, ε = {eps})", config.max_iterations)))))
}

#[derive(Clone, Debug, Serialize)]
pub struct StartOutcome {
    pub label: String,
    pub status: SolveStatus,
    pub converged: bool,
    /// Final field satisfies the C⁰ bounds, i.e. Σ ⊂ A.
    pub in_a: bool,
    pub center_value: f64,
    pub final_residual: f64,
    pub total_iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolutionCluster {
    pub members: Vec<usize>,
    pub in_a: bool,
    pub center_value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub n_starts: usize,
    pub seed: u64,
    pub starts: Vec<StartOutcome>,
    /// Indices (into `starts`) of converged in-A solutions.
    pub in_a_indices: Vec<usize>,
    /// Pairwise sup distances among the in-A solutions.
    pub pairwise_in_a: Vec<Vec<f64>>,
    pub max_in_a_distance: f64,
    /// Converged solutions grouped by sup distance below the agreement threshold.
    pub distinct_solutions: Vec<SolutionCluster>,
    pub any_converged: bool,
    pub agree: bool,
}

/// Agreement threshold for in-A solutions.
pub const PROBE_AGREEMENT: f64 = 1e-6;

/// Initial field for one probe start.
#[derive(Clone, Debug)]
pub enum ProbeStart {
    Zero,
    Constant(f64),
    /// Expression over x1…xn (chart), q1…q_{n+1} (sphere) and theta.
    Expression(Expr),
    Random(u64),
}

impl ProbeStart {
    pub fn label(&self) -> String {
        match self {
            ProbeStart::Zero => "zero".into(),
            ProbeStart::Constant(c) => format!("constant {c}"),
            ProbeStart::Expression(e) => format!("expression {}", e.source()),
            ProbeStart::Random(s) => format!("random seed {s}"),
        }
    }

    pub fn field(&self, grid: &Grid, domain: &ChartedDomain, spec: &CurvatureSpec) -> Result<ScalarField> {
        match self {
            ProbeStart::Zero => Ok(ScalarField::zeros(grid)),
            ProbeStart::Constant(c) => ScalarField::constant(grid, *c),
            ProbeStart::Expression(e) => {
                let chart = domain.chart();
                let values = grid
                    .nodes()
                    .iter()
                    .map(|node| {
                        let q = chart.to_sphere(&node.x);
                        let mut args = node.x.clone();
                        args.extend_from_slice(&q);
                        args.push(domain.polar_angle(&q));
                        e.eval(&args)
                    })
                    .collect();
                ScalarField::new(grid, values)
            }
            ProbeStart::Random(seed) => random_smooth_field(grid, domain, spec, *seed),
        }
    }
}

/// Variable names bound in probe seed expressions for dimension n.
pub fn seed_variables(n: usize) -> Vec<String> {
    let mut v: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    v.extend((1..=n + 1).map(|i| format!("q{i}")));
    v.push("theta".into());
    v
}

pub fn parse_seed_expression(source: &str, n: usize) -> Result<Expr> {
    let names = seed_variables(n);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Expr::parse(source, &refs)
}

/// Random trigonometric field times a bump vanishing on ∂Ω, clipped to
/// [log r1, log r2].
pub fn random_smooth_field(grid: &Grid, domain: &ChartedDomain, spec: &CurvatureSpec, seed: u64) -> Result<ScalarField> {
    let n = grid.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (spec.r1().ln(), spec.r2().ln());
    let modes: Vec<(Vec<f64>, f64, f64)> = (0..4)
        .map(|_| {
            let k: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            (k, rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(-1.0..1.0))
        })
        .collect();
    let depth = grid.nodes().iter().map(|nd| -domain.phi(&nd.x)).fold(0.0f64, f64::max).max(1e-300);
    let values = grid
        .nodes()
        .iter()
        .map(|nd| {
            let wave: f64 = modes
                .iter()
                .map(|(k, ph, a)| a * (k.iter().zip(&nd.x).map(|(ki, xi)| ki * xi).sum::<f64>() + ph).sin())
                .sum();
            let bump = (-domain.phi(&nd.x) / depth).clamp(0.0, 1.0);
            let amp = hi.max(-lo);
            (amp * wave * bump).clamp(lo, hi)
        })
        .collect();
    ScalarField::new(grid, values)
}

/// Default probe starts: zero, the supplied expressions, then alternating
/// constants in (log r1, log r2) and seeded random fields.
pub fn default_starts(n_starts: usize, spec: &CurvatureSpec, seeds: &[Expr], seed: u64) -> Vec<ProbeStart> {
    let mut out = Vec::with_capacity(n_starts);
    if n_starts == 0 {
        return out;
    }
    out.push(ProbeStart::Zero);
    for e in seeds {
        if out.len() < n_starts {
            out.push(ProbeStart::Expression(e.clone()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (spec.r1().ln(), spec.r2().ln());
    let mut k = 0u64;
    while out.len() < n_starts {
        if k % 2 == 0 && hi > lo {
            out.push(ProbeStart::Constant(rng.gen_range(lo..hi)));
        } else {
            out.push(ProbeStart::Random(seed.wrapping_add(k)));
        }
        k += 1;
    }
    out
}

pub fn uniqueness_probe(
    domain: &ChartedDomain,
    spec: &CurvatureSpec,
    config: &SolverConfig,
    n_starts: usize,
    seed: u64,
    seeds: &[Expr],
) -> Result<ProbeReport> {
    if n_starts == 0 {
        return Err(Error::Config("uniqueness probe needs at least one start".into()));
    }
    let grid = Grid::build(domain)?;
    let starts = default_starts(n_starts, spec, seeds, seed);
    let center = grid.nearest_node(&domain.center_chart());
    let results: Vec<Result<(StartOutcome, ScalarField)>> = starts
        .par_iter()
        .map(|s| {
            let init = s.field(&grid, domain, spec)?;
            let (u, rep) = solve_bump_on(&grid, domain, spec, config, Some(&init))?;
            let converged = rep.status == SolveStatus::Converged;
            Ok((
                StartOutcome {
                    label: s.label(),
                    status: rep.status,
                    converged,
                    in_a: converged && rep.c0_bounds.pass,
                    center_value: u.values()[center],
                    final_residual: rep.final_residual,
                    total_iterations: rep.iterations.iter().sum(),
                },
                u,
            ))
        })
        .collect();
    let mut outcomes = Vec::with_capacity(results.len());
    let mut fields = Vec::with_capacity(results.len());
    for r in results {
        let (o, f) = r?;
        outcomes.push(o);
        fields.push(f);
    }
    let in_a: Vec<usize> = (0..outcomes.len()).filter(|&i| outcomes[i].in_a).collect();
    let pairwise: Vec<Vec<f64>> = in_a.iter().map(|&i| in_a.iter().map(|&j| fields[i].sup_distance(&fields[j])).collect()).collect();
    let max_d = pairwise.iter().flatten().copied().fold(0.0, f64::max);
    let mut clusters: Vec<SolutionCluster> = Vec::new();
    for i in (0..outcomes.len()).filter(|&i| outcomes[i].converged) {
        match clusters.iter_mut().find(|c| fields[c.members[0]].sup_distance(&fields[i]) < PROBE_AGREEMENT) {
            Some(c) => {
                c.members.push(i);
                c.in_a |= outcomes[i].in_a;
            }
            None => clusters.push(SolutionCluster { members: vec![i], in_a: outcomes[i].in_a, center_value: outcomes[i].center_value }),
        }
    }
    let any_converged = outcomes.iter().any(|o| o.converged);
    Ok(ProbeReport {
        n_starts,
        seed,
        agree: any_converged && max_d < PROBE_AGREEMENT,
        starts: outcomes,
        in_a_indices: in_a,
        pairwise_in_a: pairwise,
        max_in_a_distance: max_d,
        distinct_solutions: clusters,
        any_converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::CurvatureFamily;

    fn setup(theta_deg: f64, h: f64) -> (ChartedDomain, Grid) {
        let d = ChartedDomain::south_cap(2, theta_deg.to_radians(), h).unwrap();
        let g = Grid::build(&d).unwrap();
        (d, g)
    }

    fn power(c: f64, gamma: f64) -> CurvatureSpec {
        CurvatureSpec::new(CurvatureFamily::RadialPower { c, gamma }, 0.5, 2.0).unwrap()
    }

    fn unit_constant() -> CurvatureSpec {
        CurvatureSpec::new(CurvatureFamily::Constant { c: 1.0 }, 1.0, 1.0).unwrap()
    }

    fn quick() -> SolverConfig {
        SolverConfig { hypothesis_density: SamplingDensity { directions: 200, radii: 20 }, ellipticity_samples: 100, ..Default::default() }
    }

    fn reflected_cap(d: &ChartedDomain, g: &Grid) -> ScalarField {
        let chart = d.chart().clone();
        ScalarField::from_fn(g, |x| (2.0 * d.polar_angle(&chart.to_sphere(x)).cos()).ln()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = |f: fn(&mut SolverConfig)| {
            let mut c = SolverConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.t_schedule = vec![0.5, 0.25, 1.0]));
        assert!(bad(|c| c.t_schedule = vec![0.5]));
        assert!(bad(|c| c.eps_schedule = vec![0.1, 0.2, 0.0]));
        assert!(bad(|c| c.eps_schedule = vec![0.1]));
        assert!(bad(|c| c.tol_residual = 0.0));
        assert!(bad(|c| c.max_iterations = 0));
        let mut ok = SolverConfig::default();
        ok.eps_schedule.clear();
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn residual_vanishes_on_trivial_solutions() {
        let (d, g) = setup(60.0, 0.05);
        let z = ScalarField::zeros(&g);
        assert!(residual(&z, &power(1.0, 1.0), &d, &g).unwrap().sup_norm() < 1e-14);
        assert!(residual(&z, &unit_constant(), &d, &g).unwrap().sup_norm() < 1e-14);
    }

    #[test]
    fn residual_of_reflected_cap_is_second_order() {
        let mut errs = Vec::new();
        for h in [0.04, 0.02] {
            let (d, g) = setup(60.0, h);
            let u = reflected_cap(&d, &g);
            let r = residual(&u, &unit_constant(), &d, &g).unwrap();
            let interior = g.nodes().iter().enumerate().filter(|(_, n)| n.kind == crate::geometry::NodeKind::Interior);
            errs.push(interior.map(|(i, _)| r.values()[i].abs()).fold(0.0, f64::max));
        }
        assert!(errs[1] < 0.05, "{errs:?}");
        assert!(errs[0] / errs[1] > 1.8, "{errs:?}");
    }

    #[test]
    fn picard_properties() {
        let (d, g) = setup(60.0, 0.05);
        let spec = power(0.8, 2.0);
        let w = ScalarField::from_fn(&g, |x| 0.1 * (0.34 - x[0] * x[0] - x[1] * x[1]) * (1.0 + x[0])).unwrap();
        let zero = picard_step(&w, 0.0, &spec, &d, &g).unwrap();
        assert!(zero.values().iter().all(|v| *v == 0.0));
        let one = picard_step(&w, 1.0, &spec, &d, &g).unwrap();
        let part = picard_step(&w, 0.3, &spec, &d, &g).unwrap();
        for (a, b) in one.values().iter().zip(part.values()) {
            assert!((0.3 * a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn jacobian_matches_directional_differences() {
        let (d, g) = setup(60.0, 0.05);
        let spec = power(1.25, 2.0);
        let t = 0.8;
        let u = ScalarField::from_fn(&g, |x| 0.3 * (0.34 - x[0] * x[0] - x[1] * x[1]) * (1.0 + 0.5 * x[1]).exp()).unwrap();
        let v = ScalarField::from_fn(&g, |x| (0.34 - x[0] * x[0] - x[1] * x[1]) * (2.0 * x[0]).cos()).unwrap();
        let j = jacobian(&u, t, &spec, &d, &g).unwrap();
        let jv = j.mul_vec(v.values());
        let f0 = stage_residual(&u, t, &spec, &d, &g).unwrap();
        let mut errs = Vec::new();
        for s in [1e-3, 1e-4] {
            let us = ScalarField::from_values(u.values().iter().zip(v.values()).map(|(a, b)| a + s * b).collect()).unwrap();
            let fs = stage_residual(&us, t, &spec, &d, &g).unwrap();
            let e = fs.iter().zip(&f0).zip(&jv).map(|((a, b), c)| ((a - b) / s - c).abs()).fold(0.0, f64::max);
            errs.push(e);
        }
        let scale = inf_norm(&jv);
        assert!(errs[1] < 1e-3 * scale, "{errs:?} {scale}");
        assert!(errs[0] / errs[1] > 5.0, "{errs:?}");
    }

    #[test]
    fn newton_step_is_identity_at_a_root() {
        let (d, g) = setup(60.0, 0.05);
        let z = ScalarField::zeros(&g);
        let n = newton_step(&z, 1.0, &power(1.0, 1.0), &d, &g, NewtonDamping::default()).unwrap();
        assert!(n.sup_norm() < 1e-15);
    }

    #[test]
    fn newton_converges_quadratically_to_reflected_cap() {
        let (d, g) = setup(60.0, 0.05);
        let spec = unit_constant();
        let chart = d.chart().clone();
        let init = ScalarField::from_fn(&g, |x| {
            let th = d.polar_angle(&chart.to_sphere(x));
            (2.0 * th.cos()).ln() + 0.05 * (1.0 - (th / 60f64.to_radians()).powi(2))
        })
        .unwrap();
        let mut u = init;
        let mut res = vec![inf_norm(&stage_residual(&u, 1.0, &spec, &d, &g).unwrap())];
        for _ in 0..4 {
            u = newton_step(&u, 1.0, &spec, &d, &g, NewtonDamping::default()).unwrap();
            res.push(inf_norm(&stage_residual(&u, 1.0, &spec, &d, &g).unwrap()));
        }
        assert!(res[4] < 1e-9, "{res:?}");
        for k in 0..3 {
            assert!(res[k + 1] / (res[k] * res[k]) < 10.0, "{res:?}");
        }
    }

    #[test]
    fn c0_bounds() {
        let (_, g) = setup(60.0, 0.05);
        let spec = power(1.0, 1.0);
        assert!(check_c0_bounds(&ScalarField::zeros(&g), &spec, 0.05).pass);
        let mut v = vec![0.0; g.len()];
        v[3] = 2f64.ln() + 1.0;
        let r = check_c0_bounds(&ScalarField::new(&g, v).unwrap(), &spec, 0.05);
        assert!(!r.pass && r.above_upper && !r.below_lower);
    }

    #[test]
    fn hypothesis_failure_skips_the_solve() {
        let d = ChartedDomain::south_cap(2, 1.0, 0.05).unwrap();
        let spec = CurvatureSpec::new(CurvatureFamily::Constant { c: 1.0 }, 0.5, 2.0).unwrap();
        let (_, rep) = solve_bump(&d, &spec, &quick()).unwrap();
        assert_eq!(rep.status, SolveStatus::HypothesisFail);
        assert!(rep.stages.is_empty());
    }

    #[test]
    fn nontrivial_solve_converges_within_bounds() {
        let d = ChartedDomain::south_cap(2, 60f64.to_radians(), 0.05).unwrap();
        let (u, rep) = solve_bump(&d, &power(0.8, 2.0), &quick()).unwrap();
        assert_eq!(rep.status, SolveStatus::Converged, "{:?}", rep.message);
        assert!(rep.final_residual <= 1e-9);
        assert!(rep.c0_bounds.pass);
        // c < 1 pulls the graph toward the sphere of radius c.
        assert!(u.min() < -0.05 && u.max() <= 1e-12);
        assert!(rep.ellipticity.unwrap().pass);
        // Newton iterations never increase the stage residual.
        for st in &rep.stages {
            for (k, kind) in st.steps.iter().enumerate() {
                if *kind == StepKind::Newton {
                    assert!(st.residual_history[k + 1] < st.residual_history[k]);
                }
            }
        }
    }

    #[test]
    fn solve_is_deterministic() {
        let d = ChartedDomain::south_cap(2, 60f64.to_radians(), 0.1).unwrap();
        let (a, ra) = solve_bump(&d, &power(1.25, 2.0), &quick()).unwrap();
        let (b, rb) = solve_bump(&d, &power(1.25, 2.0), &quick()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.residual_history, rb.residual_history);
    }

    #[test]
    fn max_iterations_one_reports_max_iter() {
        let d = ChartedDomain::south_cap(2, 60f64.to_radians(), 0.1).unwrap();
        let cfg = SolverConfig { max_iterations: 1, ..quick() };
        let (_, rep) = solve_bump(&d, &power(0.8, 2.0), &cfg).unwrap();
        assert_eq!(rep.status, SolveStatus::MaxIter);
    }

    #[test]
    fn probe_single_start_trivially_agrees() {
        let d = ChartedDomain::south_cap(2, 60f64.to_radians(), 0.1).unwrap();
        let r = uniqueness_probe(&d, &power(0.8, 2.0), &quick(), 1, 3, &[]).unwrap();
        assert!(r.agree && r.starts.len() == 1);
        assert!(uniqueness_probe(&d, &power(0.8, 2.0), &quick(), 0, 3, &[]).is_err());
    }

    #[test]
    fn random_fields_respect_bounds_and_boundary() {
        let (d, g) = setup(60.0, 0.05);
        let spec = power(0.8, 2.0);
        let f = random_smooth_field(&g, &d, &spec, 9).unwrap();
        assert!(f.min() >= 0.5f64.ln() && f.max() <= 2f64.ln());
        assert!(f.sup_norm() > 0.0);
        assert_eq!(f, random_smooth_field(&g, &d, &spec, 9).unwrap());
    }
}
