use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use super::config::RunConfig;
use super::exit;
use super::solution::SolutionFile;
use crate::curvature::{CurvatureSpec, HypothesisMode};
use crate::error::Error;
use crate::geometry::{ChartedDomain, Grid, NodeKind, ScalarField};
use crate::nonlinear::{check_c0_bounds, residual, solve_bump_on, uniqueness_probe, SolveReport, SolveStatus};
use crate::oracle::{curvature_match, write_profile, CurvatureMatch, RadialReference, SurfaceMesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Validate,
    Solve,
    Verify,
    Sweep,
    Probe,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Solve => "solve",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
            Command::Probe => "probe",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub param: Option<String>,
    pub values: Option<String>,
    pub starts: Option<usize>,
    pub seed: Option<u64>,
    pub solution: Option<PathBuf>,
}

/// Exit code and JSON report of one command.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub code: i32,
    pub report: Value,
}

impl Outcome {
    fn failure(command: Command, code: i32, err: impl std::fmt::Display) -> Outcome {
        Outcome { code, report: json!({ "command": command.name(), "exit_code": code, "error": err.to_string() }) }
    }
}

/// Runs one invocation, writes its report, and returns the exit code.
pub fn run(inv: &Invocation) -> i32 {
    let start = Instant::now();
    let loaded = RunConfig::load(&inv.config);
    let report_path = inv.out.clone().or_else(|| loaded.as_ref().ok().and_then(|c| c.outputs.report_path.clone()));
    let mut outcome = match loaded {
        Err(e) => Outcome::failure(inv.command, exit::USAGE, format!("config {}: {e}", inv.config.display())),
        Ok(cfg) => dispatch(inv, &cfg),
    };
    if let Value::Object(m) = &mut outcome.report {
        m.insert("timing".into(), json!({ "total_seconds": start.elapsed().as_secs_f64() }));
    }
    let text = serde_json::to_string_pretty(&outcome.report).expect("report serializes") + "\n";
    match report_path {
        Some(p) => {
            if let Err(e) = crate::io::write_atomic(&p, text.as_bytes()) {
                eprintln!("radial-bump: cannot write report {}: {e}", p.display());
                return exit::USAGE;
            }
        }
        None => print!("{text}"),
    }
    if let Some(err) = outcome.report.get("error").and_then(Value::as_str) {
        eprintln!("radial-bump: {err}");
    }
    outcome.code
}

fn dispatch(inv: &Invocation, cfg: &RunConfig) -> Outcome {
    match inv.command {
        Command::Validate => cmd_validate(cfg),
        Command::Solve => cmd_solve(cfg),
        Command::Verify => match inv.solution.clone().or_else(|| cfg.outputs.solution_path.clone()) {
            Some(p) => cmd_verify(cfg, &p),
            None => Outcome::failure(Command::Verify, exit::USAGE, "verify needs --solution or outputs.solution_path"),
        },
        Command::Sweep => {
            let Some(param) = inv.param.as_deref() else {
                return Outcome::failure(Command::Sweep, exit::USAGE, "sweep needs --param");
            };
            match parse_values(inv.values.as_deref().unwrap_or("")) {
                Ok(v) => cmd_sweep(cfg, param, &v),
                Err(e) => Outcome::failure(Command::Sweep, exit::USAGE, e),
            }
        }
        Command::Probe => {
            let mut c = cfg.clone();
            if let Some(s) = inv.seed {
                c.seed = s;
            }
            cmd_probe(&c, inv.starts.unwrap_or(cfg.probe.n_starts))
        }
    }
}

/// Parses a comma-separated list of numbers.
pub fn parse_values(csv: &str) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = csv
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("bad value {s:?} in --values")))
        .collect::<Result<_, _>>()?;
    if v.is_empty() {
        return Err("--values needs at least one number".into());
    }
    Ok(v)
}

struct Setup {
    domain: ChartedDomain,
    spec: CurvatureSpec,
    grid: Grid,
}

fn setup(cfg: &RunConfig) -> Result<Setup, Error> {
    let domain = cfg.domain()?;
    let spec = cfg.curvature()?;
    let grid = Grid::build(&domain)?;
    Ok(Setup { domain, spec, grid })
}

fn grid_summary(grid: &Grid) -> Value {
    json!({ "diagnostics": grid.diagnostics(), "fingerprint": grid.fingerprint(), "spacing": grid.spacing() })
}

pub fn cmd_validate(cfg: &RunConfig) -> Outcome {
    let c = Command::Validate;
    let s = match setup(cfg) {
        Ok(s) => s,
        Err(e) => return Outcome::failure(c, exit::USAGE, e),
    };
    let density = cfg.hypothesis_density();
    let weak = s.spec.check_hypotheses(&s.domain, HypothesisMode::Weak, density);
    let strict = s.spec.check_hypotheses(&s.domain, HypothesisMode::Strict, density);
    let tw = s.spec.tw_constants(&s.domain, density);
    let code = if weak.pass { exit::OK } else { exit::HYPOTHESIS_FAIL };
    Outcome {
        code,
        report: json!({
            "command": c.name(),
            "exit_code": code,
            "config": cfg.resolved(),
            "hypotheses": { "weak": weak, "strict": strict },
            "tw_constants": tw,
            "grid": grid_summary(&s.grid),
        }),
    }
}

/// Sup difference between the PDE solution and the radial ODE reference.
#[derive(Clone, Debug, Serialize)]
pub struct ReferenceComparison {
    pub center_value: f64,
    pub shooting_roots: Vec<f64>,
    pub max_error: f64,
    pub collocation_degree: usize,
    pub collocation_agreement: f64,
}

fn node_angles(domain: &ChartedDomain, grid: &Grid) -> Vec<f64> {
    grid.nodes().iter().map(|n| domain.polar_angle(&domain.chart().to_sphere(&n.x))).collect()
}

fn reference(cfg: &RunConfig, s: &Setup, u: &ScalarField) -> Option<Result<(ReferenceComparison, RadialReference), Error>> {
    let theta0 = cfg.cap_radius()?;
    if !(cfg.verification.ode_reference && s.spec.is_radial()) {
        return None;
    }
    Some((|| {
        let r = RadialReference::new(&s.spec, s.grid.dim(), theta0)?;
        let refv = r.values(&node_angles(&s.domain, &s.grid))?;
        let max_error = u.values().iter().zip(&refv).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let degree = cfg.verification.collocation_degree;
        let col = r.collocation(degree)?;
        let shoot = r.values(&col.theta)?;
        let agreement = col.values.iter().zip(&shoot).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Ok((
            ReferenceComparison {
                center_value: r.center,
                shooting_roots: r.roots.clone(),
                max_error,
                collocation_degree: degree,
                collocation_agreement: agreement,
            },
            r,
        ))
    })())
}

struct Solved {
    setup: Setup,
    u: ScalarField,
    report: SolveReport,
    curvature: Option<CurvatureMatch>,
    reference: Option<Result<(ReferenceComparison, RadialReference), Error>>,
    code: i32,
}

fn solve_core(cfg: &RunConfig) -> Result<Solved, Outcome> {
    let c = Command::Solve;
    let s = setup(cfg).map_err(|e| Outcome::failure(c, exit::USAGE, e))?;
    let (u, report) = solve_bump_on(&s.grid, &s.domain, &s.spec, &cfg.solver, None)
        .map_err(|e| Outcome::failure(c, exit::NO_CONVERGENCE, format!("solve failed: {e}")))?;
    if report.status == SolveStatus::HypothesisFail {
        return Ok(Solved { setup: s, u, report, curvature: None, reference: None, code: exit::HYPOTHESIS_FAIL });
    }
    let curvature = curvature_match(&u, &s.grid, &s.domain, &s.spec, cfg.verification.curvature_constant).ok();
    let reference = reference(cfg, &s, &u);
    let code = if report.status != SolveStatus::Converged {
        exit::NO_CONVERGENCE
    } else if curvature.as_ref().is_some_and(|m| m.pass) && report.c0_bounds.pass {
        exit::OK
    } else {
        exit::VERIFICATION_FAIL
    };
    Ok(Solved { setup: s, u, report, curvature, reference, code })
}

fn reference_json(r: &Option<Result<(ReferenceComparison, RadialReference), Error>>) -> Value {
    match r {
        None => Value::Null,
        Some(Ok((c, _))) => json!(c),
        Some(Err(e)) => json!({ "error": e.to_string() }),
    }
}

pub fn cmd_solve(cfg: &RunConfig) -> Outcome {
    let c = Command::Solve;
    let solved = match solve_core(cfg) {
        Ok(s) => s,
        Err(o) => return o,
    };
    let mut code = solved.code;
    let mut written = serde_json::Map::new();
    let mut notes: Vec<String> = Vec::new();
    if solved.report.status != SolveStatus::HypothesisFail {
        let s = &solved.setup;
        if let Some(p) = &cfg.outputs.solution_path {
            match SolutionFile::from_field(&s.grid, &solved.u).write(p) {
                Ok(()) => drop(written.insert("solution".into(), json!(p))),
                Err(e) => return Outcome::failure(c, exit::USAGE, format!("writing {}: {e}", p.display())),
            }
        }
        if let Some(p) = &cfg.outputs.mesh_path {
            if s.grid.dim() == 2 {
                let res = SurfaceMesh::build(&solved.u, &s.grid, &s.domain).and_then(|m| m.export(p));
                match res {
                    Ok(()) => drop(written.insert("mesh".into(), json!(p))),
                    Err(e) => return Outcome::failure(c, exit::USAGE, format!("writing {}: {e}", p.display())),
                }
            } else {
                notes.push(format!("mesh export needs dimension 2; skipped for n = {}", s.grid.dim()));
            }
        }
        if let Some(p) = &cfg.outputs.profile_path {
            match &solved.reference {
                Some(Ok((_, r))) => {
                    let m = cfg.verification.profile_samples.max(2);
                    let th: Vec<f64> = (0..m).map(|k| r.theta0() * k as f64 / (m - 1) as f64).collect();
                    let res = r.values(&th).and_then(|v| write_profile(p, &th.into_iter().zip(v).collect::<Vec<_>>()));
                    match res {
                        Ok(()) => drop(written.insert("profile".into(), json!(p))),
                        Err(e) => return Outcome::failure(c, exit::USAGE, format!("writing {}: {e}", p.display())),
                    }
                }
                _ => notes.push("profile needs a radial curvature on a cap; skipped".into()),
            }
        }
    }
    if solved.report.status == SolveStatus::HypothesisFail {
        code = exit::HYPOTHESIS_FAIL;
    }
    Outcome {
        code,
        report: json!({
            "command": c.name(),
            "exit_code": code,
            "config": cfg.resolved(),
            "grid": grid_summary(&solved.setup.grid),
            "solve": solved.report,
            "sup_norm": solved.u.sup_norm(),
            "curvature_match": solved.curvature,
            "c0_bounds": solved.report.c0_bounds,
            "reference": reference_json(&solved.reference),
            "outputs": written,
            "notes": notes,
        }),
    }
}

pub fn cmd_verify(cfg: &RunConfig, solution: &Path) -> Outcome {
    let c = Command::Verify;
    let s = match setup(cfg) {
        Ok(s) => s,
        Err(e) => return Outcome::failure(c, exit::USAGE, e),
    };
    let file = match SolutionFile::read(solution).and_then(|f| f.check_grid(&s.grid).map(|_| f)) {
        Ok(f) => f,
        Err(e) => return Outcome::failure(c, exit::USAGE, format!("{}: {e}", solution.display())),
    };
    let u = match ScalarField::new(&s.grid, file.values) {
        Ok(u) => u,
        Err(e) => return Outcome::failure(c, exit::VERIFICATION_FAIL, format!("stored field rejected: {e}")),
    };
    let res = match residual(&u, &s.spec, &s.domain, &s.grid) {
        Ok(r) => r,
        Err(e) => return Outcome::failure(c, exit::VERIFICATION_FAIL, format!("residual failed: {e}")),
    };
    let sup_over = |kind: NodeKind| {
        s.grid.nodes().iter().zip(res.values()).filter(|(n, _)| n.kind == kind).map(|(_, r)| r.abs()).fold(0.0, f64::max)
    };
    let cm = match curvature_match(&u, &s.grid, &s.domain, &s.spec, cfg.verification.curvature_constant) {
        Ok(m) => m,
        Err(e) => return Outcome::failure(c, exit::VERIFICATION_FAIL, format!("curvature check failed: {e}")),
    };
    let c0 = check_c0_bounds(&u, &s.spec, s.grid.spacing());
    let code = if cm.pass { exit::OK } else { exit::VERIFICATION_FAIL };
    Outcome {
        code,
        report: json!({
            "command": c.name(),
            "exit_code": code,
            "config": cfg.resolved(),
            "solution": solution,
            "grid": grid_summary(&s.grid),
            "residual": {
                "sup": res.sup_norm(),
                "sup_interior": sup_over(NodeKind::Interior),
                "sup_irregular": sup_over(NodeKind::Irregular),
            },
            "curvature_match": cm,
            "c0_bounds": c0,
            "reference": reference_json(&reference(cfg, &s, &u)),
        }),
    }
}

pub fn cmd_sweep(cfg: &RunConfig, param: &str, values: &[f64]) -> Outcome {
    let c = Command::Sweep;
    if values.is_empty() {
        return Outcome::failure(c, exit::USAGE, "sweep needs at least one value");
    }
    let mut configs = Vec::with_capacity(values.len());
    for &v in values {
        let mut child = cfg.clone();
        child.outputs = Default::default();
        if let Err(e) = child.set_parameter(param, v) {
            return Outcome::failure(c, exit::USAGE, e);
        }
        configs.push(child);
    }
    let is_eps = matches!(param.strip_prefix("curvature.").unwrap_or(param), "epsilon");
    let baseline = if is_eps {
        let mut b = cfg.clone();
        b.outputs = Default::default();
        b.problem.curvature.epsilon = 0.0;
        solve_core(&b).ok().filter(|s| s.code == exit::OK).map(|s| s.u)
    } else {
        None
    };
    let mut runs = Vec::new();
    let mut code = exit::OK;
    let mut errors: Vec<Option<f64>> = Vec::new();
    let mut mismatches: Vec<Option<f64>> = Vec::new();
    for (v, child) in values.iter().zip(&configs) {
        match solve_core(child) {
            Ok(s) => {
                code = code.max(s.code);
                let ref_err = match &s.reference {
                    Some(Ok((r, _))) => Some(r.max_error),
                    _ => None,
                };
                let mism = s.curvature.as_ref().map(|m| m.max_error);
                errors.push(ref_err);
                mismatches.push(mism);
                let center = s.setup.grid.nearest_node(&s.setup.domain.center_chart());
                let dist = baseline.as_ref().filter(|b| b.len() == s.u.len()).map(|b| b.sup_distance(&s.u));
                runs.push(json!({
                    "value": v,
                    "exit_code": s.code,
                    "status": s.report.status,
                    "unknowns": s.setup.grid.len(),
                    "iterations": s.report.iterations,
                    "final_residual": s.report.final_residual,
                    "center_value": s.u.values()[center],
                    "reference_error": ref_err,
                    "curvature_mismatch": mism,
                    "c0_pass": s.report.c0_bounds.pass,
                    "distance_to_epsilon_zero": dist,
                }));
            }
            Err(o) => {
                code = code.max(o.code);
                errors.push(None);
                mismatches.push(None);
                runs.push(json!({ "value": v, "exit_code": o.code, "error": o.report.get("error") }));
            }
        }
    }
    let is_h = matches!(param, "grid_spacing" | "h");
    let orders = |e: &[Option<f64>]| -> Vec<Value> {
        (1..values.len())
            .map(|k| match (e[k - 1], e[k]) {
                (Some(a), Some(b)) if a > 0.0 && b > 0.0 => {
                    let log2 = (a / b).log2();
                    let order = if is_h { Some((a / b).ln() / (values[k - 1] / values[k]).ln()) } else { None };
                    json!({ "from": values[k - 1], "to": values[k], "log2_ratio": log2, "order": order })
                }
                _ => json!({ "from": values[k - 1], "to": values[k], "log2_ratio": null, "order": null }),
            })
            .collect()
    };
    let distances: Vec<Option<f64>> = runs.iter().map(|r| r["distance_to_epsilon_zero"].as_f64()).collect();
    let monotone = if is_eps && distances.iter().all(Option::is_some) {
        let d: Vec<f64> = distances.into_iter().flatten().collect();
        // Values are visited in the given order; distances should shrink as ε does.
        let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(d).collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        Some(pairs.windows(2).all(|w| w[1].1 <= w[0].1))
    } else {
        None
    };
    Outcome {
        code,
        report: json!({
            "command": c.name(),
            "exit_code": code,
            "config": cfg.resolved(),
            "parameter": param,
            "values": values,
            "runs": runs,
            "reference_error_orders": orders(&errors),
            "curvature_mismatch_orders": orders(&mismatches),
            "epsilon_distances_monotone": monotone,
        }),
    }
}

pub fn cmd_probe(cfg: &RunConfig, n_starts: usize) -> Outcome {
    let c = Command::Probe;
    if n_starts == 0 {
        return Outcome::failure(c, exit::USAGE, "probe needs at least one start");
    }
    let seeds = match cfg.seed_expressions() {
        Ok(s) => s,
        Err(e) => return Outcome::failure(c, exit::USAGE, e),
    };
    let domain = match cfg.domain() {
        Ok(d) => d,
        Err(e) => return Outcome::failure(c, exit::USAGE, e),
    };
    let spec = match cfg.curvature() {
        Ok(s) => s,
        Err(e) => return Outcome::failure(c, exit::USAGE, e),
    };
    if let Err(e) = Grid::build(&domain) {
        return Outcome::failure(c, exit::USAGE, e);
    }
    let probe = match uniqueness_probe(&domain, &spec, &cfg.solver, n_starts, cfg.seed, &seeds) {
        Ok(p) => p,
        Err(e) => return Outcome::failure(c, exit::NO_CONVERGENCE, e),
    };
    let code = if !probe.any_converged {
        exit::NO_CONVERGENCE
    } else if probe.agree {
        exit::OK
    } else {
        exit::VERIFICATION_FAIL
    };
    let centers: Vec<f64> = probe.distinct_solutions.iter().map(|s| s.center_value).collect();
    let gap = if centers.len() > 1 {
        centers.iter().copied().fold(f64::NEG_INFINITY, f64::max) - centers.iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        0.0
    };
    let mut resolved = cfg.resolved();
    resolved.probe.n_starts = n_starts;
    Outcome {
        code,
        report: json!({
            "command": c.name(),
            "exit_code": code,
            "config": resolved,
            "summary": {
                "distinct_solutions": probe.distinct_solutions.len(),
                "in_a_solutions": probe.distinct_solutions.iter().filter(|s| s.in_a).count(),
                "outside_a_solutions": probe.distinct_solutions.iter().filter(|s| !s.in_a).count(),
                "center_value_gap": gap,
            },
            "probe": probe,
        }),
    }
}
