use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};

use radial_bump::app::SolutionFile;
use radial_bump::geometry::{ChartedDomain, Grid, ScalarField};
use radial_bump::oracle::{parse_obj, read_profile};

const FAST_DENSITY: &str = r#"{"directions": 2000, "radii": 200}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_radial-bump"))
}

fn config(theta_deg: f64, curvature: Value, h: f64, solver: Value) -> Value {
    let mut solver = solver;
    if solver.get("hypothesis_density").is_none() {
        solver["hypothesis_density"] = serde_json::from_str(FAST_DENSITY).unwrap();
    }
    if solver.get("ellipticity_samples").is_none() {
        solver["ellipticity_samples"] = json!(2000);
    }
    json!({
        "problem": {
            "dimension": 2,
            "domain": {"type": "cap", "theta0_deg": theta_deg},
            "pole": "auto_antipodal",
            "curvature": curvature,
            "grid_spacing": h
        },
        "solver": solver
    })
}

fn power(c: f64, gamma: f64) -> Value {
    json!({"family": "radial_power", "c": c, "gamma": gamma, "r1": 0.5, "r2": 2.0})
}

fn unit_constant() -> Value {
    json!({"family": "constant", "c": 1.0, "r1": 1.0, "r2": 1.0})
}

struct Run {
    code: i32,
    report: Value,
}

fn run(dir: &Path, name: &str, cfg: &Value, args: &[&str]) -> Run {
    let cfg_path = dir.join(format!("{name}.json"));
    std::fs::write(&cfg_path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    run_path(dir, name, &cfg_path, args)
}

fn run_path(dir: &Path, name: &str, cfg_path: &Path, args: &[&str]) -> Run {
    let out = dir.join(format!("{name}.report.json"));
    let _ = std::fs::remove_file(&out);
    let status = bin().args(args).arg("--config").arg(cfg_path).arg("--out").arg(&out).status().unwrap();
    let report = std::fs::read_to_string(&out).map(|t| serde_json::from_str(&t).unwrap()).unwrap_or(Value::Null);
    Run { code: status.code().unwrap(), report }
}

fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.retain(|k, _| k != "timing");
            m.values_mut().for_each(strip_timing);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(dir.path(), "v1", &config(75.0, power(1.0, 1.0), 0.05, json!({})), &["validate"]);
    assert_eq!(r.code, 0);
    assert_eq!(r.report["hypotheses"]["weak"]["pass"], true);
    assert_eq!(r.report["hypotheses"]["strict"]["pass"], false);
    assert!(r.report["config"]["solver"]["t_schedule"].is_array());

    let constant = json!({"family": "constant", "c": 1.0, "r1": 0.5, "r2": 2.0});
    assert_eq!(run(dir.path(), "v2", &config(60.0, constant, 0.05, json!({})), &["validate"]).code, 1);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let r = run_path(dir.path(), "v3", &bad, &["validate"]);
    assert_eq!(r.code, 2);
    assert!(r.report["error"].is_string());
}

#[test]
fn solve_examples() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(dir.path(), "s1", &config(60.0, power(1.0, 1.0), 0.05, json!({})), &["solve"]);
    assert_eq!(r.code, 0);
    assert!(r.report["sup_norm"].as_f64().unwrap() < 1e-8);

    let h = 0.05;
    let r = run(dir.path(), "s2", &config(60.0, power(0.8, 2.0), h, json!({})), &["solve"]);
    assert_eq!(r.code, 0, "{}", r.report);
    let mismatch = r.report["curvature_match"]["max_error"].as_f64().unwrap();
    assert!(mismatch <= 10.0 * h * h);
    assert_eq!(r.report["solve"]["status"], "CONVERGED");
    assert!(r.report["reference"]["max_error"].as_f64().unwrap() <= 5.0 * h * h);

    let r = run(dir.path(), "s3", &config(60.0, power(0.8, 2.0), h, json!({"max_iterations": 1})), &["solve"]);
    assert_eq!(r.code, 3);

    let constant = json!({"family": "constant", "c": 1.0, "r1": 0.5, "r2": 2.0});
    assert_eq!(run(dir.path(), "s4", &config(60.0, constant, h, json!({})), &["solve"]).code, 1);
}

#[test]
fn solve_writes_outputs_that_verify() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(60.0, power(1.25, 2.0), 0.05, json!({}));
    let sol = dir.path().join("u.txt");
    let mesh = dir.path().join("surface.obj");
    let prof = dir.path().join("profile.txt");
    cfg["outputs"] = json!({"solution_path": sol, "mesh_path": mesh, "profile_path": prof});
    let r = run(dir.path(), "o", &cfg, &["solve"]);
    assert_eq!(r.code, 0, "{}", r.report);

    let m = parse_obj(&std::fs::read_to_string(&mesh).unwrap()).unwrap();
    assert!(!m.faces.is_empty());
    assert_eq!(m.normals.len(), m.vertices.len());
    let p = read_profile(&std::fs::read_to_string(&prof).unwrap()).unwrap();
    assert_eq!(p.len(), 201);
    assert_eq!(p.last().unwrap().1.abs() < 1e-9, true);

    let v = run(dir.path(), "o-verify", &cfg, &["verify"]);
    assert_eq!(v.code, 0, "{}", v.report);
    assert!(v.report["residual"]["sup"].as_f64().unwrap() <= 1e-9);

    // Same file against a different grid.
    let mut other = cfg.clone();
    other["problem"]["grid_spacing"] = json!(0.04);
    assert_eq!(run(dir.path(), "o-mismatch", &other, &["verify"]).code, 2);
}

fn stored(dir: &Path, name: &str, theta_deg: f64, h: f64, f: impl Fn(&ChartedDomain, &[f64]) -> f64) -> PathBuf {
    let d = ChartedDomain::south_cap(2, theta_deg.to_radians(), h).unwrap();
    let g = Grid::build(&d).unwrap();
    let u = ScalarField::new(&g, g.nodes().iter().map(|n| f(&d, &n.x)).collect()).unwrap();
    let p = dir.join(name);
    SolutionFile::from_field(&g, &u).write(&p).unwrap();
    p
}

#[test]
fn verify_examples() {
    let dir = tempfile::tempdir().unwrap();
    let h = 0.05;
    let zero = stored(dir.path(), "zero.txt", 60.0, h, |_, _| 0.0);
    let cfg = config(60.0, power(1.0, 1.0), h, json!({}));
    let r = run(dir.path(), "z", &cfg, &["verify", "--solution", zero.to_str().unwrap()]);
    assert_eq!(r.code, 0);

    let cap = stored(dir.path(), "cap.txt", 60.0, h, |d, x| (2.0 * d.polar_angle(&d.chart().to_sphere(x)).cos()).ln());
    let r = run(dir.path(), "cap", &config(60.0, unit_constant(), h, json!({})), &["verify", "--solution", cap.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.report);
    assert!(r.report["residual"]["sup_interior"].as_f64().unwrap() < 10.0 * h * h);
    assert_eq!(r.report["c0_bounds"]["pass"], false);

    let garbage = stored(dir.path(), "garbage.txt", 60.0, h, |_, x| (37.0 * x[0]).sin() * (53.0 * x[1]).cos() * 0.3);
    let r = run(dir.path(), "g", &cfg, &["verify", "--solution", garbage.to_str().unwrap()]);
    assert_eq!(r.code, 4);

    std::fs::write(dir.path().join("broken.txt"), "not a solution file\n").unwrap();
    let r = run(dir.path(), "b", &cfg, &["verify", "--solution", dir.path().join("broken.txt").to_str().unwrap()]);
    assert_eq!(r.code, 2);
}

#[test]
fn sweep_grid_spacing_converges_against_ode_reference() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(60.0, power(1.25, 2.0), 0.05, json!({}));
    let r = run(dir.path(), "sw", &cfg, &["sweep", "--param", "grid_spacing", "--values", "0.1,0.05,0.025"]);
    assert_eq!(r.code, 0, "{}", r.report);
    let orders = r.report["reference_error_orders"].as_array().unwrap();
    assert_eq!(orders.len(), 2);
    for o in orders {
        assert!(o["order"].as_f64().unwrap() >= 1.8, "{o}");
    }
}

#[test]
fn sweep_single_value_matches_solve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(60.0, power(0.8, 2.0), 0.05, json!({}));
    let s = run(dir.path(), "one-solve", &cfg, &["solve"]);
    let w = run(dir.path(), "one-sweep", &cfg, &["sweep", "--param", "grid_spacing", "--values", "0.05"]);
    assert_eq!(s.code, w.code);
    let run0 = &w.report["runs"][0];
    assert_eq!(run0["final_residual"], s.report["solve"]["final_residual"]);
    assert_eq!(run0["curvature_mismatch"], s.report["curvature_match"]["max_error"]);
}

#[test]
fn sweep_epsilon_distances_shrink() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(60.0, power(1.25, 2.0), 0.05, json!({}));
    let r = run(dir.path(), "eps", &cfg, &["sweep", "--param", "epsilon", "--values", "0.1,0.01,0.001"]);
    assert_eq!(r.code, 0, "{}", r.report);
    assert_eq!(r.report["epsilon_distances_monotone"], true);
    let d: Vec<f64> = r.report["runs"].as_array().unwrap().iter().map(|x| x["distance_to_epsilon_zero"].as_f64().unwrap()).collect();
    assert!(d[0] > d[1] && d[1] > d[2] && d[2] > 0.0, "{d:?}");
}

#[test]
fn sweep_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(60.0, power(0.8, 2.0), 0.05, json!({}));
    assert_eq!(run(dir.path(), "f1", &cfg, &["sweep", "--param", "bogus", "--values", "1"]).code, 2);
    assert_eq!(run(dir.path(), "f2", &cfg, &["sweep", "--param", "grid_spacing", "--values", "x"]).code, 2);
    assert_eq!(run(dir.path(), "f3", &cfg, &["sweep", "--values", "0.1"]).code, 2);
    // One child cannot converge: partial results are kept and the exit is nonzero.
    let capped = config(60.0, power(0.8, 2.0), 0.05, json!({"max_iterations": 1}));
    let r = run(dir.path(), "f4", &capped, &["sweep", "--param", "c", "--values", "1.0,0.8"]);
    assert_eq!(r.code, 3);
    assert_eq!(r.report["runs"][0]["exit_code"], 0);
    assert_eq!(r.report["runs"][1]["exit_code"], 3);
}

#[test]
fn probe_examples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(60.0, power(1.0, 2.0), 0.05, json!({}));
    let r = run(dir.path(), "p1", &cfg, &["probe", "--starts", "5", "--seed", "7"]);
    assert_eq!(r.code, 0, "{}", r.report);
    assert_eq!(r.report["summary"]["distinct_solutions"], 1);
    assert_eq!(r.report["config"]["seed"], 7);

    let mut c = config(60.0, unit_constant(), 0.05, json!({"scheme": "NEWTON", "t_schedule": [1.0], "eps_schedule": []}));
    c["probe"] = json!({"seed_fields": ["log(2*cos(theta)) + 0.05*(1 - (theta/1.0471975511965976)^2)"]});
    let r = run(dir.path(), "p2", &c, &["probe", "--starts", "2"]);
    assert_eq!(r.code, 0, "{}", r.report);
    assert_eq!(r.report["summary"]["distinct_solutions"], 2);
    assert_eq!(r.report["summary"]["in_a_solutions"], 1);
    assert_eq!(r.report["summary"]["outside_a_solutions"], 1);

    assert_eq!(run(dir.path(), "p3", &cfg, &["probe", "--starts", "0"]).code, 2);
}

#[test]
fn reports_are_deterministic_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(60.0, power(1.25, 2.0), 0.1, json!({}));
    let mut a = run(dir.path(), "d1", &cfg, &["solve"]).report;
    let mut b = run(dir.path(), "d2", &cfg, &["solve"]).report;
    strip_timing(&mut a);
    strip_timing(&mut b);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn thread_cap_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("t.json");
    std::fs::write(&cfg_path, config(60.0, power(1.0, 1.0), 0.1, json!({})).to_string()).unwrap();
    let ok = bin().env("RADIAL_BUMP_THREADS", "1").args(["solve", "--config"]).arg(&cfg_path).arg("--out").arg(dir.path().join("t.out")).status().unwrap();
    assert_eq!(ok.code(), Some(0));
    let bad = bin().env("RADIAL_BUMP_THREADS", "zero").args(["solve", "--config"]).arg(&cfg_path).status().unwrap();
    assert_eq!(bad.code(), Some(2));
    let unknown = bin().args(["explode", "--config"]).arg(&cfg_path).status().unwrap();
    assert_eq!(unknown.code(), Some(2));
    let missing = bin().args(["solve", "--config"]).arg(dir.path().join("absent.json")).arg("--out").arg(dir.path().join("m.out")).status().unwrap();
    assert_eq!(missing.code(), Some(2));
}
