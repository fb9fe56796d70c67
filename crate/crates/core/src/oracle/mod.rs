//! Independent checks on a computed solution: discrete mean curvature of the
//! embedded graph, triangle mesh export, and the radial ODE reference.

mod mesh;
mod radial;

pub use mesh::{parse_obj, SurfaceMesh, MIN_TRIANGLE_AREA};
pub use radial::{cheb_lobatto, read_profile, write_profile, Collocation, RadialReference, ShootingOptions};

use serde::Serialize;

use crate::curvature::CurvatureSpec;
use crate::error::{Error, Result};
use crate::geometry::{ChartedDomain, Grid, ScalarField, Slot};

/// Embedding X = e^u·σ(x) of a chart point.
pub fn embed(domain: &ChartedDomain, x: &[f64], u: f64) -> Vec<f64> {
    domain.chart().to_sphere(x).into_iter().map(|q| u.exp() * q).collect()
}

fn slot_value(u: &ScalarField, slot: Slot) -> f64 {
    match slot {
        Slot::Unknown(i) => u.values()[i],
        Slot::Boundary(_) => 0.0,
    }
}

/// Mean curvature of the discrete surface at node `i`, from centered
/// differences of the embedding over the full 3ⁿ block. None when the
/// block is incomplete or degenerate.
pub fn mean_curvature_at(u: &ScalarField, grid: &Grid, domain: &ChartedDomain, i: usize) -> Option<f64> {
    if !grid.has_full_block(i) {
        return None;
    }
    let n = grid.dim();
    let h = grid.spacing();
    let base = &grid.node(i).index;
    let point = |off: &[i64]| -> Option<Vec<f64>> {
        let idx: Vec<i64> = base.iter().zip(off).map(|(a, b)| a + b).collect();
        let slot = grid.slot(&idx)?;
        Some(embed(domain, grid.position(slot), slot_value(u, slot)))
    };
    let zero = vec![0i64; n];
    let x0 = point(&zero)?;
    let m = n + 1;
    let mut first = vec![vec![0.0; m]; n];
    let mut second = vec![vec![vec![0.0; m]; n]; n];
    for k in 0..n {
        let mut e = zero.clone();
        e[k] = 1;
        let p = point(&e)?;
        e[k] = -1;
        let q = point(&e)?;
        for c in 0..m {
            first[k][c] = (p[c] - q[c]) / (2.0 * h);
            second[k][k][c] = (p[c] - 2.0 * x0[c] + q[c]) / (h * h);
        }
        for l in k + 1..n {
            let mut corners = [0.0; 4].map(|_| Vec::new());
            for (s, (a, b)) in [(1, 1), (1, -1), (-1, 1), (-1, -1)].into_iter().enumerate() {
                let mut e = zero.clone();
                e[k] = a;
                e[l] = b;
                corners[s] = point(&e)?;
            }
            for c in 0..m {
                let v = (corners[0][c] - corners[1][c] - corners[2][c] + corners[3][c]) / (4.0 * h * h);
                second[k][l][c] = v;
                second[l][k][c] = v;
            }
        }
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let g = nalgebra::DMatrix::from_fn(n, n, |a, b| dot(&first[a], &first[b]));
    let ginv = g.try_inverse()?;
    // Normal: the position vector with its tangential part removed.
    let proj: Vec<f64> = (0..n).map(|k| dot(&first[k], &x0)).collect();
    let mut normal = x0.clone();
    for a in 0..n {
        for b in 0..n {
            let w = ginv[(a, b)] * proj[b];
            for c in 0..m {
                normal[c] -= w * first[a][c];
            }
        }
    }
    let len = dot(&normal, &normal).sqrt();
    if !(len > 1e-12 * dot(&x0, &x0).sqrt()) {
        return None;
    }
    let sign = if dot(&normal, &x0) > 0.0 { -1.0 } else { 1.0 };
    for c in normal.iter_mut() {
        *c *= sign / len;
    }
    let mut trace = 0.0;
    for a in 0..n {
        for b in 0..n {
            trace += ginv[(a, b)] * dot(&second[a][b], &normal);
        }
    }
    Some(trace / n as f64)
}

#[derive(Clone, Debug, Serialize)]
pub struct CurvatureMatch {
    pub nodes_checked: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub worst_node: Option<usize>,
    pub pass: bool,
}

/// Compares the discrete mean curvature with H(X) at every node with a full
/// block; passes when the worst error is at most `constant·h²`.
pub fn curvature_match(
    u: &ScalarField,
    grid: &Grid,
    domain: &ChartedDomain,
    spec: &CurvatureSpec,
    constant: f64,
) -> Result<CurvatureMatch> {
    if u.len() != grid.len() {
        return Err(Error::FieldLength { expected: grid.len(), got: u.len() });
    }
    let h = grid.spacing();
    let mut worst = (0.0, None);
    let mut count = 0;
    for i in grid.full_block_nodes() {
        let Some(hd) = mean_curvature_at(u, grid, domain, i) else { continue };
        let x = embed(domain, &grid.node(i).x, u.values()[i]);
        let err = (hd - spec.evaluate(&x)?).abs();
        count += 1;
        if !(err <= worst.0) {
            worst = (err, Some(i));
        }
    }
    let tol = constant * h * h;
    Ok(CurvatureMatch { nodes_checked: count, max_error: worst.0, tolerance: tol, worst_node: worst.1, pass: count > 0 && worst.0 <= tol })
}
