//! Frozen-coefficient linear problems L_w u = t·b(w) with zero Dirichlet
//! data, where L_w u = aᶦʲ(∇w)u_ij and aᶦʲ = (1+|∇w|²)δ_ij − w_i w_j.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::curvature::CurvatureSpec;
use crate::error::{Error, Result};
use crate::geometry::{conformal_factor, frame_derivatives, log_conformal_gradient, ChartedDomain, Grid, ScalarField, Slot};
use crate::linalg::{solve_linear, CsrMatrix, LinearMethod, LinearStats};

/// Iteration cap for the Krylov solver before falling back to DIRECT.
pub const KRYLOV_MAX_ITER: usize = 2000;

#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// (min, max) eigenvalues of aᶦʲ over the nodes.
    pub coeff_bounds: (f64, f64),
    /// max over nodes of |∇w|² in the frame norm.
    pub grad_sup: f64,
}

/// aᶦʲ = (1+|g|²)δ_ij − g_i g_j, row-major.
pub fn coefficient_matrix(grad: &[f64]) -> Vec<f64> {
    let n = grad.len();
    let g2: f64 = grad.iter().map(|g| g * g).sum();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = if i == j { 1.0 + g2 } else { 0.0 } - grad[i] * grad[j];
        }
    }
    a
}

/// Chart-coordinate coefficients of u ↦ Σ cᶦʲ u_ij: the weights of ∂²_ij u
/// (λ⁻²cᶦʲ) and of ∂_k u (λ⁻²[−2Σ_i cᶦᵏ s_i + tr(c) s_k]).
pub fn chart_coefficients(x: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let lam = conformal_factor(x);
    let inv2 = 1.0 / (lam * lam);
    let s = log_conformal_gradient(x);
    let tr: f64 = (0..n).map(|i| c[i * n + i]).sum();
    let second = c.iter().map(|v| v * inv2).collect();
    let first = (0..n)
        .map(|k| {
            let cs: f64 = (0..n).map(|i| c[i * n + k] * s[i]).sum();
            inv2 * (-2.0 * cs + tr * s[k])
        })
        .collect();
    (second, first)
}

/// Sparse row of Σ A_ij ∂²_ij + Σ B_k ∂_k + C over the unknowns; boundary
/// points carry zero data and drop out.
pub fn operator_row(grid: &Grid, node: usize, second: &[f64], first: &[f64], zeroth: f64) -> Vec<(usize, f64)> {
    let n = grid.dim();
    let st = grid.stencil(node);
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(3usize.pow(n as u32) + 8);
    let mut push = |slot: Slot, w: f64| {
        if let Slot::Unknown(j) = slot {
            row.push((j, w));
        }
    };
    for i in 0..n {
        for j in 0..n {
            let a = second[i * n + j];
            if a != 0.0 {
                for &(slot, w) in &st.second[i * n + j].entries {
                    push(slot, a * w);
                }
            }
        }
    }
    for k in 0..n {
        if first[k] != 0.0 {
            for &(slot, w) in &st.first[k].entries {
                push(slot, first[k] * w);
            }
        }
    }
    if zeroth != 0.0 {
        push(Slot::Unknown(node), zeroth);
    }
    row
}

/// n(1+|g|²)(1 − √(1+|g|²)·e^w·H(e^w q)).
pub fn rhs_value(n: usize, grad_sq: f64, w: f64, q: &[f64], spec: &CurvatureSpec) -> Result<f64> {
    let rho = w.exp();
    let h = spec.evaluate_polar(q, rho)?;
    let root = (1.0 + grad_sq).sqrt();
    Ok(n as f64 * (1.0 + grad_sq) * (1.0 - root * rho * h))
}

/// Smallest and largest eigenvalue of a symmetric row-major n×n matrix.
pub fn eigen_bounds(a: &[f64], n: usize) -> (f64, f64) {
    let m = DMatrix::from_row_slice(n, n, a);
    let e = SymmetricEigen::new(m).eigenvalues;
    (e.min(), e.max())
}

/// Assembles L_w u = t·b(w).
pub fn assemble(w: &ScalarField, t: f64, spec: &CurvatureSpec, domain: &ChartedDomain, grid: &Grid) -> Result<LinearSystem> {
    if w.len() != grid.len() {
        return Err(Error::FieldLength { expected: grid.len(), got: w.len() });
    }
    let n = grid.dim();
    let chart = domain.chart();
    struct Row {
        entries: Vec<(usize, f64)>,
        rhs: f64,
        eig: (f64, f64),
        g2: f64,
    }
    let rows: Vec<Result<Row>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = &grid.node(i).x;
            let d = frame_derivatives(w, grid, i);
            let g2 = d.grad_norm_sq();
            if !g2.is_finite() {
                return Err(Error::NonFinite(format!("gradient of w at unknown {i}")));
            }
            let a = coefficient_matrix(&d.grad);
            let eig = eigen_bounds(&a, n);
            // The lower eigenvalue is exactly 1; allow for cancellation in 1 + |g|² − |g|².
            if eig.0 < 1.0 - 1e-12 * (1.0 + g2) {
                return Err(Error::Ellipticity { node: i, min_eigenvalue: eig.0 });
            }
            let (second, first) = chart_coefficients(x, &a);
            let entries = operator_row(grid, i, &second, &first, 0.0);
            let q = chart.to_sphere(x);
            let b = rhs_value(n, g2, w.values()[i], &q, spec)?;
            let rhs = t * b;
            if !rhs.is_finite() || entries.iter().any(|e| !e.1.is_finite()) {
                return Err(Error::NonFinite(format!("coefficients at unknown {i}")));
            }
            Ok(Row { entries, rhs, eig, g2 })
        })
        .collect();
    let mut entries = Vec::with_capacity(rows.len());
    let mut rhs = Vec::with_capacity(rows.len());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut grad_sup = 0.0f64;
    for r in rows {
        let r = r?;
        lo = lo.min(r.eig.0);
        hi = hi.max(r.eig.1);
        grad_sup = grad_sup.max(r.g2);
        entries.push(r.entries);
        rhs.push(r.rhs);
    }
    Ok(LinearSystem { matrix: CsrMatrix::from_rows(entries), rhs, coeff_bounds: (lo, hi), grad_sup })
}

/// Solves the system; the result vanishes on the boundary by construction.
pub fn solve(system: &LinearSystem, method: LinearMethod) -> Result<ScalarField> {
    Ok(solve_detailed(system, method)?.0)
}

pub fn solve_detailed(system: &LinearSystem, method: LinearMethod) -> Result<(ScalarField, LinearStats)> {
    let (x, stats) = solve_linear(&system.matrix, &system.rhs, method, KRYLOV_MAX_ITER)?;
    Ok((ScalarField::from_values(x)?, stats))
}

#[derive(Clone, Debug, Serialize)]
pub struct EllipticityReport {
    pub samples: usize,
    /// min of aᶦʲξᵢξⱼ − |ξ|².
    pub lower_margin: f64,
    /// min of (1 + 2 sup|∇w|²)|ξ|² − aᶦʲξᵢξⱼ.
    pub upper_margin: f64,
    /// max over samples of |aᶦʲξᵢξⱼ − [(1+|∇w|²)|ξ|² − ⟨∇w,ξ⟩²]|.
    pub identity_error: f64,
    pub grad_sup: f64,
    pub pass: bool,
}

/// Tolerance on both ellipticity inequalities.
pub const ELLIPTICITY_TOLERANCE: f64 = 1e-12;

/// Samples random unit ξ at random nodes and checks
/// |ξ|² ≤ aᶦʲξᵢξⱼ ≤ (1 + 2 sup|∇w|²)|ξ|².
pub fn ellipticity_check(w: &ScalarField, grid: &Grid, samples: usize, seed: u64) -> EllipticityReport {
    let n = grid.dim();
    let grads: Vec<Vec<f64>> = (0..grid.len()).map(|i| frame_derivatives(w, grid, i).grad).collect();
    let grad_sup = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lower = f64::INFINITY;
    let mut upper = f64::INFINITY;
    let mut identity = 0.0f64;
    for _ in 0..samples {
        let i = rng.gen_range(0..grid.len());
        let mut xi: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let len = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        xi.iter_mut().for_each(|v| *v /= len);
        let (lo, up, id) = quadratic_form_margins(&grads[i], &xi, grad_sup);
        lower = lower.min(lo);
        upper = upper.min(up);
        identity = identity.max(id);
    }
    let pass = lower >= -ELLIPTICITY_TOLERANCE && upper >= -ELLIPTICITY_TOLERANCE;
    EllipticityReport { samples, lower_margin: lower, upper_margin: upper, identity_error: identity, grad_sup, pass }
}

/// (aξξ − |ξ|², (1+2s)|ξ|² − aξξ, identity error) with aξξ from the matrix.
pub fn quadratic_form_margins(grad: &[f64], xi: &[f64], grad_sup: f64) -> (f64, f64, f64) {
    let n = grad.len();
    let a = coefficient_matrix(grad);
    let mut form = 0.0;
    for i in 0..n {
        for j in 0..n {
            form += a[i * n + j] * xi[i] * xi[j];
        }
    }
    let x2: f64 = xi.iter().map(|v| v * v).sum();
    let g2: f64 = grad.iter().map(|v| v * v).sum();
    let gx: f64 = grad.iter().zip(xi).map(|(a, b)| a * b).sum();
    let identity = ((1.0 + g2) * x2 - gx * gx - form).abs();
    (form - x2, (1.0 + 2.0 * grad_sup) * x2 - form, identity)
}
