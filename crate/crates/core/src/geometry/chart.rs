//! Stereographic chart of Sⁿ ⊂ ℝⁿ⁺¹ and the round metric in chart coordinates.

use crate::error::{Error, Result};

/// Stereographic projection from a pole `P` onto the hyperplane through the
/// origin orthogonal to `P`.
///
/// The canonical chart (pole `e_{n+1}`) is conjugated by a fixed rotation
/// taking `e_{n+1}` to `P`.
#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pole: Vec<f64>,
    // Row-major (n+1)×(n+1) rotation with rotation · e_{n+1} = pole.
    rotation: Vec<f64>,
}

impl Chart {
    pub fn new(pole: &[f64]) -> Result<Chart> {
        let m = pole.len();
        if m < 2 {
            return Err(Error::Domain("pole must have at least 2 components".into()));
        }
        let norm = pole.iter().map(|p| p * p).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("pole must be a unit vector (|P| = {norm})")));
        }
        let pole: Vec<f64> = pole.iter().map(|p| p / norm).collect();
        Ok(Chart { rotation: rotation_to(&pole), pole })
    }

    /// Chart with the canonical pole `e_{n+1}`.
    pub fn canonical(n: usize) -> Chart {
        let mut pole = vec![0.0; n + 1];
        pole[n] = 1.0;
        Chart::new(&pole).expect("canonical pole is a unit vector")
    }

    pub fn pole(&self) -> &[f64] {
        &self.pole
    }

    /// Chart dimension n.
    pub fn dim(&self) -> usize {
        self.pole.len() - 1
    }

    pub fn to_sphere(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        debug_assert_eq!(x.len(), n);
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let denom = 1.0 + r2;
        let mut canonical = Vec::with_capacity(n + 1);
        canonical.extend(x.iter().map(|v| 2.0 * v / denom));
        canonical.push((r2 - 1.0) / denom);
        self.rotate(&canonical)
    }

    pub fn to_chart(&self, q: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        debug_assert_eq!(q.len(), n + 1);
        let c = self.unrotate(q);
        let last = c[n];
        let head = &c[..n];
        let head2: f64 = head.iter().map(|v| v * v).sum();
        if last > 0.0 {
            // 1 − q_{n+1} = |q_head|² / (1 + q_{n+1}) avoids cancellation near the pole.
            if head2 <= 1e-30 {
                return Err(Error::AtPole);
            }
            let scale = (1.0 + last) / head2;
            Ok(head.iter().map(|v| v * scale).collect())
        } else {
            Ok(head.iter().map(|v| v / (1.0 - last)).collect())
        }
    }

    fn rotate(&self, v: &[f64]) -> Vec<f64> {
        let m = v.len();
        (0..m)
            .map(|i| (0..m).map(|j| self.rotation[i * m + j] * v[j]).sum())
            .collect()
    }

    fn unrotate(&self, v: &[f64]) -> Vec<f64> {
        let m = v.len();
        (0..m)
            .map(|i| (0..m).map(|j| self.rotation[j * m + i] * v[j]).sum())
            .collect()
    }
}

fn rotation_to(pole: &[f64]) -> Vec<f64> {
    let m = pole.len();
    let c = pole[m - 1];
    let mut r = vec![0.0; m * m];
    for i in 0..m {
        r[i * m + i] = 1.0;
    }
    if c < -1.0 + 1e-14 {
        // Half turn in the (e_1, e_{n+1}) plane.
        r[0] = -1.0;
        r[m * m - 1] = -1.0;
        return r;
    }
    // R = I + K + K²/(1+c), K = P eᵀ − e Pᵀ with e = e_{n+1}.
    let mut k = vec![0.0; m * m];
    for i in 0..m {
        k[i * m + (m - 1)] += pole[i];
        k[(m - 1) * m + i] -= pole[i];
    }
    for i in 0..m {
        for j in 0..m {
            let k2: f64 = (0..m).map(|l| k[i * m + l] * k[l * m + j]).sum();
            r[i * m + j] += k[i * m + j] + k2 / (1.0 + c);
        }
    }
    r
}

/// Inverse stereographic image of chart point `x` for the given pole.
pub fn chart_to_sphere(x: &[f64], pole: &[f64]) -> Result<Vec<f64>> {
    let chart = Chart::new(pole)?;
    if x.len() != chart.dim() {
        return Err(Error::Domain(format!("chart point has {} components, expected {}", x.len(), chart.dim())));
    }
    Ok(chart.to_sphere(x))
}

/// Stereographic image of `q`; fails at the pole itself.
pub fn sphere_to_chart(q: &[f64], pole: &[f64]) -> Result<Vec<f64>> {
    let chart = Chart::new(pole)?;
    if q.len() != pole.len() {
        return Err(Error::Domain("point and pole dimensions differ".into()));
    }
    chart.to_chart(q)
}

/// λ(x) = 2/(1+|x|²); the round metric is λ²·δ in chart coordinates.
pub fn conformal_factor(x: &[f64]) -> f64 {
    2.0 / (1.0 + x.iter().map(|v| v * v).sum::<f64>())
}

/// s_i = ∂_i log λ = −2x_i/(1+|x|²).
pub fn log_conformal_gradient(x: &[f64]) -> Vec<f64> {
    let denom = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
    x.iter().map(|v| -2.0 * v / denom).collect()
}

/// Christoffel symbol Γᵏ_ij of the conformal metric λ²δ.
pub fn christoffel(x: &[f64], i: usize, j: usize, k: usize) -> f64 {
    let s = log_conformal_gradient(x);
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    s[i] * d(j, k) + s[j] * d(i, k) - s[k] * d(i, j)
}

/// Converts chart partial derivatives into orthonormal-frame components.
///
/// `partials` holds ∂_i u, `second` the row-major n×n matrix ∂²_ij u. Returns
/// `(u_i, u_ij)` with u_i = λ⁻¹∂_i u and u_ij = λ⁻²(∂²_ij u − Γᵏ_ij ∂_k u).
pub fn frame_from_partials(x: &[f64], partials: &[f64], second: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let lambda = conformal_factor(x);
    let s = log_conformal_gradient(x);
    let sp: f64 = s.iter().zip(partials).map(|(a, b)| a * b).sum();
    let grad = partials.iter().map(|p| p / lambda).collect();
    let inv2 = 1.0 / (lambda * lambda);
    let mut hess = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut v = second[i * n + j] - s[i] * partials[j] - s[j] * partials[i];
            if i == j {
                v += sp;
            }
            hess[i * n + j] = v * inv2;
        }
    }
    (grad, hess)
}
