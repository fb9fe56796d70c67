//! Sparse matrices and the two linear solvers: banded LU with partial
//! pivoting and ILU(0)-preconditioned BiCGSTAB.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a square matrix from per-row entries; duplicates are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                assert!(c < n, "column {c} out of range for a {n}×{n} matrix");
                if last == Some(c) {
                    *vals.last_mut().expect("pushed") += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix { n, row_ptr, cols, vals }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |e| e.1)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(c, v)| v * x[c]).sum()).collect()
    }

    /// (lower, upper) bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut lo = 0;
        let mut up = 0;
        for i in 0..self.n {
            for (c, _) in self.row(i) {
                if c < i {
                    lo = lo.max(i - c);
                } else {
                    up = up.max(c - i);
                }
            }
        }
        (lo, up)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(i) {
                row[c] += v;
            }
        }
        d
    }

    /// ‖Ax − b‖∞ / (‖b‖∞ + 1).
    pub fn relative_residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let ax = self.mul_vec(x);
        inf_norm_diff(&ax, b) / (inf_norm(b) + 1.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LinearMethod {
    #[default]
    Direct,
    Krylov,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearStats {
    pub method: LinearMethod,
    pub iterations: usize,
    pub relative_residual: f64,
    pub fell_back_to_direct: bool,
}

/// Target for ‖Au − b‖∞ / (‖b‖∞ + 1).
pub const LINEAR_TOLERANCE: f64 = 1e-12;

/// Solves `A x = b` to [`LINEAR_TOLERANCE`].
pub fn solve_linear(a: &CsrMatrix, b: &[f64], method: LinearMethod, krylov_max_iter: usize) -> Result<(Vec<f64>, LinearStats)> {
    if b.iter().all(|v| *v == 0.0) {
        return Ok((
            vec![0.0; a.size()],
            LinearStats { method, iterations: 0, relative_residual: 0.0, fell_back_to_direct: false },
        ));
    }
    if method == LinearMethod::Krylov {
        if let Some((x, it, res)) = bicgstab(a, b, krylov_max_iter)? {
            return Ok((x, LinearStats { method, iterations: it, relative_residual: res, fell_back_to_direct: false }));
        }
    }
    let lu = BandedLu::factor(a)?;
    let mut x = lu.solve(b);
    let mut res = a.relative_residual(&x, b);
    let mut steps = 1;
    // Iterative refinement with the same factors.
    while res > LINEAR_TOLERANCE && steps < 5 {
        let ax = a.mul_vec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let d = lu.solve(&r);
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += di;
        }
        res = a.relative_residual(&x, b);
        steps += 1;
    }
    Ok((
        x,
        LinearStats {
            method,
            iterations: steps,
            relative_residual: res,
            fell_back_to_direct: method == LinearMethod::Krylov,
        },
    ))
}

/// LU factors of a banded matrix with row pivoting.
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    band: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.size();
        let (kl, ku) = a.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut band = vec![0.0; n * width];
        let mut scale = 0.0f64;
        for i in 0..n {
            for (c, v) in a.row(i) {
                band[i * width + c + kl - i] = v;
                scale = scale.max(v.abs());
            }
        }
        let at = |i: usize, j: usize| i * width + j + kl - i;
        let mut pivots = vec![0; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = band[at(k, k)].abs();
            for i in k + 1..=last_row {
                let v = band[at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > 1e-14 * scale) {
                return Err(Error::Singular { row: k, size: n, pivot: best });
            }
            pivots[k] = p;
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    band.swap(at(k, j), at(p, j));
                }
            }
            let pivot = band[at(k, k)];
            for i in k + 1..=last_row {
                let l = band[at(i, k)] / pivot;
                if l == 0.0 {
                    continue;
                }
                band[at(i, k)] = l;
                for j in k + 1..=last_col {
                    band[at(i, j)] -= l * band[at(k, j)];
                }
            }
        }
        Ok(BandedLu { n, kl, ku, width, band, pivots })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl, ku, w) = (self.n, self.kl, self.ku, self.width);
        let at = |i: usize, j: usize| i * w + j + kl - i;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    x[i] -= self.band[at(i, k)] * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + kl + ku).min(n - 1) {
                s -= self.band[at(k, j)] * x[j];
            }
            x[k] = s / self.band[at(k, k)];
        }
        x
    }
}

/// Incomplete LU factors with the sparsity pattern of A.
struct Ilu0 {
    a: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    fn new(a: &CsrMatrix) -> Option<Self> {
        let mut f = a.clone();
        let n = f.n;
        let mut diag = vec![usize::MAX; n];
        for i in 0..n {
            for p in f.row_ptr[i]..f.row_ptr[i + 1] {
                if f.cols[p] == i {
                    diag[i] = p;
                }
            }
            if diag[i] == usize::MAX {
                return None;
            }
        }
        for i in 1..n {
            let (start, end) = (f.row_ptr[i], f.row_ptr[i + 1]);
            for p in start..end {
                let k = f.cols[p];
                if k >= i {
                    break;
                }
                let dk = f.vals[diag[k]];
                if dk == 0.0 {
                    return None;
                }
                let l = f.vals[p] / dk;
                f.vals[p] = l;
                for q in p + 1..end {
                    let j = f.cols[q];
                    let ukj = f.get(k, j);
                    f.vals[q] -= l * ukj;
                }
            }
        }
        if diag.iter().any(|&d| f.vals[d] == 0.0) {
            return None;
        }
        Some(Ilu0 { a: f, diag })
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let n = self.a.n;
        let mut y = r.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for p in self.a.row_ptr[i]..self.diag[i] {
                s -= self.a.vals[p] * y[self.a.cols[p]];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for p in self.diag[i] + 1..self.a.row_ptr[i + 1] {
                s -= self.a.vals[p] * y[self.a.cols[p]];
            }
            y[i] = s / self.a.vals[self.diag[i]];
        }
        y
    }
}

/// Right-preconditioned BiCGSTAB; `None` when it fails to reach tolerance.
fn bicgstab(a: &CsrMatrix, b: &[f64], max_iter: usize) -> Result<Option<(Vec<f64>, usize, f64)>> {
    let Some(m) = Ilu0::new(a) else { return Ok(None) };
    let n = a.size();
    let target = LINEAR_TOLERANCE * (inf_norm(b) + 1.0);
    let mut x = vec![0.0; n];
    let mut it = 0;
    let mut restarts = 0;
    'outer: while it < max_iter && restarts < 20 {
        let ax = a.mul_vec(&x);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        if inf_norm(&r) <= target {
            return Ok(Some((x, it, inf_norm(&r) / (inf_norm(b) + 1.0))));
        }
        let r0 = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0f64, 1.0f64, 1.0f64);
        let mut v = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut best = inf_norm(&r);
        let mut since_best = 0;
        while it < max_iter {
            it += 1;
            let rho_new = dot(&r0, &r);
            if rho_new.abs() < 1e-300 || omega == 0.0 {
                restarts += 1;
                continue 'outer;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            let ph = m.apply(&p);
            v = a.mul_vec(&ph);
            let denom = dot(&r0, &v);
            if denom.abs() < 1e-300 {
                restarts += 1;
                continue 'outer;
            }
            alpha = rho / denom;
            let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
            if inf_norm(&s) <= target {
                for i in 0..n {
                    x[i] += alpha * ph[i];
                }
                continue 'outer;
            }
            let sh = m.apply(&s);
            let t = a.mul_vec(&sh);
            let tt = dot(&t, &t);
            omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
            for i in 0..n {
                x[i] += alpha * ph[i] + omega * sh[i];
                r[i] = s[i] - omega * t[i];
            }
            if !x.iter().all(|v| v.is_finite()) {
                return Ok(None);
            }
            let rn = inf_norm(&r);
            if rn <= target {
                continue 'outer;
            }
            if rn < 0.5 * best {
                best = rn;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > 50 {
                    // Stagnation: restart from the current iterate.
                    restarts += 1;
                    continue 'outer;
                }
            }
        }
    }
    let res = a.relative_residual(&x, b);
    Ok(if res <= LINEAR_TOLERANCE { Some((x, it, res)) } else { None })
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn inf_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, kl: usize, ku: usize, seed: u64, dominant: bool) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|i| {
                let mut row = Vec::new();
                for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                    let mut v: f64 = rng.gen_range(-1.0..1.0);
                    if i == j && dominant {
                        v += (kl + ku + 2) as f64;
                    }
                    row.push((j, v));
                }
                row
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    #[test]
    fn csr_basics() {
        let a = CsrMatrix::from_rows(vec![vec![(1, 2.0), (0, 1.0), (1, 1.0)], vec![(0, -1.0)]]);
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.mul_vec(&[1.0, 2.0]), vec![7.0, -1.0]);
        assert_eq!(a.bandwidths(), (1, 1));
    }

    #[test]
    fn banded_lu_needs_pivoting() {
        // Zero leading diagonal forces a row exchange.
        let a = CsrMatrix::from_rows(vec![vec![(0, 0.0), (1, 1.0)], vec![(0, 2.0), (1, 3.0)]]);
        let (x, s) = solve_linear(&a, &[1.0, 8.0], LinearMethod::Direct, 10).unwrap();
        assert!((x[0] - 2.5).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
        assert!(s.relative_residual <= LINEAR_TOLERANCE);
    }

    #[test]
    fn direct_matches_dense_solve() {
        let a = random_banded(60, 7, 4, 1, false);
        let b: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
        let (x, s) = solve_linear(&a, &b, LinearMethod::Direct, 10).unwrap();
        assert!(s.relative_residual <= LINEAR_TOLERANCE);
        let d = a.to_dense();
        let m = nalgebra::DMatrix::from_fn(60, 60, |i, j| d[i][j]);
        let y = m.lu().solve(&nalgebra::DVector::from_vec(b)).unwrap();
        for i in 0..60 {
            assert!((x[i] - y[i]).abs() < 1e-9 * (1.0 + y[i].abs()));
        }
    }

    #[test]
    fn krylov_converges_on_dominant_systems() {
        let a = random_banded(200, 10, 10, 7, true);
        let b: Vec<f64> = (0..200).map(|i| (i as f64).cos()).collect();
        let (x, s) = solve_linear(&a, &b, LinearMethod::Krylov, 500).unwrap();
        assert!(!s.fell_back_to_direct);
        assert!(a.relative_residual(&x, &b) <= LINEAR_TOLERANCE);
    }

    #[test]
    fn krylov_falls_back_when_capped() {
        // Offsets 0, ±1, ±10 only: ILU(0) drops fill and is not exact.
        let full = random_banded(200, 10, 10, 3, false);
        let rows = (0..200usize)
            .map(|i| full.row(i).filter(|&(c, _)| matches!(c.abs_diff(i), 0 | 1 | 10)).collect())
            .collect();
        let a = CsrMatrix::from_rows(rows);
        let b = vec![1.0; 200];
        let (x, s) = solve_linear(&a, &b, LinearMethod::Krylov, 1).unwrap();
        assert!(s.fell_back_to_direct);
        assert!(a.relative_residual(&x, &b) <= LINEAR_TOLERANCE);
    }

    #[test]
    fn zero_rhs_gives_exact_zero() {
        let a = random_banded(30, 2, 2, 5, true);
        let (x, _) = solve_linear(&a, &[0.0; 30], LinearMethod::Direct, 10).unwrap();
        assert!(x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn singular_is_reported() {
        let a = CsrMatrix::from_rows(vec![vec![(0, 1.0), (1, 2.0)], vec![(0, 2.0), (1, 4.0)]]);
        assert!(matches!(solve_linear(&a, &[1.0, 1.0], LinearMethod::Direct, 1), Err(Error::Singular { .. })));
    }

    #[test]
    fn direct_is_deterministic() {
        let a = random_banded(80, 5, 5, 11, false);
        let b: Vec<f64> = (0..80).map(|i| i as f64).collect();
        let x1 = solve_linear(&a, &b, LinearMethod::Direct, 1).unwrap().0;
        let x2 = solve_linear(&a, &b, LinearMethod::Direct, 1).unwrap().0;
        assert_eq!(x1, x2);
    }
}
