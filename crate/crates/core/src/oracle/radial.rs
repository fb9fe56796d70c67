//! Rotationally symmetric reference solutions on geodesic caps for radial H:
//! u'' + (n−1)(1+u'²)cotθ·u' = n(1+u'²)(1 − √(1+u'²)·e^u·f(e^u)),
//! u'(0) = 0, u(θ₀) = 0.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::curvature::CurvatureSpec;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShootingOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Series start θ_s; the first step uses u ≈ u₀ + u''(0)θ²/2.
    pub start: f64,
    /// Number of u₀ samples in the bracket scan.
    pub scan_points: usize,
    /// Slope magnitude treated as blow-up.
    pub max_slope: f64,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions { rtol: 1e-12, atol: 1e-13, start: 1e-4, scan_points: 240, max_slope: 1e6 }
    }
}

/// Reference solution for one radial curvature on the cap of radius θ₀.
#[derive(Clone, Debug)]
pub struct RadialReference {
    n: usize,
    theta0: f64,
    spec: CurvatureSpec,
    options: ShootingOptions,
    /// All center values u(0) reaching u(θ₀) = 0 within the scan range.
    pub roots: Vec<f64>,
    /// The root inside [log r1, log r2].
    pub center: f64,
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

impl RadialReference {
    pub fn new(spec: &CurvatureSpec, n: usize, theta0: f64) -> Result<Self> {
        Self::with_options(spec, n, theta0, ShootingOptions::default())
    }

    pub fn with_options(spec: &CurvatureSpec, n: usize, theta0: f64, options: ShootingOptions) -> Result<Self> {
        if !spec.is_radial() {
            return Err(Error::Curvature("radial reference needs H depending on |X| only".into()));
        }
        if !(theta0 > 0.0 && theta0 < std::f64::consts::PI) || n < 2 {
            return Err(Error::Domain(format!("radial reference needs n ≥ 2 and θ₀ in (0, π), got n = {n}, θ₀ = {theta0}")));
        }
        let mut r = RadialReference { n, theta0, spec: spec.clone(), options, roots: Vec::new(), center: f64::NAN };
        r.roots = r.find_roots();
        let (lo, hi) = (spec.r1().ln(), spec.r2().ln());
        let slack = 1e-9;
        r.center = r
            .roots
            .iter()
            .copied()
            .filter(|u0| *u0 >= lo - slack && *u0 <= hi + slack)
            .min_by(|a, b| a.abs().total_cmp(&b.abs()))
            .ok_or_else(|| Error::Ode(format!("no shooting root in [log r1, log r2]; roots {:?}", r.roots)))?;
        Ok(r)
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    fn energy(&self, u: f64) -> f64 {
        let rho = u.exp();
        let q = self.pole_direction();
        rho * self.spec.evaluate_polar(&q, rho).unwrap_or(f64::NAN)
    }

    fn energy_derivative(&self, u: f64) -> f64 {
        let rho = u.exp();
        rho * self.spec.radial_derivative(&self.pole_direction(), rho).unwrap_or(f64::NAN)
    }

    fn pole_direction(&self) -> Vec<f64> {
        let mut q = vec![0.0; self.n + 1];
        q[self.n] = -1.0;
        q
    }

    fn rhs(&self, theta: f64, y: [f64; 2]) -> [f64; 2] {
        let (u, p) = (y[0], y[1]);
        let nf = self.n as f64;
        let s = 1.0 + p * p;
        let upp = nf * s * (1.0 - s.sqrt() * self.energy(u)) - (nf - 1.0) * s * p / theta.tan();
        [p, upp]
    }

    fn series(&self, u0: f64, theta: f64) -> [f64; 2] {
        let a = 1.0 - self.energy(u0);
        [u0 + 0.5 * a * theta * theta, a * theta]
    }

    /// (u, u') at each of the increasing angles `thetas`, or None on blow-up.
    pub fn integrate(&self, u0: f64, thetas: &[f64]) -> Option<Vec<[f64; 2]>> {
        let o = self.options;
        let mut out = Vec::with_capacity(thetas.len());
        let start = o.start.min(0.5 * thetas.iter().copied().filter(|t| *t > 0.0).fold(self.theta0, f64::min));
        let mut t = start;
        let mut y = self.series(u0, t);
        let mut h = 0.1 * start;
        for &target in thetas {
            if target <= start {
                out.push(self.series(u0, target));
                continue;
            }
            while t < target {
                let step = h.min(target - t);
                let last = step == target - t;
                let mut k = [[0.0; 2]; 7];
                for s in 0..7 {
                    let mut ys = y;
                    for (j, kj) in k.iter().enumerate().take(s) {
                        ys[0] += step * A[s][j] * kj[0];
                        ys[1] += step * A[s][j] * kj[1];
                    }
                    k[s] = self.rhs(t + C[s] * step, ys);
                }
                let mut y5 = y;
                let mut err = 0.0f64;
                for c in 0..2 {
                    let (mut d5, mut d4) = (0.0, 0.0);
                    for s in 0..7 {
                        d5 += B5[s] * k[s][c];
                        d4 += B4[s] * k[s][c];
                    }
                    y5[c] += step * d5;
                    let sc = o.atol + o.rtol * y[c].abs().max(y5[c].abs());
                    err = err.max((step * (d5 - d4)).abs() / sc);
                }
                if !err.is_finite() {
                    h = 0.25 * step;
                    if h < 1e-14 {
                        return None;
                    }
                    continue;
                }
                if err <= 1.0 {
                    t = if last { target } else { t + step };
                    y = y5;
                    if !(y[0].is_finite() && y[1].abs() < o.max_slope) {
                        return None;
                    }
                }
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                // A step shortened to land on an output angle says nothing about the step size.
                h = if last && err <= 1.0 { h.max(step * factor) } else { step * factor };
                if h < 1e-14 {
                    return None;
                }
            }
            out.push(y);
        }
        Some(out)
    }

    /// u(θ₀) for center value u₀; NaN on blow-up.
    pub fn miss(&self, u0: f64) -> f64 {
        self.integrate(u0, &[self.theta0]).map_or(f64::NAN, |v| v[0][0])
    }

    fn find_roots(&self) -> Vec<f64> {
        let lo = self.spec.r1().ln() - 1.0;
        let hi = self.spec.r2().ln() + 1.0;
        let m = self.options.scan_points.max(2);
        let samples: Vec<(f64, f64)> = (0..=m)
            .map(|k| {
                let u0 = lo + (hi - lo) * k as f64 / m as f64;
                (u0, self.miss(u0))
            })
            .collect();
        let mut roots = Vec::new();
        for w in samples.windows(2) {
            let ((a, fa), (b, fb)) = (w[0], w[1]);
            if !(fa.is_finite() && fb.is_finite()) {
                continue;
            }
            if fa == 0.0 {
                roots.push(a);
            } else if fa * fb < 0.0 {
                if let Some(r) = self.refine(a, fa, b) {
                    roots.push(r);
                }
            }
        }
        if let Some(&(b, fb)) = samples.last() {
            if fb == 0.0 {
                roots.push(b);
            }
        }
        roots
    }

    fn refine(&self, mut a: f64, mut fa: f64, mut b: f64) -> Option<f64> {
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            let fm = self.miss(mid);
            if !fm.is_finite() {
                return None;
            }
            if fm == 0.0 {
                return Some(mid);
            }
            if fa * fm < 0.0 {
                b = mid;
            } else {
                a = mid;
                fa = fm;
            }
        }
        Some(0.5 * (a + b))
    }

    /// Shooting solution u(θ) for arbitrary angles in [0, θ₀].
    pub fn values(&self, thetas: &[f64]) -> Result<Vec<f64>> {
        let mut order: Vec<usize> = (0..thetas.len()).collect();
        order.sort_by(|&i, &j| thetas[i].total_cmp(&thetas[j]));
        let sorted: Vec<f64> = order.iter().map(|&i| thetas[i].clamp(0.0, self.theta0)).collect();
        let ys = self.integrate(self.center, &sorted).ok_or_else(|| Error::Ode("reference trajectory blew up".into()))?;
        let mut out = vec![0.0; thetas.len()];
        for (k, &i) in order.iter().enumerate() {
            out[i] = ys[k][0];
        }
        Ok(out)
    }

    /// Chebyshev–Gauss–Lobatto collocation with `degree + 1` nodes, started
    /// from the shooting solution and solved by Newton's method.
    pub fn collocation(&self, degree: usize) -> Result<Collocation> {
        let (xi, dx) = cheb_lobatto(degree);
        let m = degree + 1;
        let theta: Vec<f64> = xi.iter().map(|x| 0.5 * self.theta0 * (1.0 + x)).collect();
        let d1 = &dx * (2.0 / self.theta0);
        let d2 = &d1 * &d1;
        let mut u = DVector::from_vec(self.values(&theta)?);
        let nf = self.n as f64;
        for _ in 0..40 {
            let p = &d1 * &u;
            let upp = &d2 * &u;
            let mut f = DVector::zeros(m);
            let mut jac = d2.clone();
            for i in 0..m {
                if i == 0 {
                    // θ = θ₀: Dirichlet condition.
                    f[0] = u[0];
                    jac.row_mut(0).fill(0.0);
                    jac[(0, 0)] = 1.0;
                } else if i == degree {
                    // θ = 0: symmetry condition u'(0) = 0.
                    f[i] = p[i];
                    jac.row_mut(i).copy_from(&d1.row(i));
                } else {
                    let s = 1.0 + p[i] * p[i];
                    let rs = s.sqrt();
                    let cot = 1.0 / theta[i].tan();
                    let e = self.energy(u[i]);
                    f[i] = upp[i] + (nf - 1.0) * s * cot * p[i] - nf * s * (1.0 - rs * e);
                    let dp = (nf - 1.0) * cot * (s + 2.0 * p[i] * p[i]) - nf * (2.0 * p[i] * (1.0 - rs * e) - p[i] * rs * e);
                    let du = nf * s * rs * self.energy_derivative(u[i]);
                    for j in 0..m {
                        jac[(i, j)] += dp * d1[(i, j)];
                    }
                    jac[(i, i)] += du;
                }
            }
            let delta = jac.lu().solve(&(-&f)).ok_or_else(|| Error::Ode("singular collocation Jacobian".into()))?;
            u += &delta;
            if delta.amax() < 1e-14 {
                break;
            }
        }
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::Ode("collocation diverged".into()));
        }
        Ok(Collocation { theta, values: u.as_slice().to_vec() })
    }
}

/// Lobatto nodes cos(jπ/N) and the differentiation matrix on [−1, 1].
pub fn cheb_lobatto(degree: usize) -> (Vec<f64>, DMatrix<f64>) {
    let n = degree;
    let x: Vec<f64> = (0..=n).map(|j| (std::f64::consts::PI * j as f64 / n as f64).cos()).collect();
    let c = |j: usize| (if j == 0 || j == n { 2.0 } else { 1.0 }) * if j % 2 == 0 { 1.0 } else { -1.0 };
    let mut d = DMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        for j in 0..=n {
            if i != j {
                d[(i, j)] = c(i) / c(j) / (x[i] - x[j]);
            }
        }
        let s: f64 = (0..=n).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
        d[(i, i)] = -s;
    }
    (x, d)
}

#[derive(Clone, Debug)]
pub struct Collocation {
    /// Nodes from θ₀ down to 0.
    pub theta: Vec<f64>,
    pub values: Vec<f64>,
}

impl Collocation {
    /// Barycentric interpolation at θ.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.theta.len() - 1;
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..=n {
            let diff = t - self.theta[j];
            if diff == 0.0 {
                return self.values[j];
            }
            let w = (if j == 0 || j == n { 0.5 } else { 1.0 }) * if j % 2 == 0 { 1.0 } else { -1.0 };
            num += w / diff * self.values[j];
            den += w / diff;
        }
        num / den
    }
}

/// Writes `# theta u` followed by one pair per line.
pub fn write_profile(path: &Path, rows: &[(f64, f64)]) -> Result<()> {
    let mut s = String::from("# theta u\n");
    for (t, u) in rows {
        let _ = writeln!(s, "{t:.17e} {u:.17e}");
    }
    crate::io::write_atomic(path, s.as_bytes())
}

pub fn read_profile(text: &str) -> Result<Vec<(f64, f64)>> {
    text.lines()
        .filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| Error::SolutionFile(format!("bad profile line {l:?}")))?;
            match v.as_slice() {
                [t, u] => Ok((*t, *u)),
                _ => Err(Error::SolutionFile(format!("bad profile line {l:?}"))),
            }
        })
        .collect()
}
