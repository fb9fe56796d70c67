//! Domains Ω ⊂ Sⁿ described in a stereographic chart.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::chart::Chart;
use crate::error::{Error, Result};

/// Smallest allowed value of 1 − max_{q∈Ω̄} ⟨P, q⟩.
pub const POLE_CLEARANCE: f64 = 1e-6;

/// Level-set function on chart coordinates; the domain is `{φ < 0}`.
#[derive(Clone)]
pub struct LevelSetFn(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>);

impl LevelSetFn {
    pub fn new(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        LevelSetFn(Arc::new(f))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

impl fmt::Debug for LevelSetFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("LevelSetFn(..)")
    }
}

#[derive(Clone, Debug)]
pub enum Shape {
    /// Points within geodesic distance `radius` of the unit vector `center`.
    GeodesicCap { center: Vec<f64>, radius: f64 },
    /// `{x : φ(x) < 0}` in chart coordinates, contained in the cube of
    /// half-width `extent` around `center`.
    LevelSet { phi: LevelSetFn, center: Vec<f64>, extent: f64 },
}

#[derive(Clone, Debug)]
pub struct ChartedDomain {
    dimension: usize,
    chart: Chart,
    shape: Shape,
    grid_spacing: f64,
}

impl ChartedDomain {
    /// Geodesic cap with the chart pole at the antipode of its center, so the
    /// chart image is the disk of radius tan(θ₀/2) about the origin.
    pub fn cap(center: &[f64], radius: f64, grid_spacing: f64) -> Result<Self> {
        let c = normalized(center)?;
        let pole: Vec<f64> = c.iter().map(|v| -v).collect();
        Self::cap_with_pole(&c, radius, &pole, grid_spacing)
    }

    /// Cap centered at the south pole −e_{n+1} of Sⁿ.
    pub fn south_cap(n: usize, radius: f64, grid_spacing: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Domain(format!("dimension must be ≥ 2, got {n}")));
        }
        let mut c = vec![0.0; n + 1];
        c[n] = -1.0;
        Self::cap(&c, radius, grid_spacing)
    }

    pub fn cap_with_pole(center: &[f64], radius: f64, pole: &[f64], grid_spacing: f64) -> Result<Self> {
        let c = normalized(center)?;
        if !(radius > 0.0 && radius < std::f64::consts::PI) {
            return Err(Error::Domain(format!("cap radius must lie in (0, π), got {radius}")));
        }
        if pole.len() != c.len() {
            return Err(Error::Domain("pole and center dimensions differ".into()));
        }
        let chart = Chart::new(pole)?;
        let dimension = chart.dim();
        if dimension < 2 {
            return Err(Error::Domain(format!("dimension must be ≥ 2, got {dimension}")));
        }
        check_spacing(grid_spacing)?;
        // max_{q ∈ cap} ⟨P, q⟩ = cos(max(0, ∠(P, c) − θ₀)).
        let dot: f64 = chart.pole().iter().zip(&c).map(|(a, b)| a * b).sum();
        let angle = dot.clamp(-1.0, 1.0).acos();
        let closest = if angle > radius { (angle - radius).cos() } else { 1.0 };
        if closest >= 1.0 - POLE_CLEARANCE {
            return Err(Error::Domain("projection pole lies in (or too close to) the closed domain".into()));
        }
        Ok(ChartedDomain {
            dimension,
            chart,
            shape: Shape::GeodesicCap { center: c, radius },
            grid_spacing,
        })
    }

    pub fn level_set(
        pole: &[f64],
        phi: LevelSetFn,
        center: &[f64],
        extent: f64,
        grid_spacing: f64,
    ) -> Result<Self> {
        let chart = Chart::new(pole)?;
        let dimension = chart.dim();
        if dimension < 2 {
            return Err(Error::Domain(format!("dimension must be ≥ 2, got {dimension}")));
        }
        if center.len() != dimension {
            return Err(Error::Domain("level-set center has the wrong dimension".into()));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::Domain(format!("extent must be positive, got {extent}")));
        }
        check_spacing(grid_spacing)?;
        if !(phi.eval(center) < 0.0) {
            return Err(Error::Domain("level set is not negative at its center".into()));
        }
        let domain = ChartedDomain {
            dimension,
            chart,
            shape: Shape::LevelSet { phi, center: center.to_vec(), extent },
            grid_spacing,
        };
        // The box boundary must lie outside Ω.
        for x in domain.box_surface_samples(64) {
            if domain.phi(&x) < 0.0 {
                return Err(Error::Domain("level-set domain reaches the bounding box".into()));
            }
        }
        Ok(domain)
    }

    pub fn with_grid_spacing(&self, h: f64) -> Result<Self> {
        check_spacing(h)?;
        let mut d = self.clone();
        d.grid_spacing = h;
        Ok(d)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn pole(&self) -> &[f64] {
        self.chart.pole()
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn grid_spacing(&self) -> f64 {
        self.grid_spacing
    }

    /// Level-set function in chart coordinates, negative inside Ω.
    pub fn phi(&self, x: &[f64]) -> f64 {
        match &self.shape {
            Shape::GeodesicCap { center, radius } => {
                let q = self.chart.to_sphere(x);
                radius.cos() - dot(&q, center)
            }
            Shape::LevelSet { phi, .. } => phi.eval(x),
        }
    }

    /// Chart image of the domain center.
    pub fn center_chart(&self) -> Vec<f64> {
        match &self.shape {
            Shape::GeodesicCap { center, .. } => self.chart.to_chart(center).expect("pole is outside the cap"),
            Shape::LevelSet { center, .. } => center.clone(),
        }
    }

    /// Center of Ω on the sphere.
    pub fn center_sphere(&self) -> Vec<f64> {
        match &self.shape {
            Shape::GeodesicCap { center, .. } => center.clone(),
            Shape::LevelSet { center, .. } => self.chart.to_sphere(center),
        }
    }

    /// Geodesic distance on Sⁿ from the domain center.
    pub fn polar_angle(&self, q: &[f64]) -> f64 {
        let c = self.center_sphere();
        let chord = q.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        2.0 * (0.5 * chord).min(1.0).asin()
    }

    /// Axis-aligned bounding box of the chart image.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.shape {
            Shape::GeodesicCap { center, radius } => {
                let antipodal = dot(self.chart.pole(), center) < -1.0 + 1e-14;
                if antipodal {
                    let r = (0.5 * radius).tan();
                    return (vec![-r; self.dimension], vec![r; self.dimension]);
                }
                let mut lo = vec![f64::INFINITY; self.dimension];
                let mut hi = vec![f64::NEG_INFINITY; self.dimension];
                let mut pts = self.cap_boundary_samples(2048);
                pts.push(center.clone());
                for q in pts {
                    let x = self.chart.to_chart(&q).expect("pole is outside the cap");
                    for k in 0..self.dimension {
                        lo[k] = lo[k].min(x[k]);
                        hi[k] = hi[k].max(x[k]);
                    }
                }
                // Sampling can miss the extreme point by O(spacing²); pad.
                let pad = 1e-3 * (0..self.dimension).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
                (lo.iter().map(|v| v - pad).collect(), hi.iter().map(|v| v + pad).collect())
            }
            Shape::LevelSet { center, extent, .. } => (
                center.iter().map(|c| c - extent).collect(),
                center.iter().map(|c| c + extent).collect(),
            ),
        }
    }

    /// Points of ∂Ω on the sphere.
    pub fn boundary_samples(&self, count: usize) -> Vec<Vec<f64>> {
        match &self.shape {
            Shape::GeodesicCap { .. } => self.cap_boundary_samples(count),
            Shape::LevelSet { .. } => self
                .ray_directions(count)
                .iter()
                .filter_map(|d| self.ray_boundary(d))
                .map(|x| self.chart.to_sphere(&x))
                .collect(),
        }
    }

    /// Deterministic sample of Ω̄ on the sphere: about a quarter of the points
    /// on ∂Ω, the rest spread over the interior.
    pub fn sample_points(&self, count: usize) -> Vec<Vec<f64>> {
        let n_boundary = (count / 4).max(1);
        let mut out = self.boundary_samples(n_boundary);
        let n_interior = count.saturating_sub(out.len()).max(1);
        let (lo, hi) = self.bounding_box();
        let vol: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
        // Start with a lattice fine enough to hold roughly the requested
        // count and refine once if the domain is much smaller than its box.
        let mut step = (vol / n_interior as f64).powf(1.0 / self.dimension as f64);
        for _ in 0..2 {
            let pts = self.lattice_inside(&lo, &hi, step);
            if pts.len() * 2 >= n_interior {
                out.extend(pts.into_iter().take(n_interior).map(|x| self.chart.to_sphere(&x)));
                return out;
            }
            let ratio = n_interior as f64 / pts.len().max(1) as f64;
            step /= ratio.powf(1.0 / self.dimension as f64);
        }
        let pts = self.lattice_inside(&lo, &hi, step);
        out.extend(pts.into_iter().take(n_interior).map(|x| self.chart.to_sphere(&x)));
        out
    }

    fn lattice_inside(&self, lo: &[f64], hi: &[f64], step: f64) -> Vec<Vec<f64>> {
        let counts: Vec<usize> = lo.iter().zip(hi).map(|(a, b)| ((b - a) / step).ceil() as usize + 1).collect();
        let mut out = Vec::new();
        let mut idx = vec![0usize; self.dimension];
        loop {
            let x: Vec<f64> = (0..self.dimension)
                .map(|k| (lo[k] + (idx[k] as f64 + 0.5) * step).min(hi[k]))
                .collect();
            if self.phi(&x) < 0.0 {
                out.push(x);
            }
            let mut k = 0;
            loop {
                if k == self.dimension {
                    return out;
                }
                idx[k] += 1;
                if idx[k] < counts[k] {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    fn cap_boundary_samples(&self, count: usize) -> Vec<Vec<f64>> {
        let Shape::GeodesicCap { center, radius } = &self.shape else {
            return Vec::new();
        };
        let basis = orthonormal_complement(center);
        let (s, c) = radius.sin_cos();
        self.sphere_directions(basis.len(), count)
            .into_iter()
            .map(|d| {
                let mut q: Vec<f64> = center.iter().map(|v| v * c).collect();
                for (coef, b) in d.iter().zip(&basis) {
                    for (qi, bi) in q.iter_mut().zip(b) {
                        *qi += s * coef * bi;
                    }
                }
                q
            })
            .collect()
    }

    /// Unit vectors in ℝᵐ: uniform angles for m = 2, seeded Gaussian draws otherwise.
    fn sphere_directions(&self, m: usize, count: usize) -> Vec<Vec<f64>> {
        if m == 2 {
            return (0..count)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                    vec![a.cos(), a.sin()]
                })
                .collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        (0..count)
            .map(|_| {
                let v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                v.iter().map(|a| a / n).collect()
            })
            .collect()
    }

    fn ray_directions(&self, count: usize) -> Vec<Vec<f64>> {
        self.sphere_directions(self.dimension, count)
    }

    /// First crossing of ∂Ω along a chart ray from the center.
    fn ray_boundary(&self, dir: &[f64]) -> Option<Vec<f64>> {
        let Shape::LevelSet { center, extent, .. } = &self.shape else {
            return None;
        };
        let reach = extent * (self.dimension as f64).sqrt();
        let at = |t: f64| -> Vec<f64> { center.iter().zip(dir).map(|(c, d)| c + t * d).collect() };
        let steps = 400;
        let mut prev = 0.0;
        for k in 1..=steps {
            let t = reach * k as f64 / steps as f64;
            if self.phi(&at(t)) >= 0.0 {
                let (mut a, mut b) = (prev, t);
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    if self.phi(&at(m)) < 0.0 {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                return Some(at(0.5 * (a + b)));
            }
            prev = t;
        }
        None
    }

    fn box_surface_samples(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let (lo, hi) = self.bounding_box();
        let n = self.dimension;
        let mut out = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        use rand::Rng;
        for face in 0..2 * n {
            let axis = face / 2;
            for _ in 0..per_axis * n {
                let mut x: Vec<f64> = (0..n).map(|k| rng.gen_range(lo[k]..=hi[k])).collect();
                x[axis] = if face % 2 == 0 { lo[axis] } else { hi[axis] };
                out.push(x);
            }
        }
        out
    }
}

fn check_spacing(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("grid spacing must be positive, got {h}")))
    }
}

fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if !(n > 0.0 && n.is_finite()) || v.len() < 3 {
        return Err(Error::Domain("center must be a nonzero vector in ℝⁿ⁺¹ with n ≥ 2".into()));
    }
    Ok(v.iter().map(|a| a / n).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormal basis of c⊥ by Gram–Schmidt on the standard basis.
fn orthonormal_complement(c: &[f64]) -> Vec<Vec<f64>> {
    let m = c.len();
    let mut basis: Vec<Vec<f64>> = vec![c.to_vec()];
    for k in 0..m {
        let mut v = vec![0.0; m];
        v[k] = 1.0;
        for b in &basis {
            let d = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-8 {
            basis.push(v.iter().map(|x| x / n).collect());
        }
        if basis.len() == m {
            break;
        }
    }
    basis.remove(0);
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn cap_boundary_projects_to_disk() {
        for theta0 in [0.3, PI / 3.0, PI / 2.0, 2.5] {
            let d = ChartedDomain::south_cap(2, theta0, 0.1).unwrap();
            let r = (0.5 * theta0).tan();
            for q in d.boundary_samples(500) {
                let x = d.chart().to_chart(&q).unwrap();
                let rad = (x[0] * x[0] + x[1] * x[1]).sqrt();
                assert!((rad - r).abs() < 1e-12, "θ₀={theta0}: {rad} vs {r}");
            }
        }
    }

    #[test]
    fn hemisphere_boundary_is_unit_circle() {
        let d = ChartedDomain::cap(&[0.0, 0.0, 1.0], PI / 2.0, 0.1).unwrap();
        for q in d.boundary_samples(100) {
            let x = d.chart().to_chart(&q).unwrap();
            assert!(((x[0] * x[0] + x[1] * x[1]).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pole_clearance_is_enforced() {
        let center = [0.0, 0.0, -1.0];
        // Pole inside the cap.
        assert!(ChartedDomain::cap_with_pole(&center, 1.0, &[0.0, 0.0, -1.0], 0.1).is_err());
        // Pole on the cap boundary.
        let t: f64 = 2.0;
        let on_boundary = [t.sin(), 0.0, -t.cos()];
        assert!(ChartedDomain::cap_with_pole(&center, 2.0, &on_boundary, 0.1).is_err());
        let ok = ChartedDomain::cap_with_pole(&center, 1.0, &[0.0, 0.6, 0.8], 0.1).unwrap();
        for q in ok.sample_points(400) {
            assert!(dot(ok.pole(), &q) < 1.0 - POLE_CLEARANCE);
        }
    }

    #[test]
    fn phi_sign_convention() {
        let d = ChartedDomain::south_cap(2, 1.0, 0.1).unwrap();
        assert!(d.phi(&d.center_chart()) < 0.0);
        assert!(d.phi(&[5.0, 0.0]) > 0.0);
        let ls = ChartedDomain::level_set(
            &[0.0, 0.0, 1.0],
            LevelSetFn::new(|x| x[0] * x[0] + 2.0 * x[1] * x[1] - 0.25),
            &[0.0, 0.0],
            0.6,
            0.05,
        )
        .unwrap();
        assert!(ls.phi(&[0.0, 0.0]) < 0.0 && ls.phi(&[0.6, 0.0]) > 0.0);
    }

    #[test]
    fn level_set_must_fit_in_box() {
        let r = ChartedDomain::level_set(
            &[0.0, 0.0, 1.0],
            LevelSetFn::new(|x| x[0] * x[0] + x[1] * x[1] - 1.0),
            &[0.0, 0.0],
            0.5,
            0.05,
        );
        assert!(r.is_err());
    }

    #[test]
    fn samples_lie_in_closed_domain() {
        let d = ChartedDomain::cap_with_pole(&[0.0, 0.0, -1.0], 0.8, &[0.6, 0.0, 0.8], 0.1).unwrap();
        let pts = d.sample_points(2000);
        assert!(pts.len() >= 1500);
        for q in pts {
            assert!(d.polar_angle(&q) <= 0.8 + 1e-12);
        }
    }

    #[test]
    fn general_pole_bounding_box_contains_image() {
        let d = ChartedDomain::cap_with_pole(&[0.0, 0.0, -1.0], 0.8, &[0.6, 0.0, 0.8], 0.1).unwrap();
        let (lo, hi) = d.bounding_box();
        for q in d.sample_points(1000) {
            let x = d.chart().to_chart(&q).unwrap();
            for k in 0..2 {
                assert!(x[k] >= lo[k] && x[k] <= hi[k]);
            }
        }
    }

    #[test]
    fn higher_dimensional_caps() {
        let d = ChartedDomain::south_cap(3, 1.2, 0.2).unwrap();
        let r = 0.6f64.tan();
        for q in d.boundary_samples(200) {
            let x = d.chart().to_chart(&q).unwrap();
            let rad = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((rad - r).abs() < 1e-12);
        }
    }
}
