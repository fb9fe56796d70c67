//! Classified finite-difference lattice over the chart image of Ω.
//!
//! Unknowns live at lattice nodes strictly inside Ω. Arms cut by ∂Ω end at
//! boundary points found by bisection of the level-set function, and every
//! derivative stencil is stored as a sparse combination of unknowns and
//! boundary points.

use std::collections::{HashMap, VecDeque};

use nalgebra::DMatrix;

use super::domain::ChartedDomain;
use crate::error::{Error, Result};

/// Arms shorter than `SIGMA_MIN·h` snap their node onto the boundary.
pub const SIGMA_MIN: f64 = 1e-6;

/// Minimum number of INTERIOR nodes for a usable grid.
pub const MIN_INTERIOR_NODES: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Unknown(usize),
    Boundary(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    /// All 2n axis neighbors are unknowns.
    Interior,
    /// At least one axis neighbor is a boundary point.
    Irregular,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arm {
    /// Arm length in units of h, in (0, 1].
    pub fraction: f64,
    pub target: Slot,
}

#[derive(Clone, Debug)]
pub struct GridNode {
    pub index: Vec<i64>,
    pub x: Vec<f64>,
    pub kind: NodeKind,
    /// Arm `2k` points along +e_k, arm `2k+1` along −e_k.
    pub arms: Vec<Arm>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryOrigin {
    /// Lattice node lying on (or within σ_min·h of) ∂Ω.
    Lattice { index: Vec<i64> },
    /// Crossing of ∂Ω on the arm `arm` of unknown `node`.
    Crossing { node: usize, arm: usize },
}

#[derive(Clone, Debug)]
pub struct BoundaryPoint {
    pub x: Vec<f64>,
    pub origin: BoundaryOrigin,
}

/// Sparse linear functional over unknowns and boundary points.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StencilRow {
    pub entries: Vec<(Slot, f64)>,
}

impl StencilRow {
    /// Applies the row with homogeneous boundary values.
    pub fn apply(&self, values: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|(s, w)| match s {
                Slot::Unknown(i) => w * values[*i],
                Slot::Boundary(_) => 0.0,
            })
            .sum()
    }

    pub fn apply_with_boundary(&self, values: &[f64], boundary: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|(s, w)| match s {
                Slot::Unknown(i) => w * values[*i],
                Slot::Boundary(j) => w * boundary[*j],
            })
            .sum()
    }

    fn push(&mut self, slot: Slot, w: f64) {
        if let Some(e) = self.entries.iter_mut().find(|(s, _)| *s == slot) {
            e.1 += w;
        } else {
            self.entries.push((slot, w));
        }
    }
}

#[derive(Clone, Debug)]
pub struct NodeStencil {
    /// ∂_k for k = 0..n.
    pub first: Vec<StencilRow>,
    /// ∂²_kl, row-major n×n (symmetric entries share weights).
    pub second: Vec<StencilRow>,
    /// Whether each mixed derivative uses the centered cross stencil.
    pub centered_mixed: bool,
}

#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct GridDiagnostics {
    pub unknowns: usize,
    pub interior: usize,
    pub irregular: usize,
    pub boundary_points: usize,
    pub snapped_nodes: usize,
    pub fitted_mixed_stencils: usize,
    pub min_arm_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct Grid {
    dim: usize,
    spacing: f64,
    nodes: Vec<GridNode>,
    boundary: Vec<BoundaryPoint>,
    slots: HashMap<Vec<i64>, Slot>,
    stencils: Vec<NodeStencil>,
    diagnostics: GridDiagnostics,
}

impl Grid {
    pub fn build(domain: &ChartedDomain) -> Result<Grid> {
        build_grid(domain)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[GridNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &GridNode {
        &self.nodes[i]
    }

    pub fn boundary(&self) -> &[BoundaryPoint] {
        &self.boundary
    }

    pub fn stencil(&self, i: usize) -> &NodeStencil {
        &self.stencils[i]
    }

    pub fn slot(&self, index: &[i64]) -> Option<Slot> {
        self.slots.get(index).copied()
    }

    pub fn diagnostics(&self) -> &GridDiagnostics {
        &self.diagnostics
    }

    /// Chart position of a slot.
    pub fn position(&self, slot: Slot) -> &[f64] {
        match slot {
            Slot::Unknown(i) => &self.nodes[i].x,
            Slot::Boundary(j) => &self.boundary[j].x,
        }
    }

    /// Unknown closest to the chart point `x`.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, n) in self.nodes.iter().enumerate() {
            let d: f64 = n.x.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Unknowns whose whole 3ⁿ lattice block consists of unknowns or
    /// boundary lattice nodes.
    pub fn full_block_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.has_full_block(i)).collect()
    }

    pub fn has_full_block(&self, i: usize) -> bool {
        let base = &self.nodes[i].index;
        let mut offset = vec![-1i64; self.dim];
        loop {
            let idx: Vec<i64> = base.iter().zip(&offset).map(|(a, b)| a + b).collect();
            if self.slots.get(&idx).is_none() {
                return false;
            }
            let mut k = 0;
            loop {
                if k == self.dim {
                    return true;
                }
                offset[k] += 1;
                if offset[k] <= 1 {
                    break;
                }
                offset[k] = -1;
                k += 1;
            }
        }
    }

    /// Stable fingerprint of the unknown layout (spacing and lattice indices).
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update(self.spacing.to_bits().to_le_bytes());
        for n in &self.nodes {
            for v in &n.index {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn build_grid(domain: &ChartedDomain) -> Result<Grid> {
    let n = domain.dimension();
    let h = domain.grid_spacing();
    let (lo, hi) = domain.bounding_box();
    let lo_idx: Vec<i64> = lo.iter().map(|v| (v / h).floor() as i64 - 1).collect();
    let hi_idx: Vec<i64> = hi.iter().map(|v| (v / h).ceil() as i64 + 1).collect();
    let extent: Vec<usize> = lo_idx.iter().zip(&hi_idx).map(|(a, b)| (b - a + 1) as usize).collect();
    let total: usize = extent.iter().product();
    if total > 50_000_000 {
        return Err(Error::Domain(format!("lattice with {total} points exceeds the supported size")));
    }
    let strides: Vec<usize> = (0..n).map(|k| extent[..k].iter().product()).collect();
    let flat = |idx: &[i64]| -> Option<usize> {
        let mut f = 0;
        for k in 0..n {
            if idx[k] < lo_idx[k] || idx[k] > hi_idx[k] {
                return None;
            }
            f += (idx[k] - lo_idx[k]) as usize * strides[k];
        }
        Some(f)
    };
    let unflat = |mut f: usize| -> Vec<i64> {
        let mut idx = vec![0i64; n];
        for k in 0..n {
            idx[k] = lo_idx[k] + (f % extent[k]) as i64;
            f /= extent[k];
        }
        idx
    };
    let pos = |idx: &[i64]| -> Vec<f64> { idx.iter().map(|&i| i as f64 * h).collect() };

    let phi: Vec<f64> = (0..total).map(|f| domain.phi(&pos(&unflat(f)))).collect();

    let neighbor = |idx: &[i64], dir: usize| -> Vec<i64> {
        let mut j = idx.to_vec();
        j[dir / 2] += if dir % 2 == 0 { 1 } else { -1 };
        j
    };

    // Raw arm fractions for every inside lattice point.
    let mut raw: HashMap<usize, Vec<f64>> = HashMap::new();
    for f in 0..total {
        if !(phi[f] < 0.0) {
            continue;
        }
        let idx = unflat(f);
        let x = pos(&idx);
        let mut fr = Vec::with_capacity(2 * n);
        for dir in 0..2 * n {
            let nb = neighbor(&idx, dir);
            let phi_nb = match flat(&nb) {
                Some(g) => phi[g],
                None => return Err(Error::Domain("domain reaches the lattice edge".into())),
            };
            if phi_nb < 0.0 || phi_nb == 0.0 {
                fr.push(1.0);
            } else {
                let y = pos(&nb);
                fr.push(crossing_fraction(domain, &x, &y, phi[f]));
            }
        }
        raw.insert(f, fr);
    }

    // Classify: unknowns vs boundary lattice nodes (on ∂Ω or snapped).
    let mut order: Vec<usize> = raw.keys().copied().collect();
    order.sort_unstable_by_key(|&f| {
        let idx = unflat(f);
        // Lexicographic with the last axis slowest keeps bandwidth small.
        idx.iter().rev().copied().collect::<Vec<_>>()
    });
    let mut slots: HashMap<Vec<i64>, Slot> = HashMap::new();
    let mut boundary: Vec<BoundaryPoint> = Vec::new();
    let mut nodes: Vec<GridNode> = Vec::new();
    let mut node_flat: Vec<usize> = Vec::new();
    let mut snapped = 0;
    for &f in &order {
        let idx = unflat(f);
        let min_arm = raw[&f].iter().copied().fold(f64::INFINITY, f64::min);
        if min_arm < SIGMA_MIN {
            snapped += 1;
            slots.insert(idx.clone(), Slot::Boundary(boundary.len()));
            boundary.push(BoundaryPoint { x: pos(&idx), origin: BoundaryOrigin::Lattice { index: idx } });
        } else {
            slots.insert(idx.clone(), Slot::Unknown(nodes.len()));
            nodes.push(GridNode { x: pos(&idx), index: idx, kind: NodeKind::Interior, arms: Vec::new() });
            node_flat.push(f);
        }
    }
    // Lattice points exactly on ∂Ω next to an unknown.
    for i in 0..nodes.len() {
        for dir in 0..2 * n {
            let nb = neighbor(&nodes[i].index, dir);
            let g = flat(&nb).expect("checked above");
            if phi[g] == 0.0 && !slots.contains_key(&nb) {
                slots.insert(nb.clone(), Slot::Boundary(boundary.len()));
                boundary.push(BoundaryPoint { x: pos(&nb), origin: BoundaryOrigin::Lattice { index: nb } });
            }
        }
    }

    // Arms.
    let mut min_fraction = 1.0f64;
    for i in 0..nodes.len() {
        let fr = raw[&node_flat[i]].clone();
        let mut arms = Vec::with_capacity(2 * n);
        let mut kind = NodeKind::Interior;
        for (dir, &sigma) in fr.iter().enumerate() {
            let nb = neighbor(&nodes[i].index, dir);
            let arm = match slots.get(&nb) {
                Some(&Slot::Unknown(j)) => Arm { fraction: 1.0, target: Slot::Unknown(j) },
                Some(&Slot::Boundary(j)) => {
                    kind = NodeKind::Irregular;
                    Arm { fraction: 1.0, target: Slot::Boundary(j) }
                }
                None => {
                    kind = NodeKind::Irregular;
                    let mut x = nodes[i].x.clone();
                    x[dir / 2] += if dir % 2 == 0 { sigma * h } else { -sigma * h };
                    boundary.push(BoundaryPoint { x, origin: BoundaryOrigin::Crossing { node: i, arm: dir } });
                    Arm { fraction: sigma, target: Slot::Boundary(boundary.len() - 1) }
                }
            };
            min_fraction = min_fraction.min(arm.fraction);
            arms.push(arm);
        }
        nodes[i].arms = arms;
        nodes[i].kind = kind;
    }

    let interior = nodes.iter().filter(|nd| nd.kind == NodeKind::Interior).count();
    if interior < MIN_INTERIOR_NODES {
        return Err(Error::TooCoarse(format!(
            "{interior} interior nodes at h = {h} (need at least {MIN_INTERIOR_NODES})"
        )));
    }
    let components = count_components(&nodes);
    if components != 1 {
        return Err(Error::Disconnected { components });
    }

    let mut grid = Grid {
        dim: n,
        spacing: h,
        nodes,
        boundary,
        slots,
        stencils: Vec::new(),
        diagnostics: GridDiagnostics::default(),
    };
    let mut fitted = 0;
    let mut stencils = Vec::with_capacity(grid.nodes.len());
    for i in 0..grid.nodes.len() {
        let s = node_stencil(&grid, i)?;
        if !s.centered_mixed {
            fitted += 1;
        }
        stencils.push(s);
    }
    grid.stencils = stencils;
    grid.diagnostics = GridDiagnostics {
        unknowns: grid.nodes.len(),
        interior,
        irregular: grid.nodes.len() - interior,
        boundary_points: grid.boundary.len(),
        snapped_nodes: snapped,
        fitted_mixed_stencils: fitted,
        min_arm_fraction: min_fraction,
    };
    Ok(grid)
}

/// Fraction along x→y where φ changes sign, bisected to 1e−12 of the arm.
fn crossing_fraction(domain: &ChartedDomain, x: &[f64], y: &[f64], phi_x: f64) -> f64 {
    debug_assert!(phi_x < 0.0);
    let at = |t: f64| -> Vec<f64> { x.iter().zip(y).map(|(a, b)| a + t * (b - a)).collect() };
    let (mut a, mut b) = (0.0f64, 1.0f64);
    while b - a > 1e-12 {
        let m = 0.5 * (a + b);
        if domain.phi(&at(m)) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn count_components(nodes: &[GridNode]) -> usize {
    let mut seen = vec![false; nodes.len()];
    let mut components = 0;
    for start in 0..nodes.len() {
        if seen[start] {
            continue;
        }
        components += 1;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            for arm in &nodes[i].arms {
                if let Slot::Unknown(j) = arm.target {
                    if !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    components
}

fn node_stencil(grid: &Grid, i: usize) -> Result<NodeStencil> {
    let n = grid.dim;
    let h = grid.spacing;
    let node = &grid.nodes[i];
    let me = Slot::Unknown(i);
    let mut first = Vec::with_capacity(n);
    let mut second = vec![StencilRow::default(); n * n];
    for k in 0..n {
        let plus = node.arms[2 * k];
        let minus = node.arms[2 * k + 1];
        let (a, b) = (plus.fraction, minus.fraction);
        // Three-point first derivative on arms a·h (forward) and b·h (backward).
        let mut d1 = StencilRow::default();
        d1.push(plus.target, b / (h * a * (a + b)));
        d1.push(minus.target, -a / (h * b * (a + b)));
        d1.push(me, (a - b) / (h * a * b));
        first.push(d1);
        // Shortley–Weller second derivative.
        let mut d2 = StencilRow::default();
        d2.push(plus.target, 2.0 / (h * h * a * (a + b)));
        d2.push(minus.target, 2.0 / (h * h * b * (a + b)));
        d2.push(me, -2.0 / (h * h * a * b));
        second[k * n + k] = d2;
    }
    let mut centered_mixed = true;
    for k in 0..n {
        for l in (k + 1)..n {
            let row = match cross_stencil(grid, i, k, l) {
                Some(r) => r,
                None => {
                    centered_mixed = false;
                    fitted_mixed(grid, i, k, l)?
                }
            };
            second[k * n + l] = row.clone();
            second[l * n + k] = row;
        }
    }
    Ok(NodeStencil { first, second, centered_mixed })
}

fn cross_stencil(grid: &Grid, i: usize, k: usize, l: usize) -> Option<StencilRow> {
    let h = grid.spacing;
    let base = &grid.nodes[i].index;
    let mut row = StencilRow::default();
    for (dk, dl, sign) in [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
        let mut idx = base.clone();
        idx[k] += dk;
        idx[l] += dl;
        let slot = grid.slots.get(&idx)?;
        row.push(*slot, sign / (4.0 * h * h));
    }
    Some(row)
}

/// Weighted least-squares polynomial fit in the (e_k, e_l) plane through
/// nearby unknowns and boundary points; returns the weights of ∂²_kl.
///
/// A cubic fit over the radius-2 window keeps the stencil second order; a
/// quadratic fit is the fallback when the cubic is ill-conditioned.
fn fitted_mixed(grid: &Grid, i: usize, k: usize, l: usize) -> Result<StencilRow> {
    let h = grid.spacing;
    let base = &grid.nodes[i].index;
    let origin = &grid.nodes[i].x;
    for (radius, degree) in [(2i64, 3usize), (1, 2), (2, 2)] {
        let reach = radius as f64 + 1e-12;
        let mut pts: Vec<(Slot, f64, f64)> = Vec::new();
        let add = |slot: Slot, x: &[f64], pts: &mut Vec<(Slot, f64, f64)>| {
            if pts.iter().any(|(s, _, _)| *s == slot) {
                return;
            }
            let a = (x[k] - origin[k]) / h;
            let b = (x[l] - origin[l]) / h;
            if a.abs() <= reach && b.abs() <= reach {
                pts.push((slot, a, b));
            }
        };
        for dk in -radius..=radius {
            for dl in -radius..=radius {
                let mut idx = base.clone();
                idx[k] += dk;
                idx[l] += dl;
                let Some(&slot) = grid.slots.get(&idx) else { continue };
                add(slot, grid.position(slot), &mut pts);
                if let Slot::Unknown(j) = slot {
                    for dir in [2 * k, 2 * k + 1, 2 * l, 2 * l + 1] {
                        let arm = grid.nodes[j].arms[dir];
                        if let Slot::Boundary(_) = arm.target {
                            add(arm.target, grid.position(arm.target), &mut pts);
                        }
                    }
                }
            }
        }
        let terms = monomials(degree);
        let cols = terms.len();
        if pts.len() < cols + 2 {
            continue;
        }
        let m = pts.len();
        let mut v = DMatrix::<f64>::zeros(m, cols);
        let mut vw = DMatrix::<f64>::zeros(m, cols);
        for (r, &(_, a, b)) in pts.iter().enumerate() {
            let w = 1.0 / (0.25 + a * a + b * b);
            for (c, &(p, q)) in terms.iter().enumerate() {
                let val = a.powi(p) * b.powi(q);
                v[(r, c)] = val;
                vw[(r, c)] = w * val;
            }
        }
        let normal = v.transpose() * &vw;
        let svd = normal.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 1e-10 * smax) {
            continue;
        }
        let Some(inv) = normal.try_inverse() else { continue };
        // ∂²_kl u = c_ab / h² where c_ab multiplies a·b.
        let ab = terms.iter().position(|&t| t == (1, 1)).expect("degree ≥ 2");
        let coef = inv.row(ab) * vw.transpose();
        let mut row = StencilRow::default();
        for (r, &(slot, _, _)) in pts.iter().enumerate() {
            row.push(slot, coef[r] / (h * h));
        }
        return Ok(row);
    }
    Err(Error::Domain(format!("cannot fit a mixed-derivative stencil at unknown {i}")))
}

fn monomials(degree: usize) -> Vec<(i32, i32)> {
    let mut out = Vec::new();
    for d in 0..=degree as i32 {
        for p in (0..=d).rev() {
            out.push((p, d - p));
        }
    }
    out
}
