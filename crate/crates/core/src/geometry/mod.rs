//! Stereographic charts of Sⁿ, charted domains, their finite-difference
//! grids, and nodal fields with frame-covariant derivatives.

pub mod chart;
pub mod domain;
pub mod grid;

pub use chart::{
    chart_to_sphere, christoffel, conformal_factor, frame_from_partials, log_conformal_gradient, sphere_to_chart, Chart,
};
pub use domain::{ChartedDomain, LevelSetFn, Shape, POLE_CLEARANCE};
pub use grid::{
    Arm, BoundaryOrigin, BoundaryPoint, Grid, GridDiagnostics, GridNode, NodeKind, NodeStencil, Slot, StencilRow,
    MIN_INTERIOR_NODES, SIGMA_MIN,
};

use crate::error::{Error, Result};

/// Nodal values on the unknowns of a grid; boundary values are implicitly 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::FieldLength { expected: grid.len(), got: values.len() });
        }
        Self::from_values(values)
    }

    /// Wraps values without a grid; only finiteness is checked.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value at unknown {i}")));
        }
        Ok(ScalarField { values })
    }

    pub fn zeros(grid: &Grid) -> Self {
        ScalarField { values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: &Grid, c: f64) -> Result<Self> {
        Self::new(grid, vec![c; grid.len()])
    }

    /// Samples `f` at the chart position of every unknown.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        Self::new(grid, grid.nodes().iter().map(|n| f(&n.x)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_distance(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Chart partials and orthonormal-frame derivatives at one unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDerivatives {
    /// ∂_k u.
    pub partials: Vec<f64>,
    /// ∂²_kl u, row-major n×n.
    pub second: Vec<f64>,
    /// u_i = λ⁻¹∂_i u.
    pub grad: Vec<f64>,
    /// u_ij, row-major n×n.
    pub hess: Vec<f64>,
}

impl FrameDerivatives {
    pub fn grad_norm_sq(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum()
    }
}

/// Frame derivatives of a field with zero boundary values.
pub fn frame_derivatives(field: &ScalarField, grid: &Grid, node: usize) -> FrameDerivatives {
    derivatives_impl(grid, node, |row| row.apply(field.values()))
}

/// Frame derivatives with explicit values at the grid's boundary points.
pub fn frame_derivatives_with_boundary(values: &[f64], boundary: &[f64], grid: &Grid, node: usize) -> FrameDerivatives {
    derivatives_impl(grid, node, |row| row.apply_with_boundary(values, boundary))
}

fn derivatives_impl(grid: &Grid, node: usize, apply: impl Fn(&StencilRow) -> f64) -> FrameDerivatives {
    let s = grid.stencil(node);
    let partials: Vec<f64> = s.first.iter().map(&apply).collect();
    let second: Vec<f64> = s.second.iter().map(&apply).collect();
    let (grad, hess) = frame_from_partials(&grid.node(node).x, &partials, &second);
    FrameDerivatives { partials, second, grad, hess }
}
