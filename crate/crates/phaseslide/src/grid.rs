//! Uniform tensor grids of the box domain, nodal scalar fields, and the
//! quadrature-weighted norms used throughout.
//!
//! Storage is vertex-centered: a grid with `cells` cells per axis carries
//! `cells + 1` nodes per axis, boundary nodes included. Quadrature assigns
//! each node the measure of its dual cell (half cells at the boundary), so
//! the weights sum to the domain measure exactly and constants integrate
//! exactly.

use std::sync::Arc;

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 2;

/// Uniform tensor mesh of the box domain `(0, extent_1) x ... x (0, extent_d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    cells: Vec<usize>,
    extent: Vec<f64>,
    spacing: Vec<f64>,
    measure: f64,
}

/// `build_grid`: validate and derive spacing and measure.
pub fn build_grid(dim: usize, cells: &[usize], extent: &[f64]) -> Result<Arc<Grid>> {
    if dim < 1 || dim > MAX_DIM {
        return Err(Error::Config(format!(
            "grid dimension must be 1 or 2, got {dim}"
        )));
    }
    if cells.len() != dim || extent.len() != dim {
        return Err(Error::Config(format!(
            "grid needs {dim} cell counts and {dim} extents, got {} and {}",
            cells.len(),
            extent.len()
        )));
    }
    for (axis, &c) in cells.iter().enumerate() {
        if c < 4 {
            return Err(Error::Config(format!(
                "axis {axis}: at least 4 cells required, got {c}"
            )));
        }
    }
    for (axis, &e) in extent.iter().enumerate() {
        if !(e > 0.0) || !e.is_finite() {
            return Err(Error::Config(format!(
                "axis {axis}: extent must be positive and finite, got {e}"
            )));
        }
    }
    let spacing: Vec<f64> = cells
        .iter()
        .zip(extent)
        .map(|(&c, &e)| e / c as f64)
        .collect();
    let measure = extent.iter().product();
    Ok(Arc::new(Grid {
        dim,
        cells: cells.to_vec(),
        extent: extent.to_vec(),
        spacing,
        measure,
    }))
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Lebesgue measure of the box.
    pub fn measure(&self) -> f64 {
        self.measure
    }

    /// Nodes along one axis (cells + 1).
    pub fn nodes_along(&self, axis: usize) -> usize {
        self.cells[axis] + 1
    }

    pub fn node_count(&self) -> usize {
        (0..self.dim).map(|a| self.nodes_along(a)).product()
    }

    /// Row-major node index; in 2d the x index varies fastest.
    pub fn node_index(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nodes_along(0));
        if self.dim == 1 {
            ix
        } else {
            iy * self.nodes_along(0) + ix
        }
    }

    pub fn node_coords(&self, idx: usize) -> (usize, usize) {
        if self.dim == 1 {
            (idx, 0)
        } else {
            let nx = self.nodes_along(0);
            (idx % nx, idx / nx)
        }
    }

    /// Physical position of a node.
    pub fn node_position(&self, idx: usize) -> Vec<f64> {
        let (ix, iy) = self.node_coords(idx);
        let mut p = vec![ix as f64 * self.spacing[0]];
        if self.dim == 2 {
            p.push(iy as f64 * self.spacing[1]);
        }
        p
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let (ix, iy) = self.node_coords(idx);
        if ix == 0 || ix == self.cells[0] {
            return true;
        }
        self.dim == 2 && (iy == 0 || iy == self.cells[1])
    }

    /// Boundary node indices in row-major node order. This order defines how
    /// tabulated boundary data files are read.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&i| self.is_boundary(i))
            .collect()
    }

    /// Dual-cell quadrature weight of a node: product over axes of the
    /// spacing, halved at axis endpoints. Weights sum to `measure()` exactly.
    pub fn quad_weight(&self, idx: usize) -> f64 {
        let (ix, iy) = self.node_coords(idx);
        let wx = axis_weight(ix, self.cells[0], self.spacing[0]);
        if self.dim == 1 {
            wx
        } else {
            wx * axis_weight(iy, self.cells[1], self.spacing[1])
        }
    }

    pub fn same_mesh(&self, other: &Grid) -> bool {
        self == other
    }
}

fn axis_weight(i: usize, cells: usize, h: f64) -> f64 {
    if i == 0 || i == cells {
        0.5 * h
    } else {
        h
    }
}

/// Nodal values of a scalar quantity on a [`Grid`].
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        ScalarField {
            grid: Arc::clone(grid),
            values: vec![c; grid.node_count()],
        }
    }

    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::GridMismatch(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        Ok(ScalarField {
            grid: Arc::clone(grid),
            values,
        })
    }

    /// Sample a function of the node position.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.node_count())
            .map(|i| f(&grid.node_position(i)))
            .collect();
        ScalarField {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Nodal sup norm; 0 for the zero field.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Quadrature-weighted L2 norm (dual-cell weights, exact for constants).
    pub fn l2_norm(&self) -> f64 {
        self.l2_inner(self).sqrt()
    }

    /// Quadrature-weighted inner product.
    pub fn l2_inner(&self, other: &ScalarField) -> f64 {
        debug_assert!(self.grid.same_mesh(&other.grid));
        let mut s = 0.0;
        for i in 0..self.values.len() {
            s += self.grid.quad_weight(i) * self.values[i] * other.values[i];
        }
        s
    }

    /// Quadrature of the nodal values (integral of the piecewise field).
    pub fn integral(&self) -> f64 {
        (0..self.values.len())
            .map(|i| self.grid.quad_weight(i) * self.values[i])
            .sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        debug_assert!(self.grid.same_mesh(&other.grid));
        ScalarField {
            grid: Arc::clone(&self.grid),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &ScalarField) {
        debug_assert!(self.grid.same_mesh(&other.grid));
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += alpha * o;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in self.values.iter_mut() {
            *v *= alpha;
        }
    }

    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }
}

/// Final time and step count; `steps * dt` must reproduce the horizon to one
/// part in 1e12.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeConfig {
    pub horizon: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeConfig {
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!(
                "time.horizon must be positive, got {horizon}"
            )));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("time.dt must be positive, got {dt}")));
        }
        let steps = (horizon / dt).round();
        if steps < 1.0 || (steps * dt - horizon).abs() > 1e-12 * horizon.abs() {
            return Err(Error::Config(format!(
                "time.dt = {dt} does not divide time.horizon = {horizon} exactly"
            )));
        }
        Ok(TimeConfig {
            horizon,
            dt,
            steps: steps as usize,
        })
    }
}
