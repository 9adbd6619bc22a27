//! Periodic cell-centered grids on the unit torus `[0,1)^n` and the discrete
//! calculus used by every other module.
//!
//! Cells are indexed with axis 0 varying fastest:
//! `flat = i0 + N * (i1 + N * i2)`. Neighbour lookups wrap modulo `N` on
//! every axis, so fields are exactly periodic and no ghost cells exist.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest admissible number of cells per axis.
pub const MIN_CELLS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("unsupported dimension {0}: only n = 1, 2, 3 are supported")]
    UnsupportedDimension(usize),
    #[error("grid too coarse: {0} cells per axis, need at least {MIN_CELLS}")]
    TooCoarse(usize),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("grid mismatch between operands")]
    GridMismatch,
}

/// A uniform periodic grid with `cells_per_axis^dim` cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    cells_per_axis: usize,
}

impl Grid {
    pub fn new(dim: usize, cells_per_axis: usize) -> Result<Self, GridError> {
        if !(1..=3).contains(&dim) {
            return Err(GridError::UnsupportedDimension(dim));
        }
        if cells_per_axis < MIN_CELLS {
            return Err(GridError::TooCoarse(cells_per_axis));
        }
        Ok(Self { dim, cells_per_axis })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.cells_per_axis as f64
    }

    pub fn cell_count(&self) -> usize {
        self.cells_per_axis.pow(self.dim as u32)
    }

    /// Volume of one cell, `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    fn stride(&self, axis: usize) -> usize {
        self.cells_per_axis.pow(axis as u32)
    }

    /// Per-axis integer index of a flat cell index.
    pub fn multi_index(&self, cell: usize) -> [usize; 3] {
        let n = self.cells_per_axis;
        let mut idx = [0usize; 3];
        let mut rest = cell;
        for slot in idx.iter_mut().take(self.dim) {
            *slot = rest % n;
            rest /= n;
        }
        idx
    }

    /// Cell-center coordinates `(i + 1/2) h`; unused axes are 0.
    pub fn center(&self, cell: usize) -> [f64; 3] {
        let h = self.spacing();
        let idx = self.multi_index(cell);
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = (idx[k] as f64 + 0.5) * h;
        }
        x
    }

    /// Flat index of the cell displaced by `offset` cells along `axis`, with wrap.
    pub fn shift(&self, cell: usize, axis: usize, offset: isize) -> usize {
        debug_assert!(axis < self.dim);
        let n = self.cells_per_axis as isize;
        let stride = self.stride(axis);
        let i = ((cell / stride) % self.cells_per_axis) as isize;
        let j = (i + offset).rem_euclid(n) as usize;
        cell - (i as usize) * stride + j * stride
    }

    pub fn plus(&self, cell: usize, axis: usize) -> usize {
        self.shift(cell, axis, 1)
    }

    pub fn minus(&self, cell: usize, axis: usize) -> usize {
        self.shift(cell, axis, -1)
    }

    /// Sample `func` at every cell center.
    pub fn sample<F: FnMut([f64; 3]) -> f64>(&self, mut func: F) -> ScalarField {
        let values = (0..self.cell_count()).map(|c| func(self.center(c))).collect();
        ScalarField { grid: *self, values }
    }
}

/// Builds a grid, validating dimension and resolution.
pub fn build_grid(dim: usize, cells_per_axis: usize) -> Result<Grid, GridError> {
    Grid::new(dim, cells_per_axis)
}

/// One real value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.cell_count() {
            return Err(GridError::Shape {
                expected: format!("{} values", grid.cell_count()),
                got: format!("{} values", values.len()),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self { grid, values: vec![value; grid.cell_count()] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, func: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| func(v)).collect() }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &ScalarField, func: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| func(a, b)).collect();
        Self { grid: self.grid, values }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Index of the first cell where `pred` fails, if any.
    pub fn find(&self, pred: impl Fn(f64) -> bool) -> Option<usize> {
        self.values.iter().position(|&v| pred(v))
    }
}

/// `dim` components per cell, stored component-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, components: vec![vec![0.0; grid.cell_count()]; grid.dim()] }
    }

    pub fn from_components(grid: Grid, components: Vec<Vec<f64>>) -> Result<Self, GridError> {
        if components.len() != grid.dim() || components.iter().any(|c| c.len() != grid.cell_count()) {
            return Err(GridError::Shape {
                expected: format!("{} x {}", grid.dim(), grid.cell_count()),
                got: format!(
                    "{} x {:?}",
                    components.len(),
                    components.iter().map(Vec::len).collect::<Vec<_>>()
                ),
            });
        }
        Ok(Self { grid, components })
    }

    /// Sample a vector-valued function at cell centers.
    pub fn sample(grid: Grid, func: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let mut out = Self::zeros(grid);
        for c in 0..grid.cell_count() {
            let v = func(grid.center(c));
            for k in 0..grid.dim() {
                out.components[k][c] = v[k];
            }
        }
        out
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn components_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.components
    }

    pub fn at(&self, cell: usize) -> [f64; 3] {
        let mut v = [0.0; 3];
        for (k, comp) in self.components.iter().enumerate() {
            v[k] = comp[cell];
        }
        v
    }

    pub fn scale(&self, factor: f64) -> Self {
        let components =
            self.components.iter().map(|c| c.iter().map(|v| v * factor).collect()).collect();
        Self { grid: self.grid, components }
    }

    /// Pointwise squared Euclidean norm.
    pub fn norm_squared(&self) -> ScalarField {
        let values = (0..self.grid.cell_count())
            .map(|c| self.components.iter().map(|comp| comp[c] * comp[c]).sum())
            .collect();
        ScalarField { grid: self.grid, values }
    }

    /// Largest pointwise Euclidean norm.
    pub fn sup_norm(&self) -> f64 {
        self.norm_squared().max().max(0.0).sqrt()
    }

    /// Pointwise dot product with another vector field.
    pub fn dot(&self, other: &VectorField) -> ScalarField {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        let values = (0..self.grid.cell_count())
            .map(|c| self.components.iter().zip(&other.components).map(|(a, b)| a[c] * b[c]).sum())
            .collect();
        ScalarField { grid: self.grid, values }
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().flatten().all(|v| v.is_finite())
    }
}

/// Face-centered fluxes: `flux[k][c]` lives on the `+e_k` face of cell `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFlux {
    pub per_axis: Vec<Vec<f64>>,
}

/// Midpoint-rule integral `h^n * sum(values)`.
pub fn integrate(field: &ScalarField) -> f64 {
    field.grid.cell_volume() * field.values.iter().sum::<f64>()
}

/// Second-order centered gradient with periodic wrap.
pub fn centered_gradient(field: &ScalarField) -> VectorField {
    let grid = field.grid;
    let inv_2h = 0.5 / grid.spacing();
    let v = &field.values;
    let components = (0..grid.dim())
        .map(|k| {
            (0..grid.cell_count())
                .map(|c| (v[grid.plus(c, k)] - v[grid.minus(c, k)]) * inv_2h)
                .collect()
        })
        .collect();
    VectorField { grid, components }
}

/// Conservative divergence of face fluxes: `sum_k (F_{+k} - F_{-k}) / h`.
///
/// The sum over all cells telescopes to zero on the periodic grid.
pub fn face_divergence(grid: &Grid, flux: &FaceFlux) -> Result<ScalarField, GridError> {
    if flux.per_axis.len() != grid.dim()
        || flux.per_axis.iter().any(|f| f.len() != grid.cell_count())
    {
        return Err(GridError::Shape {
            expected: format!("{} axes x {} faces", grid.dim(), grid.cell_count()),
            got: format!(
                "{} axes x {:?} faces",
                flux.per_axis.len(),
                flux.per_axis.iter().map(Vec::len).collect::<Vec<_>>()
            ),
        });
    }
    let inv_h = 1.0 / grid.spacing();
    let mut values = vec![0.0; grid.cell_count()];
    for (k, f) in flux.per_axis.iter().enumerate() {
        for (c, out) in values.iter_mut().enumerate() {
            *out += (f[c] - f[grid.minus(c, k)]) * inv_h;
        }
    }
    Ok(ScalarField { grid: *grid, values })
}

/// Centered-difference Hessian of a scalar field, `hess[k][l][cell]`.
pub fn centered_hessian(field: &ScalarField) -> Vec<Vec<Vec<f64>>> {
    let grid = field.grid;
    let h = grid.spacing();
    let v = &field.values;
    let n = grid.dim();
    let mut hess = vec![vec![vec![0.0; grid.cell_count()]; n]; n];
    for k in 0..n {
        for l in k..n {
            for c in 0..grid.cell_count() {
                let value = if k == l {
                    (v[grid.plus(c, k)] - 2.0 * v[c] + v[grid.minus(c, k)]) / (h * h)
                } else {
                    let pp = v[grid.plus(grid.plus(c, k), l)];
                    let pm = v[grid.minus(grid.plus(c, k), l)];
                    let mp = v[grid.plus(grid.minus(c, k), l)];
                    let mm = v[grid.minus(grid.minus(c, k), l)];
                    (pp - pm - mp + mm) / (4.0 * h * h)
                };
                hess[k][l][c] = value;
                hess[l][k][c] = value;
            }
        }
    }
    hess
}

/// Jacobian of a vector field by centered differences: `jac[k][l] = d u^k / d x_l`.
pub fn centered_jacobian(u: &VectorField) -> Vec<Vec<Vec<f64>>> {
    let grid = u.grid;
    (0..grid.dim())
        .map(|k| {
            let comp = ScalarField { grid, values: u.components[k].clone() };
            centered_gradient(&comp).components
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn build_grid_examples() {
        let g = build_grid(1, 8).unwrap();
        assert_eq!(g.spacing(), 0.125);
        assert_eq!(g.cell_count(), 8);
        assert_eq!(build_grid(2, 4).unwrap().cell_count(), 16);
        assert_eq!(build_grid(4, 8), Err(GridError::UnsupportedDimension(4)));
        assert_eq!(build_grid(0, 8), Err(GridError::UnsupportedDimension(0)));
        assert_eq!(build_grid(2, 3), Err(GridError::TooCoarse(3)));
    }

    #[test]
    fn spacing_times_cells_is_one() {
        for n in [4, 7, 24, 64, 128, 1000] {
            let g = build_grid(1, n).unwrap();
            assert_eq!(g.spacing() * n as f64, 1.0);
        }
    }

    #[test]
    fn shift_wraps_every_axis() {
        let g = build_grid(3, 5).unwrap();
        for c in 0..g.cell_count() {
            for k in 0..3 {
                assert_eq!(g.minus(g.plus(c, k), k), c);
                assert_eq!(g.shift(c, k, 5), c);
                let idx = g.multi_index(c);
                let p = g.multi_index(g.plus(c, k));
                assert_eq!(p[k], (idx[k] + 1) % 5);
                for j in 0..3 {
                    if j != k {
                        assert_eq!(p[j], idx[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn integrate_examples() {
        let g = build_grid(2, 16).unwrap();
        assert_eq!(integrate(&ScalarField::constant(g, 1.0)), 1.0);
        let g = build_grid(1, 64).unwrap();
        let c = g.sample(|x| (2.0 * PI * x[0]).cos());
        assert!(integrate(&c).abs() < 1e-12);
        let s2 = g.sample(|x| (2.0 * PI * x[0]).sin().powi(2));
        assert!((integrate(&s2) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = build_grid(3, 6).unwrap();
        let grad = centered_gradient(&ScalarField::constant(g, 3.7));
        assert!(grad.components().iter().flatten().all(|&v| v == 0.0));
    }

    fn gradient_error(n: usize) -> f64 {
        let g = build_grid(1, n).unwrap();
        let f = g.sample(|x| (2.0 * PI * x[0]).sin());
        let grad = centered_gradient(&f);
        (0..g.cell_count())
            .map(|c| (grad.component(0)[c] - 2.0 * PI * (2.0 * PI * g.center(c)[0]).cos()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn gradient_is_second_order() {
        let e1 = gradient_error(128);
        let e2 = gradient_error(256);
        // Taylor: error = (2 pi)^3 h^2 / 6 at leading order.
        let h = 1.0 / 128.0;
        assert!(e1 <= (2.0 * PI).powi(3) * h * h / 6.0 * 1.01);
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() < 0.1, "observed order {order}");
    }

    #[test]
    fn sawtooth_seam_follows_wrap_arithmetic() {
        let n = 16;
        let g = build_grid(1, n).unwrap();
        let f = ScalarField::from_values(g, (0..n).map(|i| i as f64 / n as f64).collect()).unwrap();
        let grad = centered_gradient(&f);
        let seam = -((n - 2) as f64) / 2.0;
        assert!((grad.component(0)[0] - seam).abs() < 1e-12);
        assert!((grad.component(0)[n - 1] - seam).abs() < 1e-12);
        assert!((grad.component(0)[5] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn divergence_examples() {
        let g = build_grid(2, 8).unwrap();
        let zero = FaceFlux { per_axis: vec![vec![0.0; 64]; 2] };
        assert!(face_divergence(&g, &zero).unwrap().values().iter().all(|&v| v == 0.0));
        let uniform = FaceFlux { per_axis: vec![vec![2.5; 64], vec![-1.0; 64]] };
        assert!(face_divergence(&g, &uniform).unwrap().sup_norm() == 0.0);
        let bad = FaceFlux { per_axis: vec![vec![0.0; 64]] };
        assert!(matches!(face_divergence(&g, &bad), Err(GridError::Shape { .. })));
    }

    #[test]
    fn divergence_of_cosine_flux_is_discrete_laplacian() {
        let n = 128;
        let g = build_grid(1, n).unwrap();
        let h = g.spacing();
        // +e face of cell c sits at (c+1) h.
        let flux: Vec<f64> =
            (0..n).map(|c| 2.0 * PI * (2.0 * PI * (c as f64 + 1.0) * h).cos()).collect();
        let div = face_divergence(&g, &FaceFlux { per_axis: vec![flux] }).unwrap();
        let err = (0..n)
            .map(|c| {
                let x = g.center(c)[0];
                (div.values()[c] + (2.0 * PI).powi(2) * (2.0 * PI * x).sin()).abs()
            })
            .fold(0.0, f64::max);
        assert!(err < (2.0 * PI).powi(4) * h * h / 24.0 * 1.01, "err {err}");
    }

    #[test]
    fn hessian_of_cosine() {
        let g = build_grid(2, 64).unwrap();
        let f = g.sample(|x| (2.0 * PI * x[0]).cos() * (2.0 * PI * x[1]).cos());
        let hess = centered_hessian(&f);
        let c = 64 * 10 + 3;
        let x = g.center(c);
        let exact_xy = 4.0 * PI * PI * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin();
        assert!((hess[0][1][c] - exact_xy).abs() < 0.05);
        assert_eq!(hess[0][1][c], hess[1][0][c]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn divergence_telescopes(vals in prop::collection::vec(-10.0f64..10.0, 2 * 36)) {
                let g = build_grid(2, 6).unwrap();
                let flux = FaceFlux { per_axis: vec![vals[..36].to_vec(), vals[36..].to_vec()] };
                let div = face_divergence(&g, &flux).unwrap();
                let scale: f64 = div.values().iter().map(|v| v.abs()).sum::<f64>() * g.cell_volume();
                prop_assert!(integrate(&div).abs() <= 1e-13 * scale.max(1.0));
            }

            #[test]
            fn integrate_is_linear(
                a in -5.0f64..5.0,
                b in -5.0f64..5.0,
                vals in prop::collection::vec(-10.0f64..10.0, 2 * 27),
            ) {
                let g = build_grid(3, 3 + 1).unwrap();
                let n = g.cell_count();
                let vals: Vec<f64> = vals.iter().cycle().take(2 * n).copied().collect();
                let f = ScalarField::from_values(g, vals[..n].to_vec()).unwrap();
                let h = ScalarField::from_values(g, vals[n..].to_vec()).unwrap();
                let combo = f.zip_map(&h, |x, y| a * x + b * y);
                let lhs = integrate(&combo);
                let rhs = a * integrate(&f) + b * integrate(&h);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            }
        }
    }
}
