//! Coefficient sampling, the equilibrium density, and the constants ledger.

use std::borrow::Cow;

use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{CoefficientExpr, ExprError};
use crate::grid::{centered_gradient, centered_hessian, integrate, Grid, ScalarField, VectorField};

/// Step used for the centered time difference of the mobility.
pub const PI_TIME_STEP: f64 = 1e-4;

/// Bisection cap for the equilibrium shift.
pub const SHIFT_MAX_ITERATIONS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoefficientError {
    #[error("coefficient {name}: {source}")]
    Expression {
        name: &'static str,
        #[source]
        source: ExprError,
    },
    #[error("coefficient {name} is not strictly positive at cell {cell} (x = {x:?}, t = {t}): value {value}")]
    NonPositive { name: &'static str, cell: usize, x: [f64; 3], t: f64, value: f64 },
    #[error("coefficient {name} is not finite at cell {cell} (x = {x:?}, t = {t})")]
    NonFinite { name: &'static str, cell: usize, x: [f64; 3], t: f64 },
    #[error("equilibrium tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("equilibrium shift bracket [{lo}, {hi}] does not enclose unit mass (masses {mass_lo}, {mass_hi})")]
    Bracket { lo: f64, hi: f64, mass_lo: f64, mass_hi: f64 },
    #[error("equilibrium bisection did not reach tolerance {tol} in {SHIFT_MAX_ITERATIONS} iterations (residual {residual})")]
    NoConvergence { tol: f64, residual: f64 },
}

/// Expression sources for the four coefficient slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpecs {
    #[serde(rename = "D")]
    pub d: String,
    pub phi: String,
    pub pi: String,
    pub f0: String,
}

impl CoefficientSpecs {
    pub fn new(d: &str, phi: &str, pi: &str, f0: &str) -> Self {
        Self { d: d.into(), phi: phi.into(), pi: pi.into(), f0: f0.into() }
    }
}

/// Sampled coefficients of the model on one grid.
///
/// `D`, `phi` and their derivatives are sampled once. The mobility may depend
/// on time; when it does not, its samples are cached.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    grid: Grid,
    d: ScalarField,
    grad_d: VectorField,
    phi: ScalarField,
    grad_phi: VectorField,
    hess_phi: Vec<Vec<Vec<f64>>>,
    pi_expr: CoefficientExpr,
    pi_static: Option<(ScalarField, VectorField)>,
    sources: CoefficientSpecs,
}

fn parse_slot(name: &'static str, src: &str, spatial: bool, dim: usize) -> Result<CoefficientExpr, CoefficientError> {
    let wrap = |source| CoefficientError::Expression { name, source };
    let expr = if spatial { CoefficientExpr::parse_spatial(src) } else { CoefficientExpr::parse(src) }
        .map_err(wrap)?;
    expr.check_dim(dim).map_err(wrap)?;
    Ok(expr)
}

fn sample_checked(
    name: &'static str,
    expr: &CoefficientExpr,
    grid: &Grid,
    t: f64,
    require_positive: bool,
) -> Result<ScalarField, CoefficientError> {
    let field = grid.sample(|x| expr.eval(&x, t));
    if let Some(cell) = field.find(|v| !v.is_finite()) {
        return Err(CoefficientError::NonFinite { name, cell, x: grid.center(cell), t });
    }
    if require_positive {
        if let Some(cell) = field.find(|v| v <= 0.0) {
            return Err(CoefficientError::NonPositive {
                name,
                cell,
                x: grid.center(cell),
                t,
                value: field.values()[cell],
            });
        }
    }
    Ok(field)
}

impl CoefficientSet {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn d(&self) -> &ScalarField {
        &self.d
    }

    pub fn grad_d(&self) -> &VectorField {
        &self.grad_d
    }

    pub fn phi(&self) -> &ScalarField {
        &self.phi
    }

    pub fn grad_phi(&self) -> &VectorField {
        &self.grad_phi
    }

    /// Centered-difference Hessian of `phi`, indexed `[k][l][cell]`.
    pub fn hess_phi(&self) -> &[Vec<Vec<f64>>] {
        &self.hess_phi
    }

    pub fn sources(&self) -> &CoefficientSpecs {
        &self.sources
    }

    /// Replaces the recorded expression sources without resampling.
    pub fn set_sources(&mut self, sources: CoefficientSpecs) {
        self.sources = sources;
    }

    pub fn pi_depends_on_time(&self) -> bool {
        self.pi_static.is_none()
    }

    /// Mobility samples at time `t`.
    pub fn pi_at(&self, t: f64) -> Result<Cow<'_, ScalarField>, CoefficientError> {
        match &self.pi_static {
            Some((pi, _)) => Ok(Cow::Borrowed(pi)),
            None => sample_checked("pi", &self.pi_expr, &self.grid, t, true).map(Cow::Owned),
        }
    }

    /// Centered time difference of the mobility with step [`PI_TIME_STEP`];
    /// one-sided when `t` is closer to 0 than the step.
    pub fn pi_t_at(&self, t: f64) -> Result<ScalarField, CoefficientError> {
        if self.pi_static.is_some() {
            return Ok(ScalarField::constant(self.grid, 0.0));
        }
        let dt = PI_TIME_STEP;
        let (lo, hi) = if t >= dt { (t - dt, t + dt) } else { (t, t + dt) };
        let a = sample_checked("pi", &self.pi_expr, &self.grid, lo, true)?;
        let b = sample_checked("pi", &self.pi_expr, &self.grid, hi, true)?;
        Ok(b.zip_map(&a, |b, a| (b - a) / (hi - lo)))
    }

    pub fn grad_pi_at(&self, t: f64) -> Result<Cow<'_, VectorField>, CoefficientError> {
        match &self.pi_static {
            Some((_, grad)) => Ok(Cow::Borrowed(grad)),
            None => {
                let pi = self.pi_at(t)?;
                Ok(Cow::Owned(centered_gradient(&pi)))
            }
        }
    }

    /// True when the sampled diffusion is spatially constant.
    pub fn d_is_constant(&self) -> bool {
        is_flat(&self.d)
    }

    /// True when the mobility is time independent and spatially constant.
    pub fn pi_is_constant(&self) -> bool {
        matches!(&self.pi_static, Some((pi, _)) if is_flat(pi))
    }

    /// Largest ratio `D / pi` over all cells at time `t`.
    pub fn max_d_over_pi(&self, t: f64) -> Result<f64, CoefficientError> {
        let pi = self.pi_at(t)?;
        Ok(self.d.zip_map(&pi, |d, p| d / p).max())
    }
}

fn is_flat(field: &ScalarField) -> bool {
    let (lo, hi) = (field.min(), field.max());
    hi - lo <= 1e-14 * hi.abs().max(lo.abs()).max(1.0)
}

/// Samples all coefficients at cell centers and returns the unit-mass initial density.
pub fn sample_coefficients(
    specs: &CoefficientSpecs,
    grid: &Grid,
) -> Result<(CoefficientSet, ScalarField), CoefficientError> {
    let dim = grid.dim();
    let d_expr = parse_slot("D", &specs.d, true, dim)?;
    let phi_expr = parse_slot("phi", &specs.phi, true, dim)?;
    let pi_expr = parse_slot("pi", &specs.pi, false, dim)?;
    let f0_expr = parse_slot("f0", &specs.f0, true, dim)?;

    let d = sample_checked("D", &d_expr, grid, 0.0, true)?;
    let phi = sample_checked("phi", &phi_expr, grid, 0.0, false)?;
    let pi0 = sample_checked("pi", &pi_expr, grid, 0.0, true)?;
    let f0_raw = sample_checked("f0", &f0_expr, grid, 0.0, true)?;

    let mass = integrate(&f0_raw);
    let f0 = f0_raw.map(|v| v / mass);

    let pi_static = if pi_expr.uses_time() {
        None
    } else {
        let grad = centered_gradient(&pi0);
        Some((pi0, grad))
    };

    let set = CoefficientSet {
        grid: *grid,
        grad_d: centered_gradient(&d),
        d,
        grad_phi: centered_gradient(&phi),
        hess_phi: centered_hessian(&phi),
        phi,
        pi_expr,
        pi_static,
        sources: specs.clone(),
    };
    Ok((set, f0))
}

/// Equilibrium density and the normalization shift that gives it unit mass.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub feq: ScalarField,
    pub shift: f64,
}

fn equilibrium_for(coeffs: &CoefficientSet, shift: f64) -> ScalarField {
    coeffs.phi.zip_map(&coeffs.d, |phi, d| (-(phi - shift) / d).exp())
}

/// Finds `shift` with `integrate(exp(-(phi - shift)/D)) = 1` by bisection on
/// `[-sup|phi|, +sup|phi|]`.
pub fn compute_equilibrium(coeffs: &CoefficientSet, tol: f64) -> Result<Equilibrium, CoefficientError> {
    if !(tol > 0.0) {
        return Err(CoefficientError::BadTolerance(tol));
    }
    let bound = coeffs.phi.sup_norm();
    let mass = |s: f64| integrate(&equilibrium_for(coeffs, s));
    let (mut lo, mut hi) = (-bound, bound);
    let (mass_lo, mass_hi) = (mass(lo), mass(hi));
    if (mass_lo - 1.0).abs() <= tol {
        return Ok(Equilibrium { feq: equilibrium_for(coeffs, lo), shift: lo });
    }
    if (mass_hi - 1.0).abs() <= tol {
        return Ok(Equilibrium { feq: equilibrium_for(coeffs, hi), shift: hi });
    }
    if !(mass_lo < 1.0 && mass_hi > 1.0) {
        return Err(CoefficientError::Bracket { lo, hi, mass_lo, mass_hi });
    }
    let mut residual = f64::INFINITY;
    for _ in 0..SHIFT_MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let m = mass(mid);
        residual = m - 1.0;
        if residual.abs() <= tol {
            return Ok(Equilibrium { feq: equilibrium_for(coeffs, mid), shift: mid });
        }
        if residual < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * bound {
            break;
        }
    }
    Err(CoefficientError::NoConvergence { tol, residual: residual.abs() })
}

/// How the time-dependent mobility is probed for the ledger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeTimes {
    pub horizon: f64,
    pub count: usize,
}

impl ProbeTimes {
    pub fn at_zero() -> Self {
        Self { horizon: 0.0, count: 1 }
    }

    pub fn times(&self) -> Vec<f64> {
        let count = self.count.max(1);
        if count == 1 {
            return vec![0.0];
        }
        (0..count).map(|k| self.horizon * k as f64 / (count - 1) as f64).collect()
    }
}

/// Every named bound that the theorem conditions consume.
///
/// All sups and infs are discrete extrema over cell samples, so they are
/// lower bounds for the true suprema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsLedger {
    pub dim: usize,
    pub init_min: f64,
    pub init_max: f64,
    pub d_min: f64,
    pub pi_min: f64,
    pub pi_max: f64,
    pub pi_time: f64,
    pub grad_pi: f64,
    pub grad_d: f64,
    /// `lambda` in `Hess(phi) >= -lambda I`; never negative when sampled.
    pub hess_phi_lower: f64,
    pub phi_sup: f64,
    pub grad_phi_sup: f64,
    pub log_f0_sup: f64,
    pub feq_shift: f64,
    pub log_f_bound: f64,
    pub d_max_bound: f64,
}

/// `(1 + sqrt(n) grad_d)(sup|log f0| + 2 sup|phi|) + 2 sup|phi|`.
pub fn log_f_bound(dim: usize, grad_d: f64, log_f0_sup: f64, phi_sup: f64) -> f64 {
    (1.0 + (dim as f64).sqrt() * grad_d) * (log_f0_sup + 2.0 * phi_sup) + 2.0 * phi_sup
}

/// `d_min + sqrt(n) grad_d`.
pub fn d_max_bound(dim: usize, d_min: f64, grad_d: f64) -> f64 {
    d_min + (dim as f64).sqrt() * grad_d
}

/// Smallest eigenvalue of the discrete Hessian over all cells.
pub fn min_hessian_eigenvalue(hess: &[Vec<Vec<f64>>], cells: usize) -> f64 {
    let n = hess.len();
    (0..cells)
        .map(|c| match n {
            1 => hess[0][0][c],
            2 => Matrix2::new(hess[0][0][c], hess[0][1][c], hess[1][0][c], hess[1][1][c])
                .symmetric_eigenvalues()
                .min(),
            _ => Matrix3::from_fn(|i, j| hess[i][j][c]).symmetric_eigenvalues().min(),
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn build_constants_ledger(
    coeffs: &CoefficientSet,
    f0: &ScalarField,
    probes: ProbeTimes,
) -> Result<ConstantsLedger, CoefficientError> {
    let grid = coeffs.grid;
    let dim = grid.dim();
    let mut pi_min = f64::INFINITY;
    let mut pi_max = f64::NEG_INFINITY;
    let mut pi_time: f64 = 0.0;
    let mut grad_pi: f64 = 0.0;
    for t in probes.times() {
        let pi = coeffs.pi_at(t)?;
        pi_min = pi_min.min(pi.min());
        pi_max = pi_max.max(pi.max());
        pi_time = pi_time.max(coeffs.pi_t_at(t)?.sup_norm());
        grad_pi = grad_pi.max(coeffs.grad_pi_at(t)?.sup_norm());
    }

    let grad_d = coeffs.grad_d.sup_norm();
    let phi_sup = coeffs.phi.sup_norm();
    let log_f0_sup = f0.map(f64::ln).sup_norm();
    let d_min = coeffs.d.min();
    let lambda = (-min_hessian_eigenvalue(&coeffs.hess_phi, grid.cell_count())).max(0.0);
    let eq = compute_equilibrium(coeffs, 1e-13)?;

    Ok(ConstantsLedger {
        dim,
        init_min: f0.min(),
        init_max: f0.max(),
        d_min,
        pi_min,
        pi_max,
        pi_time,
        grad_pi,
        grad_d,
        hess_phi_lower: lambda,
        phi_sup,
        grad_phi_sup: coeffs.grad_phi.sup_norm(),
        log_f0_sup,
        feq_shift: eq.shift,
        log_f_bound: log_f_bound(dim, grad_d, log_f0_sup, phi_sup),
        d_max_bound: d_max_bound(dim, d_min, grad_d),
    })
}
