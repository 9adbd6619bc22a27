//! Functionals tracked along trajectories: free energy, dissipation,
//! maximum-principle envelopes, second-derivative identities, empirical
//! Sobolev and Poincare ratios, and exponential decay fits.
//!
//! Every integral is a midpoint sum over cell centers. Derivatives of the
//! velocity and of the coefficients use centered differences.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coefficients::{compute_equilibrium, CoefficientError, CoefficientSet, CoefficientSpecs, Equilibrium};
use crate::error::{check_density, FieldError};
use crate::grid::{centered_gradient, centered_jacobian, Grid, ScalarField, VectorField};
use crate::solver::{compute_velocity, RunStats, SolverState};

/// Tolerance used by containment checks on the maximum-principle envelope.
pub const ENVELOPE_TOLERANCE: f64 = 1e-8;

/// Fewest positive-dissipation records a decay fit accepts.
pub const MIN_FIT_POINTS: usize = 5;

/// Default `p*` for the empirical Sobolev ratio.
pub const DEFAULT_P_STAR: f64 = 6.0;

/// Default `epsilon` in the mobility-weighted Sobolev denominator.
pub const DEFAULT_SOBOLEV_EPSILON: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("series has {got} records, at least {needed} required")]
    TooShort { needed: usize, got: usize },
    #[error("{0}: denominator vanishes, ratio undefined")]
    UndefinedRatio(&'static str),
    #[error("decay fit window [{lo}, {hi}] holds {got} usable records, at least {needed} required")]
    InsufficientPoints { lo: f64, hi: f64, got: usize, needed: usize },
    #[error("mode {mode} requires {requirement}")]
    ModeMismatch { mode: IdentityMode, requirement: &'static str },
    #[error("record times must increase strictly (record {index} at t = {t})")]
    NonIncreasingTime { index: usize, t: f64 },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
}

impl From<CoefficientError> for DiagnosticsError {
    fn from(err: CoefficientError) -> Self {
        Self::Field(FieldError::Coefficient(err))
    }
}

/// Diagnostics of one recorded state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub free_energy: f64,
    pub dissipation: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub log_f_sup: f64,
    pub u_sup: f64,
    /// `min(f - lower, upper - f)` over cells; negative values are violations.
    pub envelope_violation: f64,
    pub jensen_margin: f64,
}

/// Ordered diagnostics records of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub coefficients: CoefficientSpecs,
    pub stats: RunStats,
    records: Vec<DiagnosticsRecord>,
}

impl TimeSeries {
    pub fn new(coefficients: CoefficientSpecs) -> Self {
        Self { coefficients, stats: RunStats::default(), records: Vec::new() }
    }

    pub fn from_records(
        coefficients: CoefficientSpecs,
        records: Vec<DiagnosticsRecord>,
    ) -> Result<Self, DiagnosticsError> {
        if let Some(index) = (1..records.len()).find(|&i| !(records[i].t > records[i - 1].t)) {
            return Err(DiagnosticsError::NonIncreasingTime { index, t: records[index].t });
        }
        Ok(Self { coefficients, stats: RunStats::default(), records })
    }

    /// Appends a record. Panics if `t` does not exceed the last recorded time.
    pub fn push(&mut self, record: DiagnosticsRecord) {
        if let Some(last) = self.records.last() {
            assert!(record.t > last.t, "record time {} does not exceed {}", record.t, last.t);
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[DiagnosticsRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }
}

fn weighted_integral(grid: &Grid, mut integrand: impl FnMut(usize) -> f64) -> f64 {
    grid.cell_volume() * (0..grid.cell_count()).map(&mut integrand).sum::<f64>()
}

/// `F[f] = int D f (log f - 1) + f phi`.
pub fn free_energy(f: &ScalarField, coeffs: &CoefficientSet) -> Result<f64, FieldError> {
    check_density(f.values())?;
    let (fv, d, phi) = (f.values(), coeffs.d().values(), coeffs.phi().values());
    Ok(weighted_integral(f.grid(), |c| d[c] * fv[c] * (fv[c].ln() - 1.0) + fv[c] * phi[c]))
}

/// `int pi |u|^2 f` for an already computed velocity.
pub fn dissipation_with_velocity(f: &ScalarField, pi: &ScalarField, u: &VectorField) -> f64 {
    let usq = u.norm_squared();
    let (fv, p, w) = (f.values(), pi.values(), usq.values());
    weighted_integral(f.grid(), |c| p[c] * w[c] * fv[c])
}

/// Dissipation rate `int pi |u|^2 f` at time `t`.
pub fn dissipation(f: &ScalarField, coeffs: &CoefficientSet, t: f64) -> Result<f64, FieldError> {
    let u = compute_velocity(f, coeffs, t)?;
    let pi = coeffs.pi_at(t)?;
    Ok(dissipation_with_velocity(f, &pi, &u))
}

/// `(F(t+) - F(t-)) / dt + D_dis(t)` at every interior record.
///
/// The time derivative is the three-point formula on the (possibly
/// nonuniform) record times, which reduces to the centered difference when
/// records are equally spaced.
pub fn energy_law_residual(series: &TimeSeries) -> Result<Vec<f64>, DiagnosticsError> {
    let r = series.records();
    if r.len() < 3 {
        return Err(DiagnosticsError::TooShort { needed: 3, got: r.len() });
    }
    Ok(r.windows(3)
        .map(|w| {
            let h1 = w[1].t - w[0].t;
            let h2 = w[2].t - w[1].t;
            let derivative = -h2 / (h1 * (h1 + h2)) * w[0].free_energy
                + (h2 - h1) / (h1 * h2) * w[1].free_energy
                + h1 / (h2 * (h1 + h2)) * w[2].free_energy;
            derivative + w[1].dissipation
        })
        .collect())
}

/// Pointwise time-independent bounds on the density.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub lower: ScalarField,
    pub upper: ScalarField,
}

impl Envelope {
    /// `min over cells of min(f - lower, upper - f)`.
    pub fn margin(&self, f: &ScalarField) -> f64 {
        let (lo, up) = (self.lower.values(), self.upper.values());
        f.values()
            .iter()
            .enumerate()
            .map(|(c, &v)| (v - lo[c]).min(up[c] - v))
            .fold(f64::INFINITY, f64::min)
    }

    /// `max upper / min lower`.
    pub fn harnack_ratio(&self) -> f64 {
        self.upper.max() / self.lower.min()
    }
}

/// Envelope `exp(m / D) feq <= f <= exp(M / D) feq` with `m`, `M` the extrema
/// of `D log(f0 / feq)`.
pub fn max_principle_envelope(
    f0: &ScalarField,
    feq: &ScalarField,
    coeffs: &CoefficientSet,
) -> Result<Envelope, FieldError> {
    check_density(f0.values())?;
    check_density(feq.values())?;
    let d = coeffs.d().values();
    let w: Vec<f64> = (0..d.len()).map(|c| d[c] * (f0.values()[c] / feq.values()[c]).ln()).collect();
    let m = w.iter().copied().fold(f64::INFINITY, f64::min);
    let big_m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bound = |level: f64| {
        let values = (0..d.len()).map(|c| (level / d[c]).exp() * feq.values()[c]).collect();
        ScalarField::from_values(*feq.grid(), values).expect("same grid")
    };
    let mut env = Envelope { lower: bound(m), upper: bound(big_m) };
    // Rounding in exp/ln must not make the initial state look outside its own envelope.
    for (c, &v) in f0.values().iter().enumerate() {
        env.lower.values_mut()[c] = env.lower.values()[c].min(v);
        env.upper.values_mut()[c] = env.upper.values()[c].max(v);
    }
    Ok(env)
}

/// Worst envelope margin over a sequence of states.
pub fn check_envelope<'a>(states: impl IntoIterator<Item = &'a ScalarField>, envelope: &Envelope) -> f64 {
    states.into_iter().map(|f| envelope.margin(f)).fold(f64::INFINITY, f64::min)
}

/// `min over cells of n |grad u|^2 - (div u)^2`.
pub fn jensen_check(u: &VectorField, grid: &Grid) -> f64 {
    assert_eq!(u.grid(), grid, "velocity lives on a different grid");
    let n = grid.dim();
    let jac = centered_jacobian(u);
    (0..grid.cell_count())
        .map(|c| {
            let mut frob = 0.0;
            let mut div = 0.0;
            for k in 0..n {
                div += jac[k][k][c];
                for l in 0..n {
                    frob += jac[k][l][c] * jac[k][l][c];
                }
            }
            n as f64 * frob - div * div
        })
        .fold(f64::INFINITY, f64::min)
}

/// Which second-derivative identity to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdentityMode {
    /// Constant `D` and `pi`: two terms.
    #[serde(rename = "homogeneous")]
    Homogeneous,
    /// Variable `D`, constant `pi`: seven terms.
    #[serde(rename = "inhomogeneous-D")]
    InhomogeneousD,
    /// Variable `D` and `pi(x, t)`: thirteen terms.
    #[serde(rename = "full")]
    Full,
}

impl IdentityMode {
    pub fn term_count(self) -> usize {
        match self {
            Self::Homogeneous => 2,
            Self::InhomogeneousD => 7,
            Self::Full => 13,
        }
    }
}

impl std::fmt::Display for IdentityMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Homogeneous => "homogeneous",
            Self::InhomogeneousD => "inhomogeneous-D",
            Self::Full => "full",
        })
    }
}

/// Names of the thirteen integrals, in order.
pub const TERM_NAMES: [&str; 13] = [
    "hessian_phi",
    "d_grad_u_sq",
    "logf_gradDu_sq_cross",
    "divu_cross",
    "cubic_logf",
    "gradD_sq_logf_sq",
    "gradD_gradPhi_cross",
    "pi_t",
    "cubic_gradPi",
    "gradPi_gradD",
    "gradPi_gradD_directional",
    "grad_usq_gradPi",
    "jacobian_u_gradPi",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTerm {
    pub name: String,
    pub value: f64,
}

/// The integrals whose sum is `d^2 F / dt^2 = -d D_dis / dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermBreakdown {
    pub mode: IdentityMode,
    pub terms: Vec<NamedTerm>,
    pub sum: f64,
}

impl TermBreakdown {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }
}

/// Evaluates the identity of the given mode at state `f`, time `t`.
pub fn second_derivative_terms(
    f: &ScalarField,
    coeffs: &CoefficientSet,
    t: f64,
    mode: IdentityMode,
) -> Result<TermBreakdown, DiagnosticsError> {
    match mode {
        IdentityMode::Homogeneous if !(coeffs.d_is_constant() && coeffs.pi_is_constant()) => {
            return Err(DiagnosticsError::ModeMismatch { mode, requirement: "constant D and constant pi" });
        }
        IdentityMode::InhomogeneousD if !coeffs.pi_is_constant() => {
            return Err(DiagnosticsError::ModeMismatch { mode, requirement: "constant pi" });
        }
        _ => {}
    }
    let grid = *f.grid();
    let n = grid.dim();
    let u = compute_velocity(f, coeffs, t)?;
    let jac = centered_jacobian(&u);
    let usq = u.norm_squared();
    let grad_usq = centered_gradient(&usq);
    let pi = coeffs.pi_at(t)?;
    let grad_pi = coeffs.grad_pi_at(t)?;
    let pi_t = coeffs.pi_t_at(t)?;
    let hess = coeffs.hess_phi();
    let (d, grad_d, grad_phi) = (coeffs.d().values(), coeffs.grad_d(), coeffs.grad_phi());

    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let mut sums = [0.0f64; 13];
    for c in 0..grid.cell_count() {
        let fc = f.values()[c];
        let log_f = fc.ln();
        let uc = u.at(c);
        let u2 = usq.values()[c];
        let gd = grad_d.at(c);
        let gp = grad_phi.at(c);
        let gpi = grad_pi.at(c);
        let gu2 = grad_usq.at(c);
        let (dc, pc) = (d[c], pi.values()[c]);

        let mut hess_uu = 0.0;
        let mut grad_u_sq = 0.0;
        let mut div_u = 0.0;
        let mut adv_dot_gpi = 0.0;
        for k in 0..n {
            div_u += jac[k][k][c];
            let mut adv_k = 0.0;
            for l in 0..n {
                hess_uu += hess[k][l][c] * uc[k] * uc[l];
                grad_u_sq += jac[k][l][c] * jac[k][l][c];
                adv_k += uc[l] * jac[k][l][c];
            }
            adv_dot_gpi += adv_k * gpi[k];
        }
        let u_gd = dot(uc, gd);
        let u_gp = dot(uc, gp);
        let u_gpi = dot(uc, gpi);

        let values = [
            2.0 * hess_uu,
            2.0 * dc * grad_u_sq,
            -(log_f - 1.0) * dot(gu2, gd),
            -2.0 * (1.0 + log_f) * u_gd * div_u,
            2.0 * (pc / dc) * u2 * log_f * u_gd,
            2.0 / dc * log_f * log_f * u_gd * u_gd,
            2.0 / dc * log_f * u_gd * u_gp,
            pi_t.values()[c] * u2,
            u2 * u_gpi,
            -2.0 * (log_f - 1.0) / pc * u2 * dot(gpi, gd),
            2.0 * (log_f - 1.0) / pc * u_gpi * u_gd,
            dc / pc * dot(gu2, gpi),
            -2.0 * dc / pc * adv_dot_gpi,
        ];
        for (s, v) in sums.iter_mut().zip(values) {
            *s += v * fc;
        }
    }
    let vol = grid.cell_volume();
    let terms: Vec<NamedTerm> = TERM_NAMES
        .iter()
        .zip(sums)
        .take(mode.term_count())
        .map(|(name, s)| NamedTerm { name: (*name).to_string(), value: s * vol })
        .collect();
    let sum = terms.iter().map(|t| t.value).sum();
    Ok(TermBreakdown { mode, terms, sum })
}

struct Moments {
    u2: f64,
    grad_u2: f64,
}

fn moments(f: &ScalarField, u: &VectorField) -> Moments {
    assert_eq!(f.grid(), u.grid(), "density and velocity live on different grids");
    let grid = f.grid();
    let jac = centered_jacobian(u);
    let usq = u.norm_squared();
    let fv = f.values();
    let u2 = weighted_integral(grid, |c| usq.values()[c] * fv[c]);
    let grad_u2 = weighted_integral(grid, |c| {
        let mut s = 0.0;
        for row in &jac {
            for col in row {
                s += col[c] * col[c];
            }
        }
        s * fv[c]
    });
    Moments { u2, grad_u2 }
}

/// `int |u|^2 f / int |grad u|^2 f`.
pub fn empirical_poincare(f: &ScalarField, u: &VectorField) -> Result<f64, DiagnosticsError> {
    let m = moments(f, u);
    if !(m.grad_u2 > 0.0) {
        return Err(DiagnosticsError::UndefinedRatio("empirical Poincare ratio"));
    }
    Ok(m.u2 / m.grad_u2)
}

fn lp_norm(f: &ScalarField, u: &VectorField, p: f64) -> f64 {
    let usq = u.norm_squared();
    let fv = f.values();
    weighted_integral(f.grid(), |c| usq.values()[c].powf(0.5 * p) * fv[c]).powf(1.0 / p)
}

fn check_p_star(p_star: f64) -> Result<(), DiagnosticsError> {
    if !(p_star > 2.0 && p_star.is_finite()) {
        return Err(DiagnosticsError::BadParameter(format!("p* must lie in (2, inf), got {p_star}")));
    }
    Ok(())
}

/// `(int |u|^p* f)^(1/p*) / (int |grad u|^2 f)^(1/2)`.
pub fn empirical_sobolev(f: &ScalarField, u: &VectorField, p_star: f64) -> Result<f64, DiagnosticsError> {
    check_p_star(p_star)?;
    let m = moments(f, u);
    if !(m.grad_u2 > 0.0) {
        return Err(DiagnosticsError::UndefinedRatio("empirical Sobolev ratio"));
    }
    Ok(lp_norm(f, u, p_star) / m.grad_u2.sqrt())
}

/// Variable-mobility form with denominator `(int (2 |grad u|^2 + eps |u|^2) f)^(1/2)`.
pub fn empirical_sobolev_weighted(
    f: &ScalarField,
    u: &VectorField,
    p_star: f64,
    epsilon: f64,
) -> Result<f64, DiagnosticsError> {
    check_p_star(p_star)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(DiagnosticsError::BadParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let m = moments(f, u);
    let denom = 2.0 * m.grad_u2 + epsilon * m.u2;
    if !(denom > 0.0) {
        return Err(DiagnosticsError::UndefinedRatio("weighted empirical Sobolev ratio"));
    }
    Ok(lp_norm(f, u, p_star) / denom.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterpolationMode {
    #[serde(rename = "pi-constant")]
    PiConstant,
    #[serde(rename = "pi-variable")]
    PiVariable,
}

/// Right side minus left side of the cubic interpolation inequality
/// `int |u|^3 f <= ...` with `K^(3/2) = sobolev_const^(3/2)`.
///
/// * constant mobility: `3/4 K^(3/2) int |grad u|^2 f + 1/4 K^(3/2) (int |u|^2 f)^3`
/// * variable mobility: `3/2 K^(3/2) (int |grad u|^2 f + int |u|^2 f) + 1/4 K^(3/2) (int |u|^2 f)^3`
pub fn interpolation_check(
    f: &ScalarField,
    u: &VectorField,
    sobolev_const: f64,
    mode: InterpolationMode,
) -> Result<f64, DiagnosticsError> {
    if !(sobolev_const > 0.0 && sobolev_const.is_finite()) {
        return Err(DiagnosticsError::BadParameter(format!(
            "Sobolev constant must be positive, got {sobolev_const}"
        )));
    }
    let m = moments(f, u);
    let k32 = sobolev_const.powf(1.5);
    let lhs = lp_norm(f, u, 3.0).powi(3);
    let rhs = match mode {
        InterpolationMode::PiConstant => 0.75 * k32 * m.grad_u2 + 0.25 * k32 * m.u2.powi(3),
        InterpolationMode::PiVariable => {
            1.5 * k32 * m.grad_u2 + 1.5 * k32 * m.u2 + 0.25 * k32 * m.u2.powi(3)
        }
    };
    Ok(rhs - lhs)
}

/// Least-squares exponential fit of the dissipation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub log_intercept: f64,
    pub window: [f64; 2],
    pub residual_rms: f64,
    pub points: usize,
}

/// Fits `log D_dis = log_intercept - rate * t` over records with
/// `t` in `window` and positive dissipation.
pub fn decay_fit(series: &TimeSeries, window: [f64; 2]) -> Result<DecayFit, DiagnosticsError> {
    let [lo, hi] = window;
    if !(lo <= hi) {
        return Err(DiagnosticsError::BadParameter(format!("empty fit window [{lo}, {hi}]")));
    }
    let pts: Vec<(f64, f64)> = series
        .records()
        .iter()
        .filter(|r| r.t >= lo && r.t <= hi && r.dissipation > 0.0)
        .map(|r| (r.t, r.dissipation.ln()))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(DiagnosticsError::InsufficientPoints { lo, hi, got: pts.len(), needed: MIN_FIT_POINTS });
    }
    let k = pts.len() as f64;
    let t_mean = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let y_mean = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - t_mean).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - t_mean) * (p.1 - y_mean)).sum();
    if !(sxx > 0.0) {
        return Err(DiagnosticsError::UndefinedRatio("decay fit (all times equal)"));
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * t_mean;
    let residual_rms =
        (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / k).sqrt();
    Ok(DecayFit { rate: -slope, log_intercept: intercept, window, residual_rms, points: pts.len() })
}

/// Computes a [`DiagnosticsRecord`] for solver states of one run.
#[derive(Debug, Clone)]
pub struct Recorder {
    equilibrium: Equilibrium,
    envelope: Envelope,
}

impl Recorder {
    pub fn new(f0: &ScalarField, coeffs: &CoefficientSet) -> Result<Self, DiagnosticsError> {
        let equilibrium = compute_equilibrium(coeffs, 1e-13).map_err(FieldError::from)?;
        let envelope = max_principle_envelope(f0, &equilibrium.feq, coeffs)?;
        Ok(Self { equilibrium, envelope })
    }

    pub fn equilibrium(&self) -> &Equilibrium {
        &self.equilibrium
    }

    pub fn envelope(&self) -> &Envelope {
        &self.envelope
    }

    pub fn record(&self, state: &SolverState, coeffs: &CoefficientSet) -> Result<DiagnosticsRecord, DiagnosticsError> {
        let f = &state.f;
        let u = compute_velocity(f, coeffs, state.t)?;
        let pi = coeffs.pi_at(state.t).map_err(FieldError::from)?;
        Ok(DiagnosticsRecord {
            t: state.t,
            mass: crate::grid::integrate(f),
            free_energy: free_energy(f, coeffs)?,
            dissipation: dissipation_with_velocity(f, &pi, &u),
            f_min: f.min(),
            f_max: f.max(),
            log_f_sup: f.map(f64::ln).sup_norm(),
            u_sup: u.sup_norm(),
            envelope_violation: self.envelope.margin(f),
            jensen_margin: jensen_check(&u, f.grid()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{sample_coefficients, CoefficientSpecs};
    use crate::grid::build_grid;
    use crate::solver::{run, SolverConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn setup(dim: usize, n: usize, d: &str, phi: &str, pi: &str, f0: &str) -> (CoefficientSet, ScalarField) {
        let grid = build_grid(dim, n).unwrap();
        sample_coefficients(&CoefficientSpecs::new(d, phi, pi, f0), &grid).unwrap()
    }

    /// `I_0(1)` from its power series `sum (1/4)^k / (k!)^2`.
    fn bessel_i0_at_one() -> f64 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..40 {
            term *= 0.25 / (k as f64 * k as f64);
            sum += term;
        }
        sum
    }

    fn record(t: f64, free_energy: f64, dissipation: f64) -> DiagnosticsRecord {
        DiagnosticsRecord {
            t,
            mass: 1.0,
            free_energy,
            dissipation,
            f_min: 1.0,
            f_max: 1.0,
            log_f_sup: 0.0,
            u_sup: 0.0,
            envelope_violation: 0.0,
            jensen_margin: 0.0,
        }
    }

    fn series(records: Vec<DiagnosticsRecord>) -> TimeSeries {
        TimeSeries::from_records(CoefficientSpecs::new("1", "0", "1", "1"), records).unwrap()
    }

    #[test]
    fn free_energy_of_uniform_density() {
        let (c, f) = setup(2, 8, "1", "0", "1", "1");
        assert!((free_energy(&f, &c).unwrap() + 1.0).abs() < 1e-14);
    }

    #[test]
    fn free_energy_at_equilibrium_is_shift_minus_one() {
        let (c, _) = setup(1, 128, "1", "cos(2*pi*x1)", "1", "1");
        let eq = compute_equilibrium(&c, 1e-13).unwrap();
        let oracle_shift = -bessel_i0_at_one().ln();
        assert!((free_energy(&eq.feq, &c).unwrap() - (oracle_shift - 1.0)).abs() < 1e-8);
    }

    #[test]
    fn free_energy_shifts_with_potential() {
        let (c1, f) = setup(1, 32, "1.5", "sin(2*pi*x1)", "1", "1 + 0.3*cos(2*pi*x1)");
        let (c2, _) = setup(1, 32, "1.5", "sin(2*pi*x1) + 0.7", "1", "1");
        let diff = free_energy(&f, &c2).unwrap() - free_energy(&f, &c1).unwrap();
        assert!((diff - 0.7).abs() < 1e-13);
    }

    #[test]
    fn free_energy_rejects_nonpositive_density() {
        let (c, _) = setup(1, 8, "1", "0", "1", "1");
        let f = ScalarField::from_values(*c.grid(), vec![1.0, -1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(free_energy(&f, &c), Err(FieldError::NonPositiveDensity { cell: 1, .. })));
    }

    #[test]
    fn dissipation_examples() {
        let (c, _) = setup(1, 128, "1", "cos(2*pi*x1)", "1", "1");
        let eq = compute_equilibrium(&c, 1e-13).unwrap();
        assert!(dissipation(&eq.feq, &c, 0.0).unwrap().abs() <= 1e-12);

        let (c, f) = setup(1, 128, "1", "0", "1", "1 + 0.01*sin(2*pi*x1)");
        let expected = 1e-4 * 4.0 * PI * PI / 2.0;
        let got = dissipation(&f, &c, 0.0).unwrap();
        assert!((got - expected).abs() / expected < 0.05, "{got} vs {expected}");

        let u = compute_velocity(&f, &c, 0.0).unwrap();
        let unweighted = u.norm_squared().zip_map(&f, |a, b| a * b);
        assert!((crate::grid::integrate(&unweighted) - got).abs() < 1e-18);
    }

    #[test]
    fn energy_residual_examples() {
        let exact: Vec<_> = (0..6).map(|i| {
            let t = 0.1 * i as f64;
            record(t, 3.0 - 2.0 * t, 2.0)
        }).collect();
        let res = energy_law_residual(&series(exact)).unwrap();
        assert_eq!(res.len(), 4);
        assert!(res.iter().all(|r| r.abs() < 1e-12));

        let uneven = vec![record(0.0, 0.0, 0.0), record(0.1, -0.01, 0.2), record(0.4, -0.16, 0.8)];
        // F = -t^2 is reproduced exactly by the three-point rule.
        assert!(energy_law_residual(&series(uneven)).unwrap()[0].abs() < 1e-12);

        let short = series(vec![record(0.0, 0.0, 0.0), record(1.0, 0.0, 0.0)]);
        assert_eq!(energy_law_residual(&short), Err(DiagnosticsError::TooShort { needed: 3, got: 2 }));
    }

    #[test]
    fn time_series_rejects_unordered_times() {
        let err = TimeSeries::from_records(
            CoefficientSpecs::new("1", "0", "1", "1"),
            vec![record(0.0, 0.0, 0.0), record(0.0, 0.0, 0.0)],
        );
        assert!(matches!(err, Err(DiagnosticsError::NonIncreasingTime { index: 1, .. })));
    }

    #[test]
    fn envelope_at_equilibrium_is_degenerate() {
        let (c, _) = setup(1, 64, "2 + 0.5*cos(2*pi*x1)", "cos(2*pi*x1)", "1", "1");
        let eq = compute_equilibrium(&c, 1e-13).unwrap();
        let env = max_principle_envelope(&eq.feq, &eq.feq, &c).unwrap();
        for i in 0..64 {
            assert!((env.lower.values()[i] - eq.feq.values()[i]).abs() < 1e-14);
            assert!((env.upper.values()[i] - eq.feq.values()[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn envelope_with_constant_diffusion_is_ratio_scaled() {
        let (c, f0) = setup(1, 64, "1.7", "sin(2*pi*x1)", "1", "1 + 0.4*cos(4*pi*x1)");
        let eq = compute_equilibrium(&c, 1e-13).unwrap();
        let env = max_principle_envelope(&f0, &eq.feq, &c).unwrap();
        let ratio = f0.zip_map(&eq.feq, |a, b| a / b);
        let (rmin, rmax) = (ratio.min(), ratio.max());
        for i in 0..64 {
            let feq = eq.feq.values()[i];
            assert!((env.lower.values()[i] - rmin * feq).abs() < 1e-12 * feq);
            assert!((env.upper.values()[i] - rmax * feq).abs() < 1e-12 * feq);
        }
        assert!(env.margin(&f0) >= 0.0);
    }

    #[test]
    fn harnack_ratio_is_bounded_by_log_bound() {
        let (c, f0) = setup(2, 24, "2 + 0.5*cos(2*pi*x1)", "cos(2*pi*x2)", "1", "1 + 0.5*sin(2*pi*(x1 - x2))");
        let eq = compute_equilibrium(&c, 1e-13).unwrap();
        let env = max_principle_envelope(&f0, &eq.feq, &c).unwrap();
        let ledger =
            crate::coefficients::build_constants_ledger(&c, &f0, crate::coefficients::ProbeTimes::at_zero()).unwrap();
        assert!(env.harnack_ratio() <= (2.0 * ledger.log_f_bound).exp());
    }

    #[test]
    fn envelope_holds_along_heat_run() {
        let (c, f0) = setup(1, 64, "1", "0", "1", "1 + 0.05*sin(2*pi*x1)");
        let recorder = Recorder::new(&f0, &c).unwrap();
        let mut states = vec![f0.clone()];
        let config = SolverConfig { t_end: 0.05, record_every: 5, ..Default::default() };
        run(&f0, &c, &config, &mut |s, _| states.push(s.f.clone())).unwrap();
        assert!(check_envelope(&states, recorder.envelope()) >= -ENVELOPE_TOLERANCE);
        assert!(check_envelope([&f0], recorder.envelope()) >= 0.0);
    }

    #[test]
    fn jensen_examples() {
        let g = build_grid(2, 32).unwrap();
        assert_eq!(jensen_check(&VectorField::zeros(g), &g), 0.0);
        let u = VectorField::sample(g, |x| [(2.0 * PI * x[0]).sin(), 0.0, 0.0]);
        // Only d u^1 / d x_1 is nonzero: margin = 2 a^2 - a^2 = a^2 >= 0.
        assert!(jensen_check(&u, &g) >= 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let dim = rng.gen_range(1..=3);
            let g = build_grid(dim, 8).unwrap();
            let coef: Vec<[f64; 4]> = (0..3).map(|_| [(); 4].map(|_| rng.gen_range(-1.0..1.0))).collect();
            let u = VectorField::sample(g, |x| {
                let mut out = [0.0; 3];
                for (k, a) in coef.iter().enumerate().take(dim) {
                    out[k] = a[0] * (2.0 * PI * x[0]).sin()
                        + a[1] * (2.0 * PI * (x[1] + x[2])).cos()
                        + a[2] * (4.0 * PI * x[0] + 2.0 * PI * x[1]).sin()
                        + a[3];
                }
                out
            });
            assert!(jensen_check(&u, &g) >= -1e-12);
        }
    }

    #[test]
    fn terms_vanish_at_equilibrium() {
        let (c, _) = setup(1, 128, "2 + 0.5*cos(2*pi*x1)", "cos(2*pi*x1)", "1 + 0.2*sin(2*pi*x1)", "1");
        let eq = compute_equilibrium(&c, 1e-13).unwrap();
        let terms = second_derivative_terms(&eq.feq, &c, 0.0, IdentityMode::Full).unwrap();
        assert_eq!(terms.terms.len(), 13);
        assert!(terms.terms.iter().all(|t| t.value.abs() <= 1e-10));
    }

    #[test]
    fn constant_mobility_full_mode_reduces_to_seven_terms() {
        let (c, f) = setup(2, 32, "2 + 0.5*cos(2*pi*x1)", "cos(2*pi*x2)", "1", "1 + 0.3*sin(2*pi*(x1+x2))");
        let full = second_derivative_terms(&f, &c, 0.0, IdentityMode::Full).unwrap();
        let seven = second_derivative_terms(&f, &c, 0.0, IdentityMode::InhomogeneousD).unwrap();
        assert_eq!(seven.terms.len(), 7);
        for (a, b) in full.terms.iter().zip(&seven.terms) {
            assert_eq!(a.name, b.name);
            assert!((a.value - b.value).abs() <= 1e-10);
        }
        assert!(full.terms[7..].iter().all(|t| t.value.abs() <= 1e-10));
        let sum: f64 = full.terms.iter().map(|t| t.value).sum();
        assert_eq!(sum, full.sum);
    }

    #[test]
    fn homogeneous_mode_sum_and_mismatch() {
        let (c, f) = setup(1, 64, "1", "0.5*cos(2*pi*x1)", "1", "1 + 0.3*sin(2*pi*x1)");
        let h = second_derivative_terms(&f, &c, 0.0, IdentityMode::Homogeneous).unwrap();
        assert_eq!(h.terms.len(), 2);
        assert_eq!(h.sum, h.get("hessian_phi").unwrap() + h.get("d_grad_u_sq").unwrap());

        let (c, f) = setup(1, 16, "2 + cos(2*pi*x1)", "0", "1", "1");
        assert!(matches!(
            second_derivative_terms(&f, &c, 0.0, IdentityMode::Homogeneous),
            Err(DiagnosticsError::ModeMismatch { .. })
        ));
        let (c, f) = setup(1, 16, "1", "0", "1 + 0.1*t", "1");
        assert!(matches!(
            second_derivative_terms(&f, &c, 0.0, IdentityMode::InhomogeneousD),
            Err(DiagnosticsError::ModeMismatch { .. })
        ));
    }

    #[test]
    fn convex_potential_has_nonnegative_homogeneous_sum() {
        // phi = 0 is convex with lambda = 0.
        let (c, f) = setup(1, 64, "1", "0", "1", "1 + 0.5*sin(2*pi*x1) + 0.2*cos(6*pi*x1)");
        let h = second_derivative_terms(&f, &c, 0.0, IdentityMode::Homogeneous).unwrap();
        assert!(h.sum >= -1e-10);
    }

    #[test]
    fn poincare_first_mode() {
        let g = build_grid(1, 128).unwrap();
        let f = ScalarField::constant(g, 1.0);
        let u = VectorField::sample(g, |x| [(2.0 * PI * x[0]).sin(), 0.0, 0.0]);
        let ratio = empirical_poincare(&f, &u).unwrap();
        let exact = 1.0 / (4.0 * PI * PI);
        assert!((ratio - exact).abs() / exact < 0.01);
        assert!((empirical_poincare(&f, &u.scale(3.5)).unwrap() - ratio).abs() < 1e-14);
        assert_eq!(
            empirical_poincare(&f, &VectorField::zeros(g)),
            Err(DiagnosticsError::UndefinedRatio("empirical Poincare ratio"))
        );
    }

    #[test]
    fn sobolev_first_mode() {
        let g = build_grid(1, 128).unwrap();
        let f = ScalarField::constant(g, 1.0);
        let u = VectorField::sample(g, |x| [(2.0 * PI * x[0]).sin(), 0.0, 0.0]);
        // (int sin^6)^(1/6) = (5/16)^(1/6); int (2 pi cos)^2 = 2 pi^2.
        let exact = (5.0f64 / 16.0).powf(1.0 / 6.0) / (2.0 * PI * 0.5f64.sqrt());
        let ratio = empirical_sobolev(&f, &u, DEFAULT_P_STAR).unwrap();
        assert!((ratio - exact).abs() / exact < 0.01, "{ratio} vs {exact}");
        assert!((empirical_sobolev(&f, &u.scale(-2.0), 6.0).unwrap() - ratio).abs() < 1e-14);
        assert!(empirical_sobolev(&f, &VectorField::zeros(g), 6.0).is_err());
        assert!(empirical_sobolev(&f, &u, 2.0).is_err());

        let weighted = empirical_sobolev_weighted(&f, &u, 6.0, 2.0).unwrap();
        let exact_w = (5.0f64 / 16.0).powf(1.0 / 6.0) / (2.0 * 2.0 * PI * PI + 1.0).sqrt();
        assert!((weighted - exact_w).abs() / exact_w < 0.01);
    }

    #[test]
    fn interpolation_examples() {
        let g = build_grid(1, 64).unwrap();
        let f = ScalarField::constant(g, 1.0);
        let zero = VectorField::zeros(g);
        assert_eq!(interpolation_check(&f, &zero, 1.0, InterpolationMode::PiConstant).unwrap(), 0.0);
        assert_eq!(interpolation_check(&f, &zero, 1.0, InterpolationMode::PiVariable).unwrap(), 0.0);
        assert!(interpolation_check(&f, &zero, 0.0, InterpolationMode::PiConstant).is_err());

        let u = VectorField::sample(g, |x| [(2.0 * PI * x[0]).sin(), 0.0, 0.0]);
        let k = empirical_sobolev(&f, &u, 6.0).unwrap();
        let m1 = interpolation_check(&f, &u, k, InterpolationMode::PiConstant).unwrap();
        assert!(m1 >= 0.0);
        let k4 = empirical_sobolev_weighted(&f, &u, 6.0, 2.0).unwrap();
        assert!(interpolation_check(&f, &u, k4, InterpolationMode::PiVariable).unwrap() >= 0.0);

        // Rescaling u recomputes both sides.
        let u2 = u.scale(2.0);
        let m2 = interpolation_check(&f, &u2, k, InterpolationMode::PiConstant).unwrap();
        let lhs1 = lp_norm(&f, &u, 3.0).powi(3);
        let lhs2 = lp_norm(&f, &u2, 3.0).powi(3);
        assert!((lhs2 - 8.0 * lhs1).abs() < 1e-12);
        let mom = moments(&f, &u);
        let expected_m2 = 0.75 * k.powf(1.5) * 4.0 * mom.grad_u2 + 0.25 * k.powf(1.5) * (4.0 * mom.u2).powi(3) - lhs2;
        assert!((m2 - expected_m2).abs() < 1e-9 * expected_m2.abs().max(1.0));
    }

    #[test]
    fn decay_fit_examples() {
        let recs: Vec<_> = (0..20).map(|i| {
            let t = 0.05 * i as f64;
            record(t, 0.0, 2.0 * (-3.0 * t).exp())
        }).collect();
        let fit = decay_fit(&series(recs.clone()), [0.0, 1.0]).unwrap();
        assert!((fit.rate - 3.0).abs() < 1e-10);
        assert!((fit.log_intercept - 2f64.ln()).abs() < 1e-10);
        assert!(fit.residual_rms < 1e-10);
        assert_eq!(fit.points, 20);

        assert!(matches!(
            decay_fit(&series(recs.clone()), [0.1, 0.1]),
            Err(DiagnosticsError::InsufficientPoints { got: 1, .. })
        ));
        assert!(decay_fit(&series(recs), [1.0, 0.0]).is_err());
    }

    #[test]
    fn heat_decay_rate() {
        let (c, f0) = setup(1, 64, "1", "0", "1", "1 + 0.05*sin(2*pi*x1)");
        let config = SolverConfig { t_end: 0.05, record_every: 20, ..Default::default() };
        let s = run(&f0, &c, &config, &mut |_, _| {}).unwrap();
        let fit = decay_fit(&s, [0.005, 0.05]).unwrap();
        let exact = 8.0 * PI * PI;
        assert!((fit.rate - exact).abs() / exact < 0.05, "rate {}", fit.rate);
    }
}
