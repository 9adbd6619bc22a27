//! Conservative finite-volume time stepping for
//! `f_t = div((f / pi) grad(D log f + phi))`.
//!
//! Fluxes live on cell faces. On the face between neighbouring cells `a` and
//! `b = a + e_k` the flux is
//!
//! ```text
//! F = H(f_a/pi_a, f_b/pi_b) * (psi_b - psi_a) / h,    psi = D log f + phi,
//! ```
//!
//! with `H` the harmonic mean. The cell update is the telescoping face
//! divergence, so mass is conserved to round-off, and `psi` constant (the
//! discrete equilibrium) is an exact fixed point. All loops run serially in
//! flat cell order, so results are bitwise reproducible.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coefficients::{CoefficientError, CoefficientSet};
use crate::diagnostics::{self, DiagnosticsError, DiagnosticsRecord, TimeSeries};
use crate::error::{check_density, FieldError};
use crate::grid::{centered_gradient, face_divergence, FaceFlux, GridError, ScalarField, VectorField};

/// Consecutive dt halvings before a step is declared stiff.
pub const MAX_REJECTIONS: usize = 10;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("cfl safety must lie in (0, 1], got {0}")]
    BadSafety(f64),
    #[error("time step must be positive and finite, got {0}")]
    BadTimeStep(f64),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(
        "step rejected {MAX_REJECTIONS} times at t = {t}: last dt = {dt}, \
         min f = {f_min} at cell {cell} (floor {floor})"
    )]
    Stiff { t: f64, dt: f64, f_min: f64, cell: usize, floor: f64 },
}

impl From<CoefficientError> for SolverError {
    fn from(err: CoefficientError) -> Self {
        Self::Field(FieldError::Coefficient(err))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Integrator {
    #[serde(rename = "explicit-euler")]
    ExplicitEuler,
    #[serde(rename = "rk4")]
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub cfl_safety: f64,
    /// Steps leaving any cell at or below this value are rejected.
    pub positivity_floor: f64,
    pub integrator: Integrator,
    pub t_end: f64,
    pub max_steps: usize,
    pub record_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            cfl_safety: 0.4,
            positivity_floor: 0.0,
            integrator: Integrator::Rk4,
            t_end: 1.0,
            max_steps: 10_000_000,
            record_every: 10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(SolverError::BadSafety(self.cfl_safety));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(SolverError::Config(format!("t_end must be finite and >= 0, got {}", self.t_end)));
        }
        if self.max_steps == 0 {
            return Err(SolverError::Config("max_steps must be at least 1".into()));
        }
        if self.record_every == 0 {
            return Err(SolverError::Config("record_every must be at least 1".into()));
        }
        if !self.positivity_floor.is_finite() || self.positivity_floor < 0.0 {
            return Err(SolverError::Config(format!(
                "positivity_floor must be finite and >= 0, got {}",
                self.positivity_floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub f: ScalarField,
    pub t: f64,
    pub step_index: usize,
}

impl SolverState {
    pub fn initial(f0: ScalarField) -> Self {
        Self { f: f0, t: 0.0, step_index: 0 }
    }
}

/// `psi = D log f + phi`.
pub fn chemical_potential(f: &ScalarField, coeffs: &CoefficientSet) -> Result<ScalarField, FieldError> {
    check_density(f.values())?;
    let d = coeffs.d().values();
    let phi = coeffs.phi().values();
    let values = f.values().iter().enumerate().map(|(c, &v)| d[c] * v.ln() + phi[c]).collect();
    Ok(ScalarField::from_values(*f.grid(), values).expect("same grid"))
}

/// `u = -(1/pi) grad(D log f + phi)` with the centered gradient.
pub fn compute_velocity(f: &ScalarField, coeffs: &CoefficientSet, t: f64) -> Result<VectorField, FieldError> {
    let psi = chemical_potential(f, coeffs)?;
    let pi = coeffs.pi_at(t)?;
    let mut u = centered_gradient(&psi);
    for comp in u.components_mut() {
        for (v, p) in comp.iter_mut().zip(pi.values()) {
            *v = -*v / p;
        }
    }
    Ok(u)
}

fn harmonic_mean(a: f64, b: f64) -> f64 {
    let s = a + b;
    if s > 0.0 {
        2.0 * a * b / s
    } else {
        0.0
    }
}

/// Face fluxes `H(f/pi) * dpsi / h` on every `+e_k` face.
pub fn face_fluxes(f: &ScalarField, coeffs: &CoefficientSet, t: f64) -> Result<FaceFlux, FieldError> {
    let psi = chemical_potential(f, coeffs)?;
    let pi = coeffs.pi_at(t)?;
    let grid = *f.grid();
    let inv_h = 1.0 / grid.spacing();
    let mobility: Vec<f64> = f.values().iter().zip(pi.values()).map(|(v, p)| v / p).collect();
    let psi = psi.values();
    let per_axis = (0..grid.dim())
        .map(|k| {
            (0..grid.cell_count())
                .map(|a| {
                    let b = grid.plus(a, k);
                    harmonic_mean(mobility[a], mobility[b]) * (psi[b] - psi[a]) * inv_h
                })
                .collect()
        })
        .collect();
    Ok(FaceFlux { per_axis })
}

/// Semi-discrete right-hand side `div((f/pi) grad psi)`.
pub fn rhs(f: &ScalarField, coeffs: &CoefficientSet, t: f64) -> Result<ScalarField, FieldError> {
    let flux = face_fluxes(f, coeffs, t)?;
    Ok(face_divergence(f.grid(), &flux).expect("flux shape matches grid"))
}

/// Parabolic step restriction `safety * h^2 / (2 n max(D/pi))`.
pub fn stable_dt(f: &ScalarField, coeffs: &CoefficientSet, t: f64, cfl_safety: f64) -> Result<f64, SolverError> {
    if !(cfl_safety > 0.0 && cfl_safety <= 1.0) {
        return Err(SolverError::BadSafety(cfl_safety));
    }
    let grid = f.grid();
    let h = grid.spacing();
    let ratio = coeffs.max_d_over_pi(t)?;
    Ok(cfl_safety * h * h / (2.0 * grid.dim() as f64 * ratio))
}

fn axpy(base: &ScalarField, scale: f64, dir: &ScalarField) -> ScalarField {
    base.zip_map(dir, |a, b| a + scale * b)
}

/// One attempt of the configured integrator; `Ok(None)` signals a positivity failure.
fn try_advance(
    f: &ScalarField,
    coeffs: &CoefficientSet,
    t: f64,
    dt: f64,
    integrator: Integrator,
    floor: f64,
) -> Result<Option<ScalarField>, FieldError> {
    let stage = |g: &ScalarField| -> Result<Option<ScalarField>, FieldError> {
        match rhs(g, coeffs, t) {
            Ok(r) => Ok(Some(r)),
            Err(FieldError::NonPositiveDensity { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let next = match integrator {
        Integrator::ExplicitEuler => {
            let Some(k1) = stage(f)? else { return Ok(None) };
            axpy(f, dt, &k1)
        }
        Integrator::Rk4 => {
            let Some(k1) = stage(f)? else { return Ok(None) };
            let Some(k2) = stage(&axpy(f, 0.5 * dt, &k1))? else { return Ok(None) };
            let Some(k3) = stage(&axpy(f, 0.5 * dt, &k2))? else { return Ok(None) };
            let Some(k4) = stage(&axpy(f, dt, &k3))? else { return Ok(None) };
            let mut out = f.clone();
            let w = dt / 6.0;
            for (c, v) in out.values_mut().iter_mut().enumerate() {
                *v += w * (k1.values()[c] + 2.0 * k2.values()[c] + 2.0 * k3.values()[c] + k4.values()[c]);
            }
            out
        }
    };
    if next.values().iter().any(|&v| !(v > floor) || !v.is_finite()) {
        return Ok(None);
    }
    Ok(Some(next))
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: SolverState,
    pub dt_used: f64,
    pub rejections: usize,
}

/// Advances one step, halving `dt` on positivity failures.
pub fn step(
    state: &SolverState,
    coeffs: &CoefficientSet,
    dt: f64,
    config: &SolverConfig,
) -> Result<StepOutcome, SolverError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SolverError::BadTimeStep(dt));
    }
    let mut dt = dt;
    for rejections in 0..=MAX_REJECTIONS {
        if let Some(f) =
            try_advance(&state.f, coeffs, state.t, dt, config.integrator, config.positivity_floor)?
        {
            let next = SolverState { f, t: state.t + dt, step_index: state.step_index + 1 };
            return Ok(StepOutcome { state: next, dt_used: dt, rejections });
        }
        if rejections < MAX_REJECTIONS {
            dt *= 0.5;
        }
    }
    let (cell, f_min) = state
        .f
        .values()
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (c, v)| if v < acc.1 { (c, v) } else { acc });
    Err(SolverError::Stiff { t: state.t, dt, f_min, cell, floor: config.positivity_floor })
}

/// Bookkeeping for one completed run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub accepted_steps: usize,
    pub rejections: usize,
    pub final_time: f64,
}

/// Steps from `f0` until `t_end` or `max_steps`, recording diagnostics at
/// the initial state, every `record_every` accepted steps, and the final state.
///
/// `hook` sees every recorded state together with its record.
pub fn run(
    f0: &ScalarField,
    coeffs: &CoefficientSet,
    config: &SolverConfig,
    hook: &mut dyn FnMut(&SolverState, &DiagnosticsRecord),
) -> Result<TimeSeries, SolverError> {
    config.validate()?;
    check_density(f0.values()).map_err(SolverError::Field)?;
    let recorder = diagnostics::Recorder::new(f0, coeffs)?;
    let mut series = TimeSeries::new(coeffs.sources().clone());

    let mut state = SolverState::initial(f0.clone());
    let mut push = |state: &SolverState, series: &mut TimeSeries| -> Result<(), SolverError> {
        let record = recorder.record(state, coeffs)?;
        hook(state, &record);
        series.push(record);
        Ok(())
    };
    push(&state, &mut series)?;

    let mut stats = RunStats::default();
    let mut last_recorded = 0usize;
    while state.t < config.t_end && stats.accepted_steps < config.max_steps {
        let remaining = config.t_end - state.t;
        let dt_max = stable_dt(&state.f, coeffs, state.t, config.cfl_safety)?;
        // Spread what is left evenly so the final step is never a sliver.
        let steps_left = (remaining / dt_max * (1.0 - 1e-12)).ceil().max(1.0);
        let last = steps_left == 1.0;
        let dt = if last { remaining } else { remaining / steps_left };
        let outcome = step(&state, coeffs, dt, config)?;
        let finished = last && outcome.rejections == 0;
        state = outcome.state;
        if finished {
            state.t = config.t_end;
        }
        stats.accepted_steps += 1;
        stats.rejections += outcome.rejections;
        if stats.accepted_steps % config.record_every == 0 {
            push(&state, &mut series)?;
            last_recorded = stats.accepted_steps;
        }
    }
    if last_recorded != stats.accepted_steps {
        push(&state, &mut series)?;
    }
    stats.final_time = state.t;
    series.stats = stats;
    Ok(series)
}
