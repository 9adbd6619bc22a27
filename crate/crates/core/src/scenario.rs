//! Scenario files, batch runs, parameter sweeps and their on-disk artifacts.
//!
//! A scenario is a JSON document naming a grid, four coefficient expressions,
//! solver settings, diagnostic settings and an optional theory block. Running
//! it produces `series.csv` (one row per recorded state) and `report.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coefficients::{
    build_constants_ledger, compute_equilibrium, sample_coefficients, CoefficientError, CoefficientSet,
    CoefficientSpecs, ConstantsLedger, ProbeTimes,
};
use crate::diagnostics::{
    decay_fit, dissipation, empirical_poincare, empirical_sobolev, empirical_sobolev_weighted, energy_law_residual,
    interpolation_check, second_derivative_terms, DecayFit, DiagnosticsRecord, IdentityMode, InterpolationMode,
    TermBreakdown, TimeSeries, DEFAULT_P_STAR, DEFAULT_SOBOLEV_EPSILON, ENVELOPE_TOLERANCE,
};
use crate::error::FieldError;
use crate::expr::{parse_expression, ExprError};
use crate::grid::{build_grid, integrate, GridError};
use crate::solver::{compute_velocity, run, Integrator, SolverConfig, SolverError};
use crate::theory::{
    check_condition_t2, check_condition_t3, check_condition_t4, compare_to_envelope, predicted_envelope,
    ConditionReport, ConstantInput, EnvelopeComparison, PredictedEnvelope, Theorem,
};

/// `f0` value that starts a run from the discrete equilibrium.
pub const EQUILIBRIUM_KEYWORD: &str = "equilibrium";

pub const SERIES_HEADER: [&str; 9] = [
    "t",
    "mass",
    "free_energy",
    "dissipation",
    "f_min",
    "f_max",
    "u_sup",
    "envelope_margin",
    "jensen_margin",
];

pub const SWEEP_HEADER: [&str; 10] = [
    "value",
    "decay_rate",
    "t2_rate_margin",
    "t2_pass",
    "t3_rate_margin",
    "t3_pass",
    "t4_rate_margin",
    "t4_pass",
    "status",
    "error",
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("malformed scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("field {field}: {source}")]
    Expression { field: String, source: ExprError },
    #[error("field {field}: {message}")]
    Invalid { field: String, message: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("output directory {0} is not empty; pass --force to overwrite")]
    OutputExists(PathBuf),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub cells_per_axis: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub t_end: f64,
    #[serde(default = "default_cfl")]
    pub cfl_safety: f64,
    #[serde(default = "default_integrator")]
    pub integrator: Integrator,
    #[serde(default)]
    pub positivity_floor: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_cfl() -> f64 {
    0.4
}

fn default_integrator() -> Integrator {
    Integrator::Rk4
}

fn default_max_steps() -> usize {
    10_000_000
}

fn default_record_every() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Defaults to `[t_end / 10, t_end]`.
    #[serde(default)]
    pub fit_window: Option<[f64; 2]>,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self { record_every: default_record_every(), fit_window: None }
    }
}

fn default_theorems() -> Vec<Theorem> {
    vec![Theorem::T2, Theorem::T3, Theorem::T4]
}

fn default_probe_count() -> usize {
    11
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    pub gamma: f64,
    #[serde(default)]
    pub certified_sobolev: Option<f64>,
    #[serde(default)]
    pub certified_poincare: Option<f64>,
    #[serde(default = "default_theorems")]
    pub theorems: Vec<Theorem>,
    /// Number of equally spaced times on `[0, t_end]` at which the mobility
    /// bounds are sampled.
    #[serde(default = "default_probe_count")]
    pub probe_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub grid: GridSpec,
    pub coefficients: CoefficientSpecs,
    pub solver: SolverSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub theory: Option<TheorySection>,
}

impl Scenario {
    /// Checks every field that can be checked without sampling.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        build_grid(self.grid.dim, self.grid.cells_per_axis)?;
        let c = &self.coefficients;
        let slots = [("coefficients.D", &c.d), ("coefficients.phi", &c.phi), ("coefficients.pi", &c.pi)];
        for (field, src) in slots {
            parse_expression(src).map_err(|source| ScenarioError::Expression { field: field.into(), source })?;
        }
        if c.f0.trim() != EQUILIBRIUM_KEYWORD {
            parse_expression(&c.f0)
                .map_err(|source| ScenarioError::Expression { field: "coefficients.f0".into(), source })?;
        }
        let config = self.solver_config();
        config.validate().map_err(|e| invalid("solver", e.to_string()))?;
        if let Some([lo, hi]) = self.diagnostics.fit_window {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(invalid("diagnostics.fit_window", format!("[{lo}, {hi}] is not a nonempty interval")));
            }
        }
        if let Some(theory) = &self.theory {
            if !(theory.gamma > 0.0 && theory.gamma.is_finite()) {
                return Err(invalid("theory.gamma", format!("must be positive, got {}", theory.gamma)));
            }
            for (field, value) in [
                ("theory.certified_sobolev", theory.certified_sobolev),
                ("theory.certified_poincare", theory.certified_poincare),
            ] {
                if let Some(v) = value {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(invalid(field, format!("must be positive, got {v}")));
                    }
                }
            }
            if theory.probe_count == 0 {
                return Err(invalid("theory.probe_count", "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            cfl_safety: self.solver.cfl_safety,
            positivity_floor: self.solver.positivity_floor,
            integrator: self.solver.integrator,
            t_end: self.solver.t_end,
            max_steps: self.solver.max_steps,
            record_every: self.diagnostics.record_every,
        }
    }

    pub fn fit_window(&self) -> [f64; 2] {
        self.diagnostics.fit_window.unwrap_or([0.1 * self.solver.t_end, self.solver.t_end])
    }

    /// Normalized JSON with every default written out.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Parses and validates scenario JSON text.
pub fn parse_scenario_str(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = serde_json::from_str(text)?;
    scenario.validate()?;
    Ok(scenario)
}

/// Reads, parses and validates a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Read { path: path.into(), source })?;
    parse_scenario_str(&text)
}

/// Samples coefficients and the initial density, resolving the equilibrium keyword.
pub fn prepare(scenario: &Scenario) -> Result<(CoefficientSet, crate::grid::ScalarField), ScenarioError> {
    let grid = build_grid(scenario.grid.dim, scenario.grid.cells_per_axis)?;
    let from_equilibrium = scenario.coefficients.f0.trim() == EQUILIBRIUM_KEYWORD;
    let mut specs = scenario.coefficients.clone();
    if from_equilibrium {
        specs.f0 = "1".into();
    }
    let (mut coeffs, f0) = sample_coefficients(&specs, &grid)?;
    if from_equilibrium {
        coeffs.set_sources(scenario.coefficients.clone());
        return Ok((coeffs.clone(), compute_equilibrium(&coeffs, 1e-13)?.feq));
    }
    Ok((coeffs, f0))
}

/// Most specific identity the coefficients admit.
pub fn identity_mode(coeffs: &CoefficientSet) -> IdentityMode {
    if coeffs.pi_is_constant() && coeffs.d_is_constant() {
        IdentityMode::Homogeneous
    } else if coeffs.pi_is_constant() {
        IdentityMode::InhomogeneousD
    } else {
        IdentityMode::Full
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSummary {
    pub shift: f64,
    pub feq_min: f64,
    pub feq_max: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSample {
    pub t: f64,
    pub breakdown: TermBreakdown,
    /// Three-point time derivative of `-D_dis` from neighbouring records.
    pub time_difference: Option<f64>,
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalConstants {
    pub poincare: Option<ConstantInput>,
    pub sobolev: Option<ConstantInput>,
    pub sobolev_weighted: Option<ConstantInput>,
    pub p_star: f64,
    pub epsilon: f64,
    /// Smallest interpolation margin over recorded states, each state using its own empirical ratio.
    pub interpolation_margin_pi_constant: Option<f64>,
    pub interpolation_margin_pi_variable: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub accepted_steps: usize,
    pub rejections: usize,
    pub final_time: f64,
    pub records: usize,
    pub max_mass_drift: f64,
    pub free_energy_max_increase: f64,
    pub max_abs_energy_residual: Option<f64>,
    pub worst_envelope_margin: f64,
    pub envelope_pass: bool,
    pub harnack_ratio: f64,
    pub worst_jensen_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub theorem: Theorem,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<ConditionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationEntry {
    pub theorem: Theorem,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope: Option<PredictedEnvelope>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<EnvelopeComparison>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub grid: GridSpec,
    pub coefficients: CoefficientSpecs,
    pub identity_mode: IdentityMode,
    pub equilibrium: EquilibriumSummary,
    pub ledger: ConstantsLedger,
    pub g0: f64,
    pub run: Option<RunSummary>,
    pub term_breakdowns: Vec<TermSample>,
    pub decay_fit: Option<DecayFit>,
    pub decay_fit_error: Option<String>,
    pub functional_constants: FunctionalConstants,
    pub conditions: Vec<ConditionEntry>,
    pub envelope_domination: Vec<DominationEntry>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub series: TimeSeries,
    pub report: Report,
}

fn running_max(slot: &mut Option<f64>, value: Option<f64>) {
    if let Some(v) = value {
        *slot = Some(slot.map_or(v, |s: f64| s.max(v)));
    }
}

fn running_min(slot: &mut Option<f64>, value: Option<f64>) {
    if let Some(v) = value {
        *slot = Some(slot.map_or(v, |s: f64| s.min(v)));
    }
}

#[derive(Default)]
struct Empirical {
    poincare: Option<f64>,
    sobolev: Option<f64>,
    sobolev_weighted: Option<f64>,
    interp_constant: Option<f64>,
    interp_variable: Option<f64>,
}

impl Empirical {
    fn observe(&mut self, f: &crate::grid::ScalarField, coeffs: &CoefficientSet, t: f64) -> Result<(), FieldError> {
        let u = compute_velocity(f, coeffs, t)?;
        running_max(&mut self.poincare, empirical_poincare(f, &u).ok());
        let k = empirical_sobolev(f, &u, DEFAULT_P_STAR).ok();
        let kw = empirical_sobolev_weighted(f, &u, DEFAULT_P_STAR, DEFAULT_SOBOLEV_EPSILON).ok();
        running_max(&mut self.sobolev, k);
        running_max(&mut self.sobolev_weighted, kw);
        if let Some(k) = k.filter(|k| *k > 0.0) {
            running_min(&mut self.interp_constant, interpolation_check(f, &u, k, InterpolationMode::PiConstant).ok());
        }
        if let Some(kw) = kw.filter(|k| *k > 0.0) {
            running_min(&mut self.interp_variable, interpolation_check(f, &u, kw, InterpolationMode::PiVariable).ok());
        }
        Ok(())
    }

    fn constants(&self, theory: Option<&TheorySection>) -> FunctionalConstants {
        let pick = |certified: Option<f64>, empirical: Option<f64>| {
            certified.map(ConstantInput::certified).or(empirical.map(ConstantInput::empirical))
        };
        let cert_k = theory.and_then(|t| t.certified_sobolev);
        let cert_p = theory.and_then(|t| t.certified_poincare);
        FunctionalConstants {
            poincare: pick(cert_p, self.poincare),
            sobolev: pick(cert_k, self.sobolev),
            sobolev_weighted: pick(cert_k, self.sobolev_weighted),
            p_star: DEFAULT_P_STAR,
            epsilon: DEFAULT_SOBOLEV_EPSILON,
            interpolation_margin_pi_constant: self.interp_constant,
            interpolation_margin_pi_variable: self.interp_variable,
        }
    }
}

fn condition_entries(
    theory: &TheorySection,
    ledger: &ConstantsLedger,
    constants: &FunctionalConstants,
    g0: f64,
) -> Vec<ConditionEntry> {
    theory
        .theorems
        .iter()
        .map(|&theorem| {
            let missing = |what: &str| format!("no {what} constant: velocity gradient vanished on every sampled state and none was certified");
            let result = match (theorem, constants.poincare, constants.sobolev, constants.sobolev_weighted) {
                (_, None, _, _) => Err(missing("Poincare")),
                (Theorem::T2, Some(p), _, _) => {
                    check_condition_t2(ledger, p, theory.gamma, g0).map_err(|e| e.to_string())
                }
                (Theorem::T3, Some(p), Some(k), _) => {
                    check_condition_t3(ledger, k, p, theory.gamma, g0).map_err(|e| e.to_string())
                }
                (Theorem::T4, Some(p), _, Some(k)) => {
                    check_condition_t4(ledger, k, p, theory.gamma, g0).map_err(|e| e.to_string())
                }
                _ => Err(missing("Sobolev")),
            };
            match result {
                Ok(report) => ConditionEntry { theorem, report: Some(report), error: None },
                Err(error) => ConditionEntry { theorem, report: None, error: Some(error) },
            }
        })
        .collect()
}

/// Runs only the checks that need no time stepping.
pub fn check_scenario(scenario: &Scenario) -> Result<Report, ScenarioError> {
    scenario.validate()?;
    let (coeffs, f0) = prepare(scenario)?;
    let mut empirical = Empirical::default();
    empirical.observe(&f0, &coeffs, 0.0)?;
    build_report(scenario, &coeffs, &f0, &empirical, None)
}

fn build_report(
    scenario: &Scenario,
    coeffs: &CoefficientSet,
    f0: &crate::grid::ScalarField,
    empirical: &Empirical,
    series: Option<(&TimeSeries, RunSummary, Vec<TermSample>)>,
) -> Result<Report, ScenarioError> {
    let eq = compute_equilibrium(coeffs, 1e-13)?;
    let probes = ProbeTimes {
        horizon: scenario.solver.t_end,
        count: scenario.theory.as_ref().map_or(default_probe_count(), |t| t.probe_count),
    };
    let ledger = build_constants_ledger(coeffs, f0, probes)?;
    let g0 = dissipation(f0, coeffs, 0.0)?;
    let constants = empirical.constants(scenario.theory.as_ref());

    let trajectory = series.as_ref().map(|x| x.0);
    let (run, term_breakdowns, decay_fit_result) = match series {
        Some((s, summary, samples)) => (Some(summary), samples, Some(decay_fit(s, scenario.fit_window()))),
        None => (None, Vec::new(), None),
    };
    let (decay_fit, decay_fit_error) = match decay_fit_result {
        Some(Ok(fit)) => (Some(fit), None),
        Some(Err(e)) => (None, Some(e.to_string())),
        None => (None, None),
    };

    let mut conditions = Vec::new();
    let mut domination = Vec::new();
    if let Some(theory) = &scenario.theory {
        conditions = condition_entries(theory, &ledger, &constants, g0);
        if let Some(s) = trajectory {
            domination = theory
                .theorems
                .iter()
                .map(|&theorem| match predicted_envelope(theorem, theory.gamma, g0, ledger.pi_min) {
                    Ok(env) => DominationEntry {
                        theorem,
                        envelope: Some(env),
                        comparison: Some(compare_to_envelope(s, &env)),
                        error: None,
                    },
                    Err(e) => DominationEntry { theorem, envelope: None, comparison: None, error: Some(e.to_string()) },
                })
                .collect();
        }
    }

    let provenance = |c: &Option<ConstantInput>| match c {
        Some(c) => format!("{:?}", c.provenance).to_lowercase(),
        None => "unavailable".into(),
    };
    let notes = vec![
        format!(
            "Sobolev and Poincare constants are not computable in closed form; this report uses poincare={}, sobolev={}, sobolev_weighted={}.",
            provenance(&constants.poincare),
            provenance(&constants.sobolev),
            provenance(&constants.sobolev_weighted)
        ),
        "Empirical constants are running maxima over recorded states and only bound the true constants from below."
            .into(),
        "Only the dissipation rate is certified to decay; free-energy decay is measured but not certified.".into(),
        format!(
            "The weighted Sobolev ratio uses p* = {} (the chain requires p* > 2) reduced to the L2 level by Holder with epsilon = {}.",
            constants.p_star, constants.epsilon
        ),
    ];

    Ok(Report {
        scenario: scenario.name.clone(),
        grid: scenario.grid,
        coefficients: scenario.coefficients.clone(),
        identity_mode: identity_mode(coeffs),
        equilibrium: EquilibriumSummary {
            shift: eq.shift,
            feq_min: eq.feq.min(),
            feq_max: eq.feq.max(),
            mass: integrate(&eq.feq),
        },
        ledger,
        g0,
        run,
        term_breakdowns,
        decay_fit,
        decay_fit_error,
        functional_constants: constants,
        conditions,
        envelope_domination: domination,
        notes,
    })
}

fn three_point_derivative(t: [f64; 3], y: [f64; 3]) -> f64 {
    let h1 = t[1] - t[0];
    let h2 = t[2] - t[1];
    -h2 / (h1 * (h1 + h2)) * y[0] + (h2 - h1) / (h1 * h2) * y[1] + h1 / (h2 * (h1 + h2)) * y[2]
}

fn summarize(series: &TimeSeries, harnack_ratio: f64) -> RunSummary {
    let r = series.records();
    let max_mass_drift = r.iter().map(|x| (x.mass - 1.0).abs()).fold(0.0, f64::max);
    let free_energy_max_increase =
        r.windows(2).map(|w| w[1].free_energy - w[0].free_energy).fold(f64::NEG_INFINITY, f64::max);
    let worst_envelope_margin = r.iter().map(|x| x.envelope_violation).fold(f64::INFINITY, f64::min);
    RunSummary {
        accepted_steps: series.stats.accepted_steps,
        rejections: series.stats.rejections,
        final_time: series.stats.final_time,
        records: r.len(),
        max_mass_drift,
        free_energy_max_increase: if r.len() < 2 { 0.0 } else { free_energy_max_increase },
        max_abs_energy_residual: energy_law_residual(series)
            .ok()
            .map(|v| v.iter().map(|x| x.abs()).fold(0.0, f64::max)),
        worst_envelope_margin,
        envelope_pass: worst_envelope_margin >= -ENVELOPE_TOLERANCE,
        harnack_ratio,
        worst_jensen_margin: r.iter().map(|x| x.jensen_margin).fold(f64::INFINITY, f64::min),
    }
}

fn term_samples(series: &TimeSeries, breakdowns: Vec<TermBreakdown>) -> Vec<TermSample> {
    let r = series.records();
    let picks: Vec<usize> = if r.len() >= 3 {
        let mut p = vec![1, r.len() / 2, r.len() - 2];
        p.dedup();
        p
    } else {
        vec![0]
    };
    picks
        .into_iter()
        .map(|i| {
            let breakdown = breakdowns[i].clone();
            let time_difference = (i >= 1 && i + 1 < r.len()).then(|| {
                -three_point_derivative(
                    [r[i - 1].t, r[i].t, r[i + 1].t],
                    [r[i - 1].dissipation, r[i].dissipation, r[i + 1].dissipation],
                )
            });
            let relative_error = time_difference
                .filter(|d| *d != 0.0)
                .map(|d| (breakdown.sum - d).abs() / d.abs());
            TermSample { t: r[i].t, breakdown, time_difference, relative_error }
        })
        .collect()
}

/// Runs a scenario in memory.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioOutcome, ScenarioError> {
    scenario.validate()?;
    let (coeffs, f0) = prepare(scenario)?;
    let mode = identity_mode(&coeffs);
    let mut empirical = Empirical::default();
    let mut breakdowns = Vec::new();
    let mut hook_error: Option<ScenarioError> = None;
    let series = run(&f0, &coeffs, &scenario.solver_config(), &mut |state, _record: &DiagnosticsRecord| {
        if hook_error.is_some() {
            return;
        }
        let mut step = || -> Result<TermBreakdown, ScenarioError> {
            empirical.observe(&state.f, &coeffs, state.t)?;
            second_derivative_terms(&state.f, &coeffs, state.t, mode)
                .map_err(|e| ScenarioError::Solver(SolverError::Diagnostics(e)))
        };
        match step() {
            Ok(b) => breakdowns.push(b),
            Err(e) => hook_error = Some(e),
        }
    })?;
    if let Some(e) = hook_error {
        return Err(e);
    }
    let recorder_eq = compute_equilibrium(&coeffs, 1e-13)?;
    let envelope = crate::diagnostics::max_principle_envelope(&f0, &recorder_eq.feq, &coeffs)?;
    let summary = summarize(&series, envelope.harnack_ratio());
    let samples = term_samples(&series, breakdowns);
    let report = build_report(scenario, &coeffs, &f0, &empirical, Some((&series, summary, samples)))?;
    Ok(ScenarioOutcome { series, report })
}

/// Fixed 17-significant-digit rendering used by every CSV column.
pub fn format_number(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_series_csv(path: &Path, series: &TimeSeries) -> Result<(), ScenarioError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SERIES_HEADER)?;
    for r in series.records() {
        w.write_record(
            [r.t, r.mass, r.free_energy, r.dissipation, r.f_min, r.f_max, r.u_sup, r.envelope_violation, r.jensen_margin]
                .map(format_number),
        )?;
    }
    w.flush().map_err(|source| ScenarioError::Write { path: path.into(), source })?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ScenarioError> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|source| ScenarioError::Write { path: path.into(), source })
}

/// Creates `dir`, refusing to reuse a non-empty directory unless `force` is set.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<(), ScenarioError> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .map_err(|source| ScenarioError::Read { path: dir.into(), source })?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(ScenarioError::OutputExists(dir.into()));
        }
    }
    fs::create_dir_all(dir).map_err(|source| ScenarioError::Write { path: dir.into(), source })
}

/// Writes `series.csv`, `report.json` and the normalized `scenario.json` into `dir`.
pub fn write_artifacts(dir: &Path, scenario: &Scenario, outcome: &ScenarioOutcome) -> Result<(), ScenarioError> {
    write_series_csv(&dir.join("series.csv"), &outcome.series)?;
    write_json(&dir.join("report.json"), &outcome.report)?;
    write_json(&dir.join("scenario.json"), scenario)
}

/// Parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Multiplies `D` by the value.
    DScale,
    /// Sets `theory.gamma`.
    Gamma,
    /// Replaces `pi` by `1 + s (pi - 1)`.
    GradPiScale,
    /// Sets `cells_per_axis`.
    Resolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepBase {
    Inline(Box<Scenario>),
    /// Path relative to the sweep file.
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: SweepBase,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl SweepSpec {
    /// The base scenario, loading it from disk when given by path.
    pub fn base_scenario(&self, relative_to: Option<&Path>) -> Result<Scenario, ScenarioError> {
        match &self.base {
            SweepBase::Inline(s) => Ok((**s).clone()),
            SweepBase::Path(p) => {
                let full = match relative_to {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                };
                parse_scenario(&full)
            }
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.values.is_empty() {
            return Err(invalid("values", "sweep needs at least one value"));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(invalid("values", format!("non-finite value {v}")));
        }
        Ok(())
    }
}

pub fn parse_sweep(path: &Path) -> Result<(SweepSpec, Scenario), ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Read { path: path.into(), source })?;
    let spec: SweepSpec = serde_json::from_str(&text)?;
    spec.validate()?;
    let base = spec.base_scenario(path.parent())?;
    base.validate()?;
    Ok((spec, base))
}

/// The scenario for one sweep value.
pub fn apply_axis(base: &Scenario, axis: SweepAxis, value: f64) -> Result<Scenario, ScenarioError> {
    let mut s = base.clone();
    s.name = format!("{}[{}={}]", base.name, axis_name(axis), value);
    match axis {
        SweepAxis::DScale => s.coefficients.d = format!("({value})*({})", base.coefficients.d),
        SweepAxis::Gamma => match &mut s.theory {
            Some(t) => t.gamma = value,
            None => {
                s.theory = Some(TheorySection {
                    gamma: value,
                    certified_sobolev: None,
                    certified_poincare: None,
                    theorems: default_theorems(),
                    probe_count: default_probe_count(),
                })
            }
        },
        SweepAxis::GradPiScale => {
            s.coefficients.pi = format!("1 + ({value})*(({}) - 1)", base.coefficients.pi)
        }
        SweepAxis::Resolution => {
            if value.fract() != 0.0 || value < 0.0 {
                return Err(invalid("values", format!("resolution must be a whole number, got {value}")));
            }
            s.grid.cells_per_axis = value as usize;
        }
    }
    s.validate()?;
    Ok(s)
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::DScale => "d_scale",
        SweepAxis::Gamma => "gamma",
        SweepAxis::GradPiScale => "grad_pi_scale",
        SweepAxis::Resolution => "resolution",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub decay_rate: Option<f64>,
    /// `(theorem, lhs - rhs of the rate clause, overall pass)`.
    pub margins: Vec<(Theorem, Option<f64>, Option<bool>)>,
    pub error: Option<String>,
}

impl SweepRow {
    fn from_outcome(value: f64, result: Result<Report, ScenarioError>) -> Self {
        match result {
            Err(e) => Self { value, decay_rate: None, margins: Vec::new(), error: Some(e.to_string()) },
            Ok(report) => {
                let margins = report
                    .conditions
                    .iter()
                    .map(|c| match &c.report {
                        Some(r) => {
                            let rate = r.clause("rate").map(|cl| cl.lhs - cl.rhs);
                            (c.theorem, rate, Some(r.overall))
                        }
                        None => (c.theorem, None, None),
                    })
                    .collect();
                Self { value, decay_rate: report.decay_fit.map(|f| f.rate), margins, error: report.decay_fit_error }
            }
        }
    }

    pub fn margin(&self, theorem: Theorem) -> (Option<f64>, Option<bool>) {
        self.margins.iter().find(|m| m.0 == theorem).map_or((None, None), |m| (m.1, m.2))
    }

    fn csv_fields(&self) -> Vec<String> {
        let num = |x: Option<f64>| x.map(format_number).unwrap_or_default();
        let flag = |x: Option<bool>| x.map(|b| b.to_string()).unwrap_or_default();
        let mut out = vec![format_number(self.value), num(self.decay_rate)];
        for th in [Theorem::T2, Theorem::T3, Theorem::T4] {
            let (m, p) = self.margin(th);
            out.push(num(m));
            out.push(flag(p));
        }
        let status = if self.decay_rate.is_some() { "ok" } else { "error" };
        out.push(status.into());
        out.push(self.error.clone().unwrap_or_default());
        out
    }
}

/// Runs every sweep value on a pool of `jobs` threads and writes per-row
/// artifacts under `out/row_<kkk>` (zero-padded index) plus the merged `out/sweep.csv`.
pub fn run_sweep(spec: &SweepSpec, base: &Scenario, out: &Path, jobs: usize) -> Result<Vec<SweepRow>, ScenarioError> {
    use rayon::prelude::*;
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ScenarioError::Pool(e.to_string()))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        spec.values
            .par_iter()
            .enumerate()
            .map(|(k, &value)| {
                let result = apply_axis(base, spec.axis, value).and_then(|scenario| {
                    let outcome = run_scenario(&scenario)?;
                    let dir = out.join(format!("row_{k:03}"));
                    fs::create_dir_all(&dir).map_err(|source| ScenarioError::Write { path: dir.clone(), source })?;
                    write_artifacts(&dir, &scenario, &outcome)?;
                    Ok(outcome.report)
                });
                SweepRow::from_outcome(value, result)
            })
            .collect()
    });
    let path = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["axis".to_string()];
    header.extend(SWEEP_HEADER.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for row in &rows {
        let mut fields = vec![axis_name(spec.axis).to_string()];
        fields.extend(row.csv_fields());
        w.write_record(&fields)?;
    }
    w.flush().map_err(|source| ScenarioError::Write { path, source })?;
    Ok(rows)
}
