//! Python bindings for `fpk-core`.
//!
//! Structured results (ledgers, condition reports, time series, scenario
//! reports) cross the boundary as plain dictionaries and lists.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::Serialize;

use fpk_core::coefficients::{build_constants_ledger, compute_equilibrium, sample_coefficients, ProbeTimes};
use fpk_core::diagnostics;
use fpk_core::grid::{build_grid, ScalarField};
use fpk_core::scenario;
use fpk_core::solver::{self, Integrator, SolverConfig};
use fpk_core::theory::{self, ConstantInput, GronwallSpec};
use fpk_core::{CoefficientSet, CoefficientSpecs};

fn value_error(err: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn to_python<'py, T: Serialize + ?Sized>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

/// A discretized problem: grid plus sampled coefficient fields.
#[pyclass(module = "fpk")]
struct Problem {
    coeffs: CoefficientSet,
    f0: ScalarField,
}

impl Problem {
    fn field(&self, values: Vec<f64>) -> PyResult<ScalarField> {
        ScalarField::from_values(*self.f0.grid(), values).map_err(value_error)
    }
}

#[pymethods]
impl Problem {
    #[new]
    #[pyo3(signature = (dim, cells_per_axis, d, phi, pi="1", f0="1"))]
    fn new(dim: usize, cells_per_axis: usize, d: &str, phi: &str, pi: &str, f0: &str) -> PyResult<Self> {
        let grid = build_grid(dim, cells_per_axis).map_err(value_error)?;
        let (coeffs, f0) = sample_coefficients(&CoefficientSpecs::new(d, phi, pi, f0), &grid).map_err(value_error)?;
        Ok(Self { coeffs, f0 })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.f0.grid().dim()
    }

    #[getter]
    fn cells_per_axis(&self) -> usize {
        self.f0.grid().cells_per_axis()
    }

    /// Unit-mass initial density, flattened in row-major cell order.
    fn initial_density(&self) -> Vec<f64> {
        self.f0.values().to_vec()
    }

    /// Returns `(shift, feq)` for the equilibrium of the frozen coefficients.
    #[pyo3(signature = (tol=1e-13))]
    fn equilibrium(&self, tol: f64) -> PyResult<(f64, Vec<f64>)> {
        let eq = compute_equilibrium(&self.coeffs, tol).map_err(value_error)?;
        Ok((eq.shift, eq.feq.values().to_vec()))
    }

    fn free_energy(&self, f: Vec<f64>) -> PyResult<f64> {
        diagnostics::free_energy(&self.field(f)?, &self.coeffs).map_err(value_error)
    }

    #[pyo3(signature = (f, t=0.0))]
    fn dissipation(&self, f: Vec<f64>, t: f64) -> PyResult<f64> {
        diagnostics::dissipation(&self.field(f)?, &self.coeffs, t).map_err(value_error)
    }

    #[pyo3(signature = (probe_horizon=0.0, probe_count=1))]
    fn ledger<'py>(&self, py: Python<'py>, probe_horizon: f64, probe_count: usize) -> PyResult<Bound<'py, PyAny>> {
        let probes = ProbeTimes { horizon: probe_horizon, count: probe_count };
        let ledger = build_constants_ledger(&self.coeffs, &self.f0, probes).map_err(value_error)?;
        to_python(py, &ledger)
    }

    /// Evaluates the conditions of `theorem` ("T2", "T3" or "T4") on certified constants.
    #[pyo3(signature = (theorem, gamma, sobolev, poincare, probe_horizon=0.0, probe_count=1))]
    #[allow(clippy::too_many_arguments)]
    fn check<'py>(
        &self,
        py: Python<'py>,
        theorem: &str,
        gamma: f64,
        sobolev: f64,
        poincare: f64,
        probe_horizon: f64,
        probe_count: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let probes = ProbeTimes { horizon: probe_horizon, count: probe_count };
        let ledger = build_constants_ledger(&self.coeffs, &self.f0, probes).map_err(value_error)?;
        let g0 = diagnostics::dissipation(&self.f0, &self.coeffs, 0.0).map_err(value_error)?;
        let k = ConstantInput::certified(sobolev);
        let p = ConstantInput::certified(poincare);
        let report = match theorem {
            "T2" => theory::check_condition_t2(&ledger, p, gamma, g0),
            "T3" => theory::check_condition_t3(&ledger, k, p, gamma, g0),
            "T4" => theory::check_condition_t4(&ledger, k, p, gamma, g0),
            other => return Err(PyValueError::new_err(format!("unknown theorem {other:?}"))),
        }
        .map_err(value_error)?;
        to_python(py, &report)
    }

    /// Integrates to `t_end` and returns the recorded diagnostics and the final density.
    #[pyo3(signature = (t_end, integrator="rk4", cfl_safety=0.4, record_every=10))]
    fn run<'py>(
        &self,
        py: Python<'py>,
        t_end: f64,
        integrator: &str,
        cfl_safety: f64,
        record_every: usize,
    ) -> PyResult<(Bound<'py, PyAny>, Vec<f64>)> {
        let integrator = match integrator {
            "rk4" => Integrator::Rk4,
            "explicit-euler" => Integrator::ExplicitEuler,
            other => return Err(PyValueError::new_err(format!("unknown integrator {other:?}"))),
        };
        let config = SolverConfig { t_end, integrator, cfl_safety, record_every, ..Default::default() };
        let mut last = self.f0.values().to_vec();
        let series = py
            .detach(|| solver::run(&self.f0, &self.coeffs, &config, &mut |s, _| last = s.f.values().to_vec()))
            .map_err(value_error)?;
        Ok((to_python(py, series.records())?, last))
    }
}

#[pyfunction]
fn gronwall_threshold(c: f64, d: f64, p: f64) -> PyResult<f64> {
    let spec = GronwallSpec::new(c, d, p, 0.0).map_err(value_error)?;
    Ok(theory::gronwall_threshold(&spec))
}

#[pyfunction]
fn gronwall_bound(c: f64, d: f64, p: f64, g0: f64, t: f64) -> PyResult<f64> {
    let spec = GronwallSpec::new(c, d, p, g0).map_err(value_error)?;
    theory::gronwall_bound(&spec, t).map_err(value_error)
}

/// Runs a scenario given as JSON text and returns its report.
#[pyfunction]
fn run_scenario<'py>(py: Python<'py>, scenario_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let s = scenario::parse_scenario_str(scenario_json).map_err(value_error)?;
    let outcome = py.detach(|| scenario::run_scenario(&s)).map_err(value_error)?;
    to_python(py, &outcome.report)
}

/// Evaluates a scenario's conditions on its initial state without stepping.
#[pyfunction]
fn check_scenario<'py>(py: Python<'py>, scenario_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let s = scenario::parse_scenario_str(scenario_json).map_err(value_error)?;
    to_python(py, &scenario::check_scenario(&s).map_err(value_error)?)
}

#[pymodule]
fn fpk(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_function(wrap_pyfunction!(gronwall_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(gronwall_bound, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(check_scenario, m)?)?;
    Ok(())
}
