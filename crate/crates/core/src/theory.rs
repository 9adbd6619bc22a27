//! Sufficient conditions of the three decay theorems, the Gronwall-type
//! comparison lemma, and predicted exponential envelopes for the dissipation.
//!
//! Each checker returns every clause with both sides stored numerically so a
//! report can be re-verified from its own contents.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coefficients::ConstantsLedger;
use crate::diagnostics::TimeSeries;

/// Slack allowed when comparing a trajectory against its predicted envelope.
pub const ENVELOPE_SLACK: f64 = 1e-6;

/// Dissipation values at or below this are treated as zero.
pub const ZERO_DISSIPATION: f64 = 1e-12;

/// Values above this end a comparison ODE solve as a blow-up.
pub const BLOW_UP_LEVEL: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("gamma must be positive and finite, got {0}")]
    BadGamma(f64),
    #[error("{name} must be positive and finite, got {value}")]
    BadConstant { name: &'static str, value: f64 },
    #[error("{theorem} requires {requirement}")]
    WrongRegime { theorem: Theorem, requirement: &'static str },
    #[error("theorem conditions assume d_min >= 1, ledger has {0}")]
    DiffusionFloor(f64),
    #[error("g0 = {g0} is not below the Gronwall threshold {threshold}")]
    ThresholdViolation { g0: f64, threshold: f64 },
    #[error("invalid Gronwall parameters: {0}")]
    BadSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Theorem {
    T2,
    T3,
    T4,
}

impl std::fmt::Display for Theorem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::T2 => "T2",
            Self::T3 => "T3",
            Self::T4 => "T4",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
}

impl Relation {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Self::Le => lhs <= rhs,
            Self::Ge => lhs >= rhs,
            Self::Lt => lhs < rhs,
        }
    }
}

/// One inequality `lhs relation rhs`. Infinite sides serialize as `null`
/// and stand for `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub name: String,
    pub lhs: f64,
    pub relation: Relation,
    pub rhs: f64,
    pub pass: bool,
}

impl Clause {
    pub fn new(name: &str, lhs: f64, relation: Relation, rhs: f64) -> Self {
        Self { name: name.to_string(), lhs, relation, rhs, pass: relation.holds(lhs, rhs) }
    }
}

/// Where a functional-inequality constant came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Empirical,
    Certified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantInput {
    pub value: f64,
    pub provenance: Provenance,
}

impl ConstantInput {
    pub fn empirical(value: f64) -> Self {
        Self { value, provenance: Provenance::Empirical }
    }

    pub fn certified(value: f64) -> Self {
        Self { value, provenance: Provenance::Certified }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub theorem: Theorem,
    pub ledger: ConstantsLedger,
    pub gamma: f64,
    /// Initial dissipation `int pi |u0|^2 f0`.
    pub g0: f64,
    pub sobolev: Option<ConstantInput>,
    pub poincare: ConstantInput,
    pub clauses: Vec<Clause>,
    pub overall: bool,
}

impl ConditionReport {
    fn new(
        theorem: Theorem,
        ledger: &ConstantsLedger,
        gamma: f64,
        g0: f64,
        sobolev: Option<ConstantInput>,
        poincare: ConstantInput,
        clauses: Vec<Clause>,
    ) -> Self {
        let overall = clauses.iter().all(|c| c.pass);
        Self { theorem, ledger: ledger.clone(), gamma, g0, sobolev, poincare, clauses, overall }
    }

    pub fn clause(&self, name: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.name == name)
    }

    /// Re-evaluates every clause from its stored sides.
    pub fn is_consistent(&self) -> bool {
        self.clauses.iter().all(|c| c.pass == c.relation.holds(c.lhs, c.rhs))
            && self.overall == self.clauses.iter().all(|c| c.pass)
    }
}

fn check_gamma(gamma: f64) -> Result<(), TheoryError> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(TheoryError::BadGamma(gamma))
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<(), TheoryError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(TheoryError::BadConstant { name, value })
    }
}

fn check_common(ledger: &ConstantsLedger, gamma: f64, g0: f64) -> Result<(), TheoryError> {
    check_gamma(gamma)?;
    if !(g0 >= 0.0) || g0.is_nan() {
        return Err(TheoryError::BadConstant { name: "g0", value: g0 });
    }
    if !(ledger.d_min >= 1.0) {
        return Err(TheoryError::DiffusionFloor(ledger.d_min));
    }
    Ok(())
}

fn mobility_is_constant(ledger: &ConstantsLedger) -> bool {
    ledger.grad_pi == 0.0 && ledger.pi_time == 0.0 && ledger.pi_min == ledger.pi_max
}

/// Homogeneous regime: `-2 lambda + 2 d_min / P >= gamma` and `g0 < inf`.
pub fn check_condition_t2(
    ledger: &ConstantsLedger,
    poincare: ConstantInput,
    gamma: f64,
    g0: f64,
) -> Result<ConditionReport, TheoryError> {
    check_common(ledger, gamma, g0)?;
    check_positive("Poincare constant", poincare.value)?;
    if ledger.grad_d != 0.0 || !mobility_is_constant(ledger) {
        return Err(TheoryError::WrongRegime { theorem: Theorem::T2, requirement: "constant D and constant pi" });
    }
    let clauses = vec![
        Clause::new(
            "rate",
            -2.0 * ledger.hess_phi_lower + 2.0 * ledger.d_min / poincare.value,
            Relation::Ge,
            gamma,
        ),
        Clause::new("initial_dissipation_finite", g0, Relation::Lt, f64::INFINITY),
    ];
    Ok(ConditionReport::new(Theorem::T2, ledger, gamma, g0, None, poincare, clauses))
}

/// Variable diffusion, constant mobility.
pub fn check_condition_t3(
    ledger: &ConstantsLedger,
    sobolev: ConstantInput,
    poincare: ConstantInput,
    gamma: f64,
    g0: f64,
) -> Result<ConditionReport, TheoryError> {
    check_common(ledger, gamma, g0)?;
    check_positive("Sobolev constant", sobolev.value)?;
    check_positive("Poincare constant", poincare.value)?;
    if !mobility_is_constant(ledger) {
        return Err(TheoryError::WrongRegime { theorem: Theorem::T3, requirement: "constant pi" });
    }
    let n = ledger.dim as f64;
    let l = ledger.log_f_bound;
    let gd = ledger.grad_d;
    let k32 = sobolev.value.powf(1.5);
    let floor = (3.0 * l * gd * k32)
        .max(2.0 * l * gd * ledger.grad_phi_sup)
        .max(4.0 * (1.0 + n) * (l + 1.0).powi(2) * gd * gd);
    let clauses = vec![
        Clause::new("diffusion_floor", floor, Relation::Le, ledger.d_min),
        Clause::new(
            "rate",
            -2.0 * (ledger.hess_phi_lower + 1.0) + ledger.d_min / poincare.value,
            Relation::Ge,
            gamma,
        ),
        Clause::new("gronwall_threshold", g0, Relation::Lt, (6.0 * gamma).sqrt()),
    ];
    Ok(ConditionReport::new(Theorem::T3, ledger, gamma, g0, Some(sobolev), poincare, clauses))
}

/// `a / b`, or `+inf` when `b` vanishes.
fn ratio_or_inf(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        f64::INFINITY
    } else {
        a / b
    }
}

/// Variable diffusion and time-dependent mobility.
pub fn check_condition_t4(
    ledger: &ConstantsLedger,
    sobolev: ConstantInput,
    poincare: ConstantInput,
    gamma: f64,
    g0: f64,
) -> Result<ConditionReport, TheoryError> {
    check_common(ledger, gamma, g0)?;
    check_positive("Sobolev constant", sobolev.value)?;
    check_positive("Poincare constant", poincare.value)?;
    let n = ledger.dim as f64;
    let l = ledger.log_f_bound;
    let gd = ledger.grad_d;
    let k = sobolev.value;
    let k32 = k.powf(1.5);
    let floor = (12.0 * l * ledger.pi_max * gd * k32)
        .max(12.0 * l * gd * ledger.grad_phi_sup)
        .max(16.0 * (1.0 + n) * (l + 1.0).powi(2) * gd * gd);
    let gradient_cap = (1.0 / (6.0 * k32))
        .min(ratio_or_inf(ledger.pi_min, 24.0 * (l + 1.0) * gd))
        .min(ledger.pi_min / (4.0 * (2.0 * (n.sqrt() * gd + 1.0) * ledger.d_min).sqrt()))
        .min(ledger.pi_min);
    let clauses = vec![
        Clause::new("diffusion_floor", floor, Relation::Le, ledger.d_min),
        Clause::new("pi_time", ledger.pi_time, Relation::Le, 1.0 / 6.0),
        Clause::new("mobility_gradient", ledger.grad_pi, Relation::Le, gradient_cap),
        Clause::new("poincare_gate", ledger.grad_pi, Relation::Le, ledger.pi_min / (2.0 * k)),
        Clause::new(
            "rate",
            -2.0 * (ledger.hess_phi_lower + 1.0) + ledger.d_min / poincare.value,
            Relation::Ge,
            gamma * ledger.pi_max,
        ),
        Clause::new("gronwall_threshold", g0, Relation::Lt, (12.0 * gamma * ledger.pi_min.powi(3)).sqrt()),
    ];
    Ok(ConditionReport::new(Theorem::T4, ledger, gamma, g0, Some(sobolev), poincare, clauses))
}

/// `dg/dt <= -c g + d g^p` with `g(0) = g0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GronwallSpec {
    pub c: f64,
    pub d: f64,
    pub p: f64,
    pub g0: f64,
}

impl GronwallSpec {
    pub fn new(c: f64, d: f64, p: f64, g0: f64) -> Result<Self, TheoryError> {
        let spec = Self { c, d, p, g0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        let bad = |msg: String| Err(TheoryError::BadSpec(msg));
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad(format!("c must be positive, got {}", self.c));
        }
        if !(self.d >= 0.0 && self.d.is_finite()) {
            return bad(format!("d must be nonnegative, got {}", self.d));
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return bad(format!("p must exceed 1, got {}", self.p));
        }
        if !(self.g0 >= 0.0 && self.g0.is_finite()) {
            return bad(format!("g0 must be nonnegative, got {}", self.g0));
        }
        Ok(())
    }

    fn rate(&self, g: f64) -> f64 {
        -self.c * g + self.d * g.powf(self.p)
    }
}

/// `(c / d)^(1 / (p - 1))`, infinite when `d = 0`.
pub fn gronwall_threshold(spec: &GronwallSpec) -> f64 {
    if spec.d == 0.0 {
        f64::INFINITY
    } else {
        (spec.c / spec.d).powf(1.0 / (spec.p - 1.0))
    }
}

/// `(g0^(1-p) - d/c)^(-1/(p-1))`, the factor multiplying `exp(-c t)`.
pub fn gronwall_coefficient(spec: &GronwallSpec) -> Result<f64, TheoryError> {
    spec.validate()?;
    let threshold = gronwall_threshold(spec);
    if !(spec.g0 < threshold) {
        return Err(TheoryError::ThresholdViolation { g0: spec.g0, threshold });
    }
    if spec.g0 == 0.0 {
        return Ok(0.0);
    }
    Ok((spec.g0.powf(1.0 - spec.p) - spec.d / spec.c).powf(-1.0 / (spec.p - 1.0)))
}

/// Closed-form bound `coefficient * exp(-c t)`.
pub fn gronwall_bound(spec: &GronwallSpec, t: f64) -> Result<f64, TheoryError> {
    Ok(gronwall_coefficient(spec)? * (-spec.c * t).exp())
}

/// Samples of the RK4 solution of `g' = -c g + d g^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Closed-form bound at each sample, absent above the threshold.
    pub bounds: Option<Vec<f64>>,
    /// `max(values - bounds)` when bounds exist.
    pub max_excess: Option<f64>,
    /// True when `g' > 0` at `g0`, so the solution grows.
    pub growing: bool,
    /// True when the solution passed [`BLOW_UP_LEVEL`] or became non-finite.
    pub blow_up: bool,
}

impl ComparisonCurve {
    /// Whether the bound dominates every sample within `tol`.
    pub fn dominated(&self, tol: f64) -> bool {
        matches!(self.max_excess, Some(e) if e <= tol)
    }
}

/// Integrates the comparison ODE with classical RK4 up to `t_end`.
pub fn gronwall_comparison_ode(spec: &GronwallSpec, t_end: f64, dt: f64) -> Result<ComparisonCurve, TheoryError> {
    spec.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(TheoryError::BadSpec(format!("dt must be positive, got {dt}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(TheoryError::BadSpec(format!("t_end must be finite and nonnegative, got {t_end}")));
    }
    let steps = (t_end / dt).ceil() as usize;
    let h = if steps == 0 { 0.0 } else { t_end / steps as f64 };
    let mut times = vec![0.0];
    let mut values = vec![spec.g0];
    let mut g = spec.g0;
    let mut blow_up = false;
    for i in 1..=steps {
        let k1 = spec.rate(g);
        let k2 = spec.rate(g + 0.5 * h * k1);
        let k3 = spec.rate(g + 0.5 * h * k2);
        let k4 = spec.rate(g + h * k3);
        g += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !g.is_finite() || g > BLOW_UP_LEVEL {
            blow_up = true;
            break;
        }
        times.push(if i == steps { t_end } else { i as f64 * h });
        values.push(g);
    }
    let (bounds, max_excess) = match gronwall_coefficient(spec) {
        Ok(coefficient) => {
            let b: Vec<f64> = times.iter().map(|t| coefficient * (-spec.c * t).exp()).collect();
            let excess = values.iter().zip(&b).map(|(v, b)| v - b).fold(f64::NEG_INFINITY, f64::max);
            (Some(b), Some(excess))
        }
        Err(_) => (None, None),
    };
    Ok(ComparisonCurve { times, values, bounds, max_excess, growing: spec.rate(spec.g0) > 0.0, blow_up })
}

/// `t -> coefficient * exp(-rate t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedEnvelope {
    pub theorem: Theorem,
    pub coefficient: f64,
    pub rate: f64,
}

impl PredictedEnvelope {
    pub fn at(&self, t: f64) -> f64 {
        self.coefficient * (-self.rate * t).exp()
    }
}

/// Dissipation envelope predicted by each theorem for initial value `g0`.
pub fn predicted_envelope(theorem: Theorem, gamma: f64, g0: f64, pi_min: f64) -> Result<PredictedEnvelope, TheoryError> {
    check_gamma(gamma)?;
    let coefficient = match theorem {
        Theorem::T2 => {
            if !(g0 >= 0.0 && g0.is_finite()) {
                return Err(TheoryError::BadConstant { name: "g0", value: g0 });
            }
            g0
        }
        Theorem::T3 => gronwall_coefficient(&GronwallSpec::new(gamma, 1.0 / 6.0, 3.0, g0)?)?,
        Theorem::T4 => {
            check_positive("pi_min", pi_min)?;
            gronwall_coefficient(&GronwallSpec::new(gamma, 1.0 / (12.0 * pi_min.powi(3)), 3.0, g0)?)?
        }
    };
    Ok(PredictedEnvelope { theorem, coefficient, rate: gamma })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeComparison {
    pub worst_ratio: f64,
    pub worst_t: f64,
    pub pass: bool,
}

/// Largest `dissipation(t) / envelope(t)` over the recorded states.
pub fn compare_to_envelope(series: &TimeSeries, envelope: &PredictedEnvelope) -> EnvelopeComparison {
    let mut worst = (0.0, 0.0);
    for r in series.records() {
        let bound = envelope.at(r.t);
        let ratio = if bound > 0.0 {
            r.dissipation / bound
        } else if r.dissipation <= ZERO_DISSIPATION {
            0.0
        } else {
            f64::INFINITY
        };
        if ratio > worst.0 {
            worst = (ratio, r.t);
        }
    }
    EnvelopeComparison { worst_ratio: worst.0, worst_t: worst.1, pass: worst.0 <= 1.0 + ENVELOPE_SLACK }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientSpecs;
    use crate::diagnostics::DiagnosticsRecord;

    pub(crate) fn ledger() -> ConstantsLedger {
        ConstantsLedger {
            dim: 1,
            init_min: 1.0,
            init_max: 1.0,
            d_min: 1.0,
            pi_min: 1.0,
            pi_max: 1.0,
            pi_time: 0.0,
            grad_pi: 0.0,
            grad_d: 0.0,
            hess_phi_lower: 0.0,
            phi_sup: 0.0,
            grad_phi_sup: 0.0,
            log_f0_sup: 0.0,
            feq_shift: 0.0,
            log_f_bound: 0.0,
            d_max_bound: 1.0,
        }
    }

    #[test]
    fn threshold_examples() {
        let t = |c, d, p| gronwall_threshold(&GronwallSpec::new(c, d, p, 0.0).unwrap());
        assert!((t(1.0, 1.0 / 6.0, 3.0) - 6f64.sqrt()).abs() < 1e-14);
        assert_eq!(t(2.5, 2.5, 4.0), 1.0);
        assert_eq!(t(2.0, 1.0, 2.0), 2.0);
        assert_eq!(t(1.0, 0.0, 3.0), f64::INFINITY);
    }

    #[test]
    fn bound_examples() {
        let spec = GronwallSpec::new(1.0, 1.0 / 6.0, 3.0, 1.0).unwrap();
        let expected = (1.0f64 - 1.0 / 6.0).powf(-0.5);
        assert!((gronwall_bound(&spec, 0.0).unwrap() - expected).abs() < 1e-12);
        assert!((gronwall_bound(&spec, 0.0).unwrap() - 1.095445115).abs() < 1e-9);

        let tiny = GronwallSpec::new(1.0, 1.0 / 6.0, 3.0, 1e-8).unwrap();
        assert!((gronwall_coefficient(&tiny).unwrap() / 1e-8 - 1.0).abs() < 1e-12);

        let at = GronwallSpec::new(1.0, 1.0 / 6.0, 3.0, 6f64.sqrt()).unwrap();
        assert!(matches!(gronwall_bound(&at, 0.0), Err(TheoryError::ThresholdViolation { .. })));
        assert!(GronwallSpec::new(0.0, 1.0, 3.0, 1.0).is_err());
        assert!(GronwallSpec::new(1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn comparison_ode_examples() {
        let spec = GronwallSpec::new(1.0, 1.0 / 6.0, 3.0, 1.0).unwrap();
        let curve = gronwall_comparison_ode(&spec, 5.0, 1e-3).unwrap();
        assert!(curve.dominated(1e-9));
        assert!(!curve.growing && !curve.blow_up);
        for (t, v) in curve.times.iter().zip(&curve.values) {
            assert!(*v <= 1.0955 * (-t).exp());
        }

        let linear = GronwallSpec::new(2.0, 0.0, 3.0, 0.7).unwrap();
        let curve = gronwall_comparison_ode(&linear, 1.0, 1e-3).unwrap();
        for (t, v) in curve.times.iter().zip(&curve.values) {
            assert!((v - 0.7 * (-2.0 * t).exp()).abs() < 1e-12);
        }
        assert!(curve.max_excess.unwrap().abs() < 1e-12);

        let above = GronwallSpec::new(1.0, 1.0 / 6.0, 3.0, 3.0).unwrap();
        let curve = gronwall_comparison_ode(&above, 2.0, 1e-3).unwrap();
        assert!(curve.growing && curve.blow_up);
        assert!(curve.bounds.is_none());
        assert!(curve.values.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn t2_examples() {
        let l = ledger();
        let r = check_condition_t2(&l, ConstantInput::empirical(0.0254), 1.0, 1.0).unwrap();
        assert!((r.clauses[0].lhs - 2.0 / 0.0254).abs() < 1e-12);
        assert!(r.overall && r.is_consistent());

        let l10 = ConstantsLedger { hess_phi_lower: 10.0, ..l.clone() };
        let r = check_condition_t2(&l10, ConstantInput::certified(1.0), 1.0, 1.0).unwrap();
        assert_eq!(r.clauses[0].lhs, -18.0);
        assert!(!r.overall);

        assert_eq!(check_condition_t2(&l, ConstantInput::empirical(1.0), 0.0, 1.0), Err(TheoryError::BadGamma(0.0)));
        let variable = ConstantsLedger { grad_d: 0.5, ..l };
        assert!(matches!(
            check_condition_t2(&variable, ConstantInput::empirical(1.0), 1.0, 1.0),
            Err(TheoryError::WrongRegime { .. })
        ));
    }

    #[test]
    fn t3_examples() {
        let l = ConstantsLedger { d_min: 1.0, ..ledger() };
        let k = ConstantInput::empirical(1.0);
        let r = check_condition_t3(&l, k, ConstantInput::empirical(0.1), 1.0, 1.0).unwrap();
        assert_eq!(r.clauses[0].lhs, 0.0);
        assert!(r.clauses[0].pass);

        let l = ConstantsLedger { log_f_bound: 2.0, grad_d: 1.0, grad_phi_sup: 3.0, ..ledger() };
        let r = check_condition_t3(&l, k, ConstantInput::empirical(0.1), 1.0, 1.0).unwrap();
        assert_eq!(r.clauses[0].lhs, 72.0);
        assert!(!r.clauses[0].pass);
        let l72 = ConstantsLedger { d_min: 72.0, ..l };
        assert!(check_condition_t3(&l72, k, ConstantInput::empirical(0.1), 1.0, 1.0).unwrap().clauses[0].pass);

        let r = check_condition_t3(&ledger(), k, ConstantInput::empirical(0.1), 1.0, 3.0).unwrap();
        let g = r.clause("gronwall_threshold").unwrap();
        assert!((g.rhs - 6f64.sqrt()).abs() < 1e-15);
        assert!(!g.pass);

        let moving = ConstantsLedger { pi_time: 0.1, ..ledger() };
        assert!(matches!(
            check_condition_t3(&moving, k, k, 1.0, 1.0),
            Err(TheoryError::WrongRegime { theorem: Theorem::T3, .. })
        ));
    }

    #[test]
    fn t4_examples() {
        let k = ConstantInput::empirical(1.0);
        let p = ConstantInput::empirical(0.1);
        let r = check_condition_t4(&ledger(), k, p, 1.0, 1.0).unwrap();
        assert_eq!(r.clauses.len(), 6);
        assert_eq!(r.clauses[0].lhs, 0.0);
        assert!(r.clauses.iter().take(4).all(|c| c.pass));
        let g = r.clause("gronwall_threshold").unwrap();
        assert!((g.rhs - 12f64.sqrt()).abs() < 1e-15);

        let fast = ConstantsLedger { pi_time: 0.2, ..ledger() };
        let r = check_condition_t4(&fast, k, p, 1.0, 1.0).unwrap();
        assert!(!r.clause("pi_time").unwrap().pass);
        assert!(!r.overall && r.is_consistent());
    }

    #[test]
    fn diffusion_floor_below_one_is_rejected() {
        let l = ConstantsLedger { d_min: 0.5, ..ledger() };
        let k = ConstantInput::empirical(1.0);
        assert_eq!(check_condition_t4(&l, k, k, 1.0, 0.0), Err(TheoryError::DiffusionFloor(0.5)));
    }

    #[test]
    fn envelope_examples() {
        let e = predicted_envelope(Theorem::T2, 2.0, 0.5, 1.0).unwrap();
        assert_eq!((e.coefficient, e.rate), (0.5, 2.0));
        let e = predicted_envelope(Theorem::T3, 1.0, 1.0, 1.0).unwrap();
        assert!((e.coefficient - (5.0f64 / 6.0).powf(-0.5)).abs() < 1e-14);
        assert!((e.coefficient - 1.0954).abs() < 1e-4);
        let e = predicted_envelope(Theorem::T4, 1.0, 1.0, 1.0).unwrap();
        assert!((e.coefficient - (11.0f64 / 12.0).powf(-0.5)).abs() < 1e-14);
        assert!((e.coefficient - 1.0445).abs() < 1e-4);
        assert!(predicted_envelope(Theorem::T3, 1.0, 3.0, 1.0).is_err());
        assert!(predicted_envelope(Theorem::T2, -1.0, 1.0, 1.0).is_err());
    }

    fn series(points: &[(f64, f64)]) -> TimeSeries {
        let records = points
            .iter()
            .map(|&(t, dissipation)| DiagnosticsRecord {
                t,
                mass: 1.0,
                free_energy: 0.0,
                dissipation,
                f_min: 1.0,
                f_max: 1.0,
                log_f_sup: 0.0,
                u_sup: 0.0,
                envelope_violation: 0.0,
                jensen_margin: 0.0,
            })
            .collect();
        TimeSeries::from_records(CoefficientSpecs::new("1", "0", "1", "1"), records).unwrap()
    }

    #[test]
    fn comparison_examples() {
        let flat = series(&[(0.0, 0.0), (1.0, 0.0)]);
        let env = predicted_envelope(Theorem::T2, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(compare_to_envelope(&flat, &env).worst_ratio, 0.0);

        let pts: Vec<(f64, f64)> = (0..10).map(|i| (0.1 * i as f64, (-3.0 * 0.1 * i as f64).exp())).collect();
        let decaying = series(&pts);
        let slow = predicted_envelope(Theorem::T2, 2.5, 1.0, 1.0).unwrap();
        let cmp = compare_to_envelope(&decaying, &slow);
        assert!(cmp.pass && cmp.worst_ratio <= 1.0);
        let fast = predicted_envelope(Theorem::T2, 4.0, 1.0, 1.0).unwrap();
        let cmp = compare_to_envelope(&decaying, &fast);
        assert!(!cmp.pass && cmp.worst_ratio > 1.0);
    }
}
