use thiserror::Error;

use crate::coefficients::CoefficientError;

/// Errors from pointwise evaluation of density-dependent quantities.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("density is not strictly positive at cell {cell} (value {value}); log f is undefined")]
    NonPositiveDensity { cell: usize, value: f64 },
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
}

/// Fails unless every value of `f` is finite and strictly positive.
pub(crate) fn check_density(values: &[f64]) -> Result<(), FieldError> {
    match values.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        Some(cell) => Err(FieldError::NonPositiveDensity { cell, value: values[cell] }),
        None => Ok(()),
    }
}
