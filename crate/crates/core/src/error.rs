use thiserror::Error;

/// Errors raised by the numerical operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coefficient: {field} = {value} at age {age}, x-index {x_index}")]
    InvalidCoefficient {
        field: &'static str,
        value: f64,
        age: f64,
        x_index: usize,
    },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("evolution operators only go forward in age: requested ({to}, {from}) with {from} > {to}")]
    Causality { to: usize, from: usize },

    #[error(
        "Crank-Nicolson step on age interval {interval} is singular or non-finite \
         with {substeps} substeps; increase the substep count"
    )]
    StepConstruction { interval: usize, substeps: usize },

    #[error("t_final = {t_final} is not a multiple of the age step {da}")]
    Alignment { t_final: f64, da: f64 },

    #[error("{0}")]
    Domain(String),

    #[error("lambda = {lambda} is at or near the spectrum (condition estimate {condition:e})")]
    NearSpectrum { lambda: f64, condition: f64 },

    #[error("resolvent output failed certification: residual {residual:e} exceeds {tolerance:e}")]
    Uncertified { residual: f64, tolerance: f64 },

    #[error(
        "power iteration could not isolate a positive fixed vector of Q; \
         top eigenvalues {first} and {second}"
    )]
    DegeneratePeripheral { first: String, second: String },

    #[error(
        "dense assembly of dimension {dim} exceeds the limit {limit}; \
         use the characteristic-function path"
    )]
    SizeLimit { dim: usize, limit: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
