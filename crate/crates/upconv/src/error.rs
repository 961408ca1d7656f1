//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain an operation is defined on
    /// (e.g. a wavelength outside the Sellmeier validity window).
    #[error("{what} = {value} outside [{min}, {max}] {unit}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
        unit: &'static str,
    },

    /// Invalid configuration or malformed input.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A bracketed root search found no sign change.
    #[error("no root: {0}")]
    NoRoot(String),

    /// The solver cannot meet its accuracy contract with the given grid.
    #[error("solver accuracy: {0}")]
    SolverAccuracy(String),

    /// A least-squares fit failed to converge.
    #[error("fit failed: {message} (residual {residual:.3e} after {iterations} iterations)")]
    Fit {
        message: String,
        residual: f64,
        iterations: usize,
    },

    /// The measurement operates outside the weak-signal regime the
    /// estimator is exact in.
    #[error("regime violation: {0}")]
    Regime(String),

    /// The requested oracle does not exist for this source model.
    #[error("unsupported oracle: {0}")]
    UnsupportedOracle(String),

    /// Malformed data file (JSON or CSV).
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Process exit code used by the CLI: 2 configuration, 3
    /// numerical/fit, 4 regime violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::OutOfRange { .. } | Error::Config(_) | Error::Parse(_) => 2,
            Error::NoRoot(_) | Error::SolverAccuracy(_) | Error::Fit { .. } => 3,
            Error::Regime(_) => 4,
            Error::UnsupportedOracle(_) => 2,
        }
    }

    /// Stable machine-readable tag for the error JSON the CLI emits.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::OutOfRange { .. } => "out_of_range",
            Error::Config(_) => "config",
            Error::NoRoot(_) => "no_root",
            Error::SolverAccuracy(_) => "solver_accuracy",
            Error::Fit { .. } => "fit",
            Error::Regime(_) => "regime_violation",
            Error::UnsupportedOracle(_) => "unsupported_oracle",
            Error::Parse(_) => "parse",
        }
    }
}
