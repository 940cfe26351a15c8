use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not Hermitian (max |H - H^dag| = {defect:e})")]
    NotHermitian { defect: f64 },

    #[error("integration failure: {0}")]
    Integration(String),

    #[error("density matrix lost positivity at t = {time}: min eigenvalue {min_eigenvalue:e}")]
    PositivityViolation { time: f64, min_eigenvalue: f64 },

    #[error("density matrix trace drifted at t = {time}: |Tr rho - 1| = {deviation:e}")]
    TraceViolation { time: f64, deviation: f64 },

    #[error("periodic steady state not reached after {periods} drive periods (last relative change {change:e})")]
    SteadyStateNotConverged { periods: u64, change: f64 },

    #[error("correlation denominator underflow: <X^dag X> = {value:e}")]
    DenominatorUnderflow { value: f64 },

    #[error("no interior maximum of the resonance objective in [{lo}, {hi}]")]
    NoResonance { lo: f64, hi: f64 },

    #[error("no clear spectral peak in the population signal (quality {quality:.3})")]
    NoSpectralPeak { quality: f64 },

    #[error("configuration error for `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
