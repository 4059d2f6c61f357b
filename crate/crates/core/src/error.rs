use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("s = {s} outside profile domain [{lo}, {hi}]")]
    Domain { s: f64, lo: f64, hi: f64 },

    #[error("no blow-up detected: {0}")]
    NoBlowup(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("fit rejected: {0}")]
    FitRejected(String),

    #[error("coercivity violation: phi_d(q-, q-) = {value:e} below -{slack:e}")]
    Coercivity { value: f64, slack: f64 },

    #[error("modulation failure at s = {s}: {reason}")]
    Modulation { s: f64, reason: String },

    #[error("parameter saturation: |d| = {0} exceeds 0.9999")]
    Saturation(f64),

    #[error("divergence at s = {s}: |w|_H = {norm:e}")]
    Divergence { s: f64, norm: f64 },

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::InvalidArgument(msg.into()))
}

pub(crate) fn numeric<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Numeric(msg.into()))
}
