use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mode index {mode} out of range for {modes} modes")]
    InvalidMode { mode: usize, modes: usize },

    #[error("mode count mismatch: {left} vs {right}")]
    ModeMismatch { left: usize, right: usize },

    #[error("beam splitter needs two distinct modes, got ({0}, {0})")]
    ModeCollision(usize),

    #[error("cutoff {cutoff} too small: {reason}")]
    CutoffTooSmall { cutoff: usize, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("polynomial has no nonzero coefficient")]
    AllZero,

    #[error("root finder did not converge after {iterations} iterations (worst residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("factor plan does not reproduce its target (residual {0:e})")]
    RoundtripResidual(f64),

    #[error("closed form requires nonzero amplitude: {0}")]
    ZeroAmplitude(&'static str),

    #[error("no samples supplied")]
    EmptySamples,

    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of a numerical routine on otherwise valid input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonConvergence { .. } | Error::RoundtripResidual(_))
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
