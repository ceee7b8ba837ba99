use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    /// The state stopped being finite during time integration.
    #[error("blow-up or instability at t = {time}: {detail}")]
    BlowUp { time: f64, detail: String },

    #[error("propagator paths disagree by {gap:e} at |xi| = {xi_norm}")]
    PropagatorMismatch { gap: f64, xi_norm: f64 },

    #[error("outside contraction regime: {0}")]
    NotContracting(String),

    #[error("series label mismatch: {0}")]
    LabelMismatch(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name: name.into(), reason: reason.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
