use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("failed to parse config: {0}")]
    ConfigParse(String),

    #[error("invalid value for `{key}`: {reason}")]
    Validation { key: String, reason: String },

    #[error("degenerate coefficient: {0}")]
    DegenerateCoefficient(&'static str),

    #[error("outside perturbative regime: {0}")]
    Regime(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("in-plane strain anisotropy u_xx - u_yy is zero; spin-flip rate is singular")]
    SingularAnisotropy,

    #[error("steady state is not unique (stationarity system is singular)")]
    NonUniqueSteadyState,

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("fit failed: {0}")]
    Fit(String),
}

impl Error {
    pub(crate) fn validation(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of a numerical procedure (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonUniqueSteadyState | Error::Integration(_) | Error::Fit(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
