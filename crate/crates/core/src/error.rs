use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates a model invariant. `path` names the offending key.
    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("failed to parse config: {0}")]
    Parse(String),

    /// Survival function fell below the numerical floor; the cohort should be
    /// treated as fully recovered.
    #[error("survival F^c({age}) = {survival:e} is below the floor {floor:e}")]
    SurvivalUnderflow { age: f64, survival: f64, floor: f64 },

    #[error("fixed-point iteration did not converge at step {step} (residual {residual:e})")]
    FixedPoint { step: usize, residual: f64 },

    #[error("patch {patch} population B = {value:e} fell below {floor:e} at step {step}")]
    PopulationFloor {
        step: usize,
        patch: usize,
        value: f64,
        floor: f64,
    },

    #[error("invalid argument `{name}`: {message}")]
    InvalidArgument { name: &'static str, message: String },

    #[error("conservation violated at t = {t}: total {total} != n = {n}")]
    Conservation { t: f64, total: u64, n: u64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("schema mismatch: {0}")]
    Schema(String),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn invalid(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
