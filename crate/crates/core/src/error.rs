use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument fell outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value failed validation. `field` is a dotted path into the config.
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// The requested accuracy is met by the initial divergence alone.
    #[error("target accuracy already satisfied at T=0")]
    AlreadySatisfied,

    /// A metric needs samples from the target but the target has no exact sampler.
    #[error("no exact reference sampler")]
    NoReference,

    /// Quadrature grid does not contain the posterior mass.
    #[error("grid too small: integrand mass at the endpoints is {ratio:e} of the maximum")]
    GridTooSmall { ratio: f64 },

    /// A sampler produced a non-finite coordinate.
    #[error("sampler `{sampler}` diverged at step {step}")]
    Diverged { sampler: String, step: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by the user's configuration rather than by a run.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::NoReference)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
