use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("oracle did not converge: {what} (estimated error {estimate:.3e}, tolerance {tolerance:.3e})")]
    OracleUnconverged {
        what: String,
        estimate: f64,
        tolerance: f64,
    },

    #[error("species mismatch: {0}")]
    SpeciesMismatch(String),

    #[error("inconsistent inputs: {0}")]
    Consistency(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("state identification failed: {0}")]
    IdentificationFailed(String),

    #[error("spectral lines not resolvable: {0}")]
    Resolution(String),

    #[error("no commensurable readout time: {0}")]
    Commensurability(String),

    #[error("propagation step underflow at t = {time:.6} ps (dt = {dt:.3e} ps)")]
    StepUnderflow { time: f64, dt: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing artifact {path}: run `{stage}` first")]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::ParameterDomain(msg.into())
    }

    /// Wraps `self` with the pipeline stage it surfaced from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, looking through stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}
