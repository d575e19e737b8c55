use thiserror::Error;

/// Errors raised by the modelling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition (shapes, supports, ranges).
    #[error("domain error: {0}")]
    Domain(String),

    /// A covariance matrix could not be factorized even at the largest jitter.
    #[error("cholesky factorization failed at jitter {jitter:e}: {context}")]
    Cholesky { jitter: f64, context: String },

    /// The sampler could not make progress.
    #[error("sampler failure: {message}")]
    Sampler {
        message: String,
        /// Step sizes visited during warmup adaptation.
        trace: Vec<f64>,
    },

    /// A data file does not match its schema.
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures of the numerical linear algebra or the sampler.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Cholesky { .. } | Error::Sampler { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
