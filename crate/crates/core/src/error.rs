use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A referenced entity (run, station, path, passenger) does not exist.
    #[error("lookup error: {0}")]
    Lookup(String),

    /// Model or run configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates a documented schema or invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("infeasible constraints: {0}")]
    Constraint(String),

    #[error("did not converge after {iterations} iterations: {message}")]
    Convergence { iterations: usize, message: String },

    /// Mixture fitting stopped at the iteration limit; carries the best iterate.
    #[error("mixture fit did not converge after {} iterations", .0.iterations)]
    MixtureConvergence(Box<crate::leftbehind::MixtureFit>),

    #[error("initialization error: {0}")]
    Initialization(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
