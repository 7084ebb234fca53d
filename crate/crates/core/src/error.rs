use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
///
/// Variants are grouped by the kind of failure rather than by module so the
/// command-line front end can map them onto stable exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid user-supplied configuration (bounds, sector counts, sizes).
    #[error("configuration error: {0}")]
    Config(String),

    /// A function was called outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The load-coupling fixed point did not settle.
    #[error("fixed point did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed text input; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Well-formed input with the wrong shape (header, column count, version).
    #[error("schema error: {0}")]
    Schema(String),

    /// Two artifacts that cannot be used together (e.g. checkpoint vs scenario).
    #[error("incompatible inputs: {0}")]
    Incompatible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
