use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{x} is outside the domain [0, {cap}]")]
    Domain { x: f64, cap: f64 },
    #[error("index out of range: {0}")]
    Index(String),
    #[error("degenerate dataset: {0}")]
    Degenerate(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("sigma_n requires positive penalization")]
    ZeroPenalty,
    #[error("feature maps do not match: {0}")]
    FeatureMismatch(String),
    #[error("training diverged at round {round}, step {step}: {msg}")]
    Diverged { round: usize, step: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
