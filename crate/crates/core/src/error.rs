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

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("vocabulary is empty after applying frequency threshold {threshold}")]
    EmptyVocabulary { threshold: usize },

    #[error("document has no explainable tokens")]
    Unexplainable,

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("weighted least squares solve failed (pivot ratio {pivot_ratio:e}, dimension {dim})")]
    SingularSystem { pivot_ratio: f64, dim: usize },

    #[error("matrix is rank deficient: effective rank {rank} of {cols} columns")]
    RankDeficient { rank: usize, cols: usize },

    #[error("kendall tau undefined: one score vector is constant")]
    UndefinedCorrelation,

    #[error(
        "exact shapley needs 2^{len} coalitions; use an estimator for documents longer than {max}"
    )]
    TooManyPlayers { len: usize, max: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
