use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion error at row {row}: {msg}")]
    Ingest { row: usize, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("rating optimisation failed: {0}")]
    Rating(String),
    #[error("explanation error: {0}")]
    Explain(String),
    #[error("missing artifact {0}: run the upstream stage first")]
    MissingArtifact(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
