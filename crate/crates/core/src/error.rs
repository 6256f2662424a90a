use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("missing dataset file {path}")]
    MissingDataset { path: PathBuf },

    /// A zero-norm vector was fed to the cosine kernel.
    #[error("degenerate embedding: zero-norm vector in {context}")]
    DegenerateEmbedding { context: &'static str },

    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("class {0} has no registered prototype")]
    UnknownClass(u32),

    #[error("class {0} is already registered")]
    DuplicateClass(u32),

    #[error("prototype store is empty")]
    EmptyStore,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("aggregation error: {0}")]
    Aggregate(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("plot error: {0}")]
    Plot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
