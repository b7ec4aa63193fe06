use std::path::PathBuf;

use fedsurrogate_core::{AttackError, DataError, DefenseError, MetricError, ModelError, ParamError};

/// Failures reading IDX files. Each malformation has its own variant.
#[derive(Debug, thiserror::Error)]
pub enum IdxError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: truncated, expected {expected} bytes but found {actual}")]
    Truncated { path: PathBuf, expected: usize, actual: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} is not below the class count {classes}")]
    LabelOutOfRange { label: usize, classes: usize },
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("cannot set `{name}` to `{value}`")]
    InvalidValue { name: String, value: String },
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("serialisation: {0}")]
    Serialize(String),
}
