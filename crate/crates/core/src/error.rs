use alloc::string::String;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("invalid layer schema: {0}")]
    InvalidSchema(String),
    #[error("parameter vectors use different schemas")]
    SchemaMismatch,
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite or negative entry at index {index}")]
    NonFinite { index: usize },
    #[error("invalid distance matrix: {0}")]
    InvalidMatrix(String),
    #[error("need at least 2 vectors, got {0}")]
    TooFewVectors(usize),
    #[error("client {0} has no samples")]
    EmptyClient(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("cannot split {samples} samples across {clients} clients")]
    Infeasible { samples: usize, clients: usize },
    #[error("no partition without empty clients after {0} attempts")]
    PartitionExhausted(usize),
    #[error("invalid trigger: {0}")]
    InvalidTrigger(String),
    #[error("fragment index {index} out of range for {fragments} fragments")]
    FragmentOutOfRange { index: usize, fragments: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("architecture needs at least 3 positive layer sizes")]
    InvalidArchitecture,
    #[error("feature dimension {actual} does not match input size {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty batch or dataset")]
    Empty,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    InvalidConfig(String),
    #[error("k = {k} exceeds the {layers} available layers")]
    TooManyLayers { k: usize, layers: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DefenseError {
    #[error("need at least {needed} clients, got {got}")]
    TooFewClients { needed: usize, got: usize },
    #[error("invalid defense configuration: {0}")]
    InvalidConfig(String),
    #[error("no trusted client available as a donor")]
    NoDonor,
    #[error("client {0} has no aggregation role")]
    MissingRole(usize),
    #[error("sample counts sum to zero")]
    ZeroSamples,
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}
