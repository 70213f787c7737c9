use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot step a collided state (step {step})")]
    SteppedAfterCollision { step: usize },
    #[error("policy returned a non-finite action {value} at step {step}")]
    NonFiniteAction { step: usize, value: f64 },
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("policy failed at step {step}: {message}")]
    Policy { step: usize, message: String },
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("{op}: {message}")]
    InvalidArgument { op: &'static str, message: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

/// Failures reading the self-describing binary formats (checkpoints, episodes).
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad magic bytes: not a {expected} file")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed file: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("horizon mismatch: model has H={expected}, input has {found}")]
    HorizonMismatch { expected: usize, found: usize },
    #[error("{what} dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { what: &'static str, expected: usize, found: usize },
    #[error("reward label {value} outside [-1, 0]")]
    InvalidLabel { value: f64 },
    #[error("no training windows available: {0}")]
    EmptyWindows(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("reward function `{reward}` needs a {expected} goal, got {found}")]
    GoalMismatch { reward: &'static str, expected: &'static str, found: &'static str },
    #[error("horizon mismatch: expected {expected}, found {found}")]
    HorizonMismatch { expected: usize, found: usize },
    #[error("all {0} candidates produced non-finite objectives")]
    AllCandidatesDiscarded(usize),
    #[error("invalid planner configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("horizon must be positive")]
    InvalidHorizon,
    #[error("{what} dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { what: String, expected: usize, found: usize },
    #[error("dataset has no {0}")]
    Missing(&'static str),
    #[error("invalid collection setting: {0}")]
    InvalidConfig(String),
    #[error("manifest disagrees with stored episodes: {0}")]
    ManifestMismatch(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Top-level error used by the experiment drivers and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Other(String),
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Io { .. } | Error::Format(_) => ErrorClass::Io,
            Error::Data(e) => data_class(e),
            Error::Model(e) => model_class(e),
            Error::Plan(e) => plan_class(e),
            Error::Sim(e) => sim_class(e),
            Error::Tensor(_) | Error::Other(_) => ErrorClass::Numeric,
        }
    }
}

fn sim_class(e: &SimError) -> ErrorClass {
    match e {
        SimError::InvalidWorld(_) => ErrorClass::Config,
        _ => ErrorClass::Numeric,
    }
}

fn data_class(e: &DataError) -> ErrorClass {
    match e {
        DataError::Format(_) | DataError::ManifestMismatch(_) | DataError::Missing(_) => ErrorClass::Io,
        DataError::DimMismatch { .. } | DataError::InvalidConfig(_) | DataError::InvalidHorizon => ErrorClass::Config,
        DataError::Sim(e) => sim_class(e),
    }
}

fn model_class(e: &ModelError) -> ErrorClass {
    match e {
        ModelError::Format(_) => ErrorClass::Io,
        ModelError::Data(e) => data_class(e),
        ModelError::DimMismatch { .. } | ModelError::HorizonMismatch { .. } | ModelError::InvalidConfig(_) | ModelError::EmptyWindows(_) => {
            ErrorClass::Config
        }
        ModelError::Tensor(_) | ModelError::InvalidLabel { .. } => ErrorClass::Numeric,
    }
}

fn plan_class(e: &PlanError) -> ErrorClass {
    match e {
        PlanError::HorizonMismatch { .. } | PlanError::InvalidConfig(_) | PlanError::GoalMismatch { .. } => ErrorClass::Config,
        PlanError::Model(e) => model_class(e),
        PlanError::Sim(e) => sim_class(e),
        PlanError::AllCandidatesDiscarded(_) => ErrorClass::Numeric,
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
