use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("asymmetric conflict matrix at ({0}, {1})")]
    AsymmetricConflicts(usize, usize),
    #[error("movement {0} conflicts with itself")]
    SelfConflict(usize),
    #[error("conflict matrix is {got}x{got}, expected {expected}x{expected}")]
    ConflictShape { expected: usize, got: usize },
    #[error("unknown approach `{0}`")]
    UnknownApproach(String),
    #[error("unknown movement id {0}")]
    UnknownMovement(usize),
    #[error("approach `{name}`: control zone {control_zone} m must be shorter than approach length {length} m")]
    ControlZoneTooLong {
        name: String,
        length: f64,
        control_zone: f64,
    },
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("invalid demand: {0}")]
    Demand(String),
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action for vehicle {0} which is not awaiting a decision")]
    IneligibleAction(u64),
    #[error("missing action for vehicle {0}")]
    MissingAction(u64),
    #[error("invalid episode config: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("non-finite parameters after update at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("unknown emission class `{0}`")]
    UnknownClass(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("report schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Errors surfaced by experiment orchestration; the variant decides the CLI exit code.
#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("missing checkpoints for rates: {0:?}")]
    MissingCheckpoints(Vec<f64>),
}

impl ExperimentError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.into(),
            source,
        }
    }
}
