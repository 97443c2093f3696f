use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error(
        "overlapping intervention windows: node {} on [{first_start}, {first_end}] clashes with node {} on [{second_start}, {second_end}]", .first_node + 1, .second_node + 1
    )]
    OverlappingWindows {
        first_node: usize,
        first_start: usize,
        first_end: usize,
        second_node: usize,
        second_start: usize,
        second_end: usize,
    },

    #[error("intervention window [{start}, {end}] on node {} lies outside the admissible range [{min}, {max}]", .node + 1)]
    WindowOutOfRange {
        node: usize,
        start: usize,
        end: usize,
        min: usize,
        max: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("node {} out of range for a model with {dim} nodes", .node + 1)]
    NodeOutOfRange { node: usize, dim: usize },

    #[error("time {t} lies outside the mechanism window [{start}, {end}]")]
    TimeOutsideWindow { t: usize, start: usize, end: usize },

    #[error("residual of node {} at t={t} is unrecoverable (destroyed by the factual mechanism)", .node + 1)]
    UnrecoverableResidual { node: usize, t: usize },

    #[error("hypothetical mechanism on node {} at t={t} changes the noise scale; use abduction instead of delta propagation", .node + 1)]
    RequiresNoise { node: usize, t: usize },

    #[error("horizon k={k} exceeds the computed maximum {max}")]
    HorizonOutOfRange { k: usize, max: usize },

    #[error("{}: {message}", .path.display())]
    Parse { path: PathBuf, message: String },

    #[error("{}, line {line}: {message}", .path.display())]
    ParseLine {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
