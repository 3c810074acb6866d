use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("line {line}: invalid record: {reason}")]
    InvalidRecord { line: u64, reason: String },

    #[error("vehicle {vehicle_id}: frame {frame} does not follow frame {previous}")]
    NonMonotonicFrames { vehicle_id: u32, frame: i64, previous: i64 },

    #[error("vehicle {vehicle_id}: frames jump from {previous} to {frame}")]
    FrameGap { vehicle_id: u32, frame: i64, previous: i64 },

    #[error("vehicle {vehicle_id} at frame {frame}: neighbor {neighbor_id} has no record")]
    DanglingNeighbor { vehicle_id: u32, frame: i64, neighbor_id: u32 },

    #[error("vehicle {vehicle_id} not found in recording {recording_id}")]
    UnknownVehicle { recording_id: u32, vehicle_id: u32 },

    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch { what: String, expected: usize, found: usize },

    #[error("forward cache does not match the sequence or parameters: {0}")]
    StaleCache(String),

    #[error("no examples of class {0}")]
    EmptyClass(&'static str),

    #[error("length mismatch: {left} probabilities vs {right} labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("no recordings found in {}", .0.display())]
    NoRecordings(PathBuf),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(what: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::ShapeMismatch { what: what.into(), expected, found }
    }

    /// True when the error stems from user input (files, configs, data)
    /// rather than a defect in the library.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::ShapeMismatch { .. } | Error::StaleCache(_))
    }
}
