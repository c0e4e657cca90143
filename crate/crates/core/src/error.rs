use std::fmt;

use thiserror::Error;

/// Pipeline stage an error originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Detect,
    Accel,
    GyroBias,
    Gyro,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Detect => "static detection",
            Stage::Accel => "accelerometer calibration",
            Stage::GyroBias => "gyroscope bias estimation",
            Stage::Gyro => "gyroscope calibration",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no usable k: best threshold factor gave {best_count} segments, {required} required")]
    NoUsableThreshold { best_count: usize, required: usize },

    #[error("underdetermined ({stage}): {segments} static segments, at least 9 distinct orientations required")]
    Underdetermined { stage: Stage, segments: usize },

    #[error("diverged ({stage}): {reason}")]
    Diverged { stage: Stage, reason: String },

    #[error("missing motion data: gyro samples lost between slots {from} and {to}")]
    MissingMotionData { from: usize, to: usize },

    #[error("inconsistent parity at packet {packet}")]
    InconsistentParity { packet: u64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed input at line {line}: {message}")]
    Malformed { line: u64, message: String },

    #[error("non-monotonic packet index at line {line}: {index} does not follow {previous}")]
    NonMonotonicIndex { line: u64, index: u64, previous: u64 },

    #[error("unit header mismatch: expected `{expected}`, found `{found}`")]
    UnitHeader { expected: String, found: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable identifier for the error class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InsufficientData(_) => "insufficient_data",
            Error::NoUsableThreshold { .. } => "no_usable_k",
            Error::Underdetermined { .. } => "underdetermined",
            Error::Diverged { .. } => "diverged",
            Error::MissingMotionData { .. } => "missing_motion_data",
            Error::InconsistentParity { .. } => "inconsistent_parity",
            Error::InvalidParams(_) => "invalid_params",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Malformed { .. } => "malformed_input",
            Error::NonMonotonicIndex { .. } => "non_monotonic_index",
            Error::UnitHeader { .. } => "unit_header",
            Error::EmptyInput(_) => "empty_input",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
