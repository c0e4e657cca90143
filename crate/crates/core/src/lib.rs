//! Multi-position intrinsic calibration of a triaxial accelerometer and
//! gyroscope, with static-phase detection, sliding XOR erasure coding for
//! lossy links, a synthetic data generator and an orientation-count study.
//!
//! The usual entry point is [`calibrate`], which takes a [`SampleStream`]
//! recorded while the device rests in a sequence of distinct orientations.

pub mod calibration;
pub mod detector;
pub mod ec;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod stream;
pub mod synth;

pub use calibration::{calibrate, CalibrationResult, IntegrationMethod, SolverConfig};
pub use detector::{DetectorConfig, StaticSegment};
pub use error::{Error, Result, Stage};
pub use model::{
    correct_accel, correct_gyro, uncorrect_accel, uncorrect_gyro, AccelParams, CalibrationParams,
    GyroParams, Quaternion, TriSample,
};
pub use stream::{AccelSource, Record, SampleStream, StreamMetadata};
