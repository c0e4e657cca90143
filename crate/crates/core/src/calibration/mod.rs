//! Two-stage intrinsic calibration.
//!
//! The accelerometer stage fits `θ_acc` so that every static segment's mean
//! acceleration has magnitude `g`:
//!
//! ```text
//! L(θ_acc) = Σ_k (g² − ‖correct_accel(ā_k, θ_acc)‖²)²
//! ```
//!
//! The gyroscope stage then fits `θ_gyro` so that integrating the calibrated
//! rates between consecutive segments carries the gravity direction of one
//! segment onto the next:
//!
//! ```text
//! L(θ_gyro) = Σ_k ‖u_k − R(q_k)ᵀ · u_{k−1}‖²
//! ```
//!
//! with `u_k` the unit calibrated gravity direction of segment `k` and `q_k`
//! the relative orientation integrated from the end of segment `k−1` to the
//! start of segment `k`. The gyro bias is not optimized; it is the mean raw
//! rate over the initial rest phase.

pub mod integrate;
pub mod lm;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::detector::{select_threshold, DetectorConfig, StaticSegment, ThresholdSelection};
use crate::error::{Error, Result, Stage};
use crate::model::{
    correct_accel, correct_gyro, AccelParams, CalibrationParams, GyroParams, TriSample,
    STANDARD_GRAVITY,
};
use crate::stream::SampleStream;

pub use integrate::{integrate_orientation, integrate_rates, IntegrationMethod};
pub use lm::{LmFailure, LmReport, LmSettings, Termination};

/// Fewest distinct orientations for a well-posed problem.
pub const MIN_ORIENTATIONS: usize = 9;

/// Shortest initial rest phase accepted for gyro bias estimation, seconds.
pub const MIN_BIAS_DURATION: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub parameter_tolerance: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// m/s².
    pub gravity_magnitude: f64,
    pub integration_method: IntegrationMethod,
    /// Datasheet scale used as the accelerometer starting point.
    pub accel_sensitivity: f64,
    pub gyro_sensitivity: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let lm = LmSettings::default();
        Self {
            max_iterations: lm.max_iterations,
            gradient_tolerance: lm.gradient_tolerance,
            parameter_tolerance: lm.parameter_tolerance,
            initial_damping: lm.initial_damping,
            damping_up: lm.damping_up,
            damping_down: lm.damping_down,
            gravity_magnitude: STANDARD_GRAVITY,
            integration_method: IntegrationMethod::Rk4,
            accel_sensitivity: 1.0,
            gyro_sensitivity: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gradient_tolerance", self.gradient_tolerance),
            ("parameter_tolerance", self.parameter_tolerance),
            ("initial_damping", self.initial_damping),
            ("gravity_magnitude", self.gravity_magnitude),
            ("accel_sensitivity", self.accel_sensitivity),
            ("gyro_sensitivity", self.gyro_sensitivity),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.damping_up > 1.0 && self.damping_down > 0.0 && self.damping_down < 1.0) {
            return Err(Error::InvalidConfig(
                "damping factors need up > 1 and 0 < down < 1".into(),
            ));
        }
        Ok(())
    }

    pub fn lm_settings(&self) -> LmSettings {
        LmSettings {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            parameter_tolerance: self.parameter_tolerance,
            initial_damping: self.initial_damping,
            damping_up: self.damping_up,
            damping_down: self.damping_down,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageConvergence {
    pub accel: bool,
    pub gyro: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: CalibrationParams,
    pub accel_residual: f64,
    pub gyro_residual: f64,
    pub segments_used: usize,
    pub k_selected: u32,
    pub baseline_variance: f64,
    pub converged: StageConvergence,
    pub segments: Vec<StaticSegment>,
}

#[derive(Debug, Clone)]
pub struct StageOutcome<P> {
    pub params: P,
    pub residual: f64,
    pub report: LmReport,
}

fn diverged(stage: Stage, failure: LmFailure) -> Error {
    Error::Diverged {
        stage,
        reason: failure.to_string(),
    }
}

/// Per-segment residuals `g² − ‖correct_accel(ā_k)‖²`.
pub fn accel_residuals(means: &[TriSample], p: &AccelParams, gravity: f64) -> DVector<f64> {
    let g2 = gravity * gravity;
    DVector::from_iterator(
        means.len(),
        means.iter().map(|a| g2 - correct_accel(a, p).norm_squared()),
    )
}

pub fn calibrate_accel(
    segments: &[StaticSegment],
    init: &AccelParams,
    cfg: &SolverConfig,
) -> Result<StageOutcome<AccelParams>> {
    if segments.len() < MIN_ORIENTATIONS {
        return Err(Error::Underdetermined {
            stage: Stage::Accel,
            segments: segments.len(),
        });
    }
    let means: Vec<TriSample> = segments.iter().map(|s| s.mean_accel).collect();
    let g = cfg.gravity_magnitude;
    let f = |x: &DVector<f64>| accel_residuals(&means, &AccelParams::from_slice(x.as_slice()), g);
    let report = lm::minimize(
        f,
        DVector::from_row_slice(&init.to_vector()),
        &cfg.lm_settings(),
    )
    .map_err(|e| diverged(Stage::Accel, e))?;
    let params = AccelParams::from_slice(report.params.as_slice());
    params.validate().map_err(|e| Error::Diverged {
        stage: Stage::Accel,
        reason: e.to_string(),
    })?;
    Ok(StageOutcome {
        params,
        residual: report.cost,
        report,
    })
}

/// Mean raw gyro rate over a rest segment.
pub fn estimate_gyro_bias(stream: &SampleStream, init_segment: &StaticSegment) -> Result<TriSample> {
    if init_segment.duration < MIN_BIAS_DURATION {
        return Err(Error::InsufficientData(format!(
            "initial rest segment lasts {:.2} s, gyro bias needs {MIN_BIAS_DURATION} s",
            init_segment.duration
        )));
    }
    let slots = stream.gyro_slots();
    let end = init_segment.end.min(slots.len());
    let (sum, n) = slots[init_segment.start.min(end)..end]
        .iter()
        .flatten()
        .fold((Vector3::zeros(), 0usize), |(s, n), g| (s + g, n + 1));
    if n == 0 {
        return Err(Error::InsufficientData(
            "no gyro samples in the initial rest segment".into(),
        ));
    }
    Ok(sum / n as f64)
}

/// Raw gyro samples and gravity directions around one between-segment motion.
#[derive(Debug, Clone)]
pub struct MotionWindow {
    pub from_dir: TriSample,
    pub to_dir: TriSample,
    pub gyro: Vec<TriSample>,
}

/// Collects the motion windows between consecutive segments. Every slot from
/// the last sample of segment `k−1` to the first sample of segment `k` must
/// carry gyro data.
pub fn motion_windows(
    stream: &SampleStream,
    segments: &[StaticSegment],
    accel: &AccelParams,
) -> Result<Vec<MotionWindow>> {
    let slots = stream.gyro_slots();
    let dirs: Vec<TriSample> = segments
        .iter()
        .map(|s| correct_accel(&s.mean_accel, accel).normalize())
        .collect();
    segments
        .windows(2)
        .zip(dirs.windows(2))
        .map(|(pair, d)| {
            let from = pair[0].end - 1;
            let to = pair[1].start;
            let gyro = slots
                .get(from..=to)
                .and_then(|w| w.iter().copied().collect::<Option<Vec<_>>>())
                .ok_or(Error::MissingMotionData { from, to })?;
            Ok(MotionWindow {
                from_dir: d[0],
                to_dir: d[1],
                gyro,
            })
        })
        .collect()
}

/// Stacked residuals `u_k − R(q_k)ᵀ u_{k−1}` over all motion windows.
pub fn gyro_residuals(
    windows: &[MotionWindow],
    p: &GyroParams,
    dt: f64,
    method: IntegrationMethod,
) -> DVector<f64> {
    let mut out = DVector::zeros(3 * windows.len());
    for (i, w) in windows.iter().enumerate() {
        let rates: Vec<TriSample> = w.gyro.iter().map(|g| correct_gyro(g, p)).collect();
        let q = integrate_rates(&rates, dt, method);
        let predicted = q.conjugate().rotate(&w.from_dir);
        out.fixed_rows_mut::<3>(3 * i)
            .copy_from(&(w.to_dir - predicted));
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn calibrate_gyro(
    stream: &SampleStream,
    segments: &[StaticSegment],
    accel_params: &AccelParams,
    gyro_bias: &TriSample,
    init: &GyroParams,
    cfg: &SolverConfig,
) -> Result<StageOutcome<GyroParams>> {
    if segments.len() < MIN_ORIENTATIONS {
        return Err(Error::Underdetermined {
            stage: Stage::Gyro,
            segments: segments.len(),
        });
    }
    let windows = motion_windows(stream, segments, accel_params)?;
    let bias = [gyro_bias.x, gyro_bias.y, gyro_bias.z];
    let dt = stream.dt();
    let method = cfg.integration_method;
    let f = |x: &DVector<f64>| {
        gyro_residuals(&windows, &GyroParams::from_slice(x.as_slice(), bias), dt, method)
    };
    let report = lm::minimize(
        f,
        DVector::from_row_slice(&init.to_vector()),
        &cfg.lm_settings(),
    )
    .map_err(|e| diverged(Stage::Gyro, e))?;
    let params = GyroParams::from_slice(report.params.as_slice(), bias);
    params.validate().map_err(|e| Error::Diverged {
        stage: Stage::Gyro,
        reason: e.to_string(),
    })?;
    Ok(StageOutcome {
        params,
        residual: report.cost,
        report,
    })
}

/// Threshold selection with the accelerometer cost as tie-break.
pub fn detect_segments(
    stream: &SampleStream,
    detector: &DetectorConfig,
    solver: &SolverConfig,
) -> Result<ThresholdSelection> {
    detector.validate()?;
    solver.validate()?;
    let accel_init = AccelParams::nominal(solver.accel_sensitivity);
    select_threshold(stream, detector, |segs| {
        calibrate_accel(segs, &accel_init, solver).map(|o| o.residual)
    })
    .map_err(|e| match e {
        Error::NoUsableThreshold { best_count, .. } if best_count < MIN_ORIENTATIONS => {
            Error::Underdetermined {
                stage: Stage::Detect,
                segments: best_count,
            }
        }
        other => other,
    })
}

/// Full pipeline: detect, select `k`, accelerometer, gyro bias, gyroscope.
pub fn calibrate(
    stream: &SampleStream,
    detector: &DetectorConfig,
    solver: &SolverConfig,
) -> Result<CalibrationResult> {
    let selection = detect_segments(stream, detector, solver)?;
    let accel_init = AccelParams::nominal(solver.accel_sensitivity);
    let segments = selection.segments;

    let accel = calibrate_accel(&segments, &accel_init, solver)?;
    let bias = estimate_gyro_bias(stream, &segments[0])?;
    let gyro = calibrate_gyro(
        stream,
        &segments,
        &accel.params,
        &bias,
        &GyroParams::nominal(solver.gyro_sensitivity),
        solver,
    )?;

    Ok(CalibrationResult {
        params: CalibrationParams {
            accel: accel.params,
            gyro: gyro.params,
        },
        accel_residual: accel.residual,
        gyro_residual: gyro.residual,
        segments_used: segments.len(),
        k_selected: selection.k,
        baseline_variance: selection.baseline,
        converged: StageConvergence {
            accel: true,
            gyro: true,
        },
        segments,
    })
}
