//! Orientation-count study.
//!
//! Each sequence is calibrated at full length, the element-wise mean of those
//! runs becomes the reference, and every sequence is then cut right after its
//! `n`-th static segment and recalibrated. Errors are mean absolute
//! differences to the reference per coefficient subset.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, CalibrationResult, SolverConfig};
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::model::{AccelParams, CalibrationParams, GyroParams, MS2_PER_MG};
use crate::stream::SampleStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    AccelBias,
    AccelScale,
    AccelMisalignment,
    GyroScale,
    GyroMisalignment,
}

impl Subset {
    pub const ALL: [Subset; 5] = [
        Subset::AccelBias,
        Subset::AccelScale,
        Subset::AccelMisalignment,
        Subset::GyroScale,
        Subset::GyroMisalignment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subset::AccelBias => "accel_bias",
            Subset::AccelScale => "accel_scale",
            Subset::AccelMisalignment => "accel_misalignment",
            Subset::GyroScale => "gyro_scale",
            Subset::GyroMisalignment => "gyro_misalignment",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Subset::AccelBias => "mg",
            Subset::AccelScale | Subset::GyroScale => "%",
            Subset::AccelMisalignment | Subset::GyroMisalignment => "deg",
        }
    }
}

/// Mean absolute differences per subset, in reporting units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetErrors {
    pub accel_bias: f64,
    pub accel_scale: f64,
    pub accel_misalignment: f64,
    pub gyro_scale: f64,
    pub gyro_misalignment: f64,
}

impl SubsetErrors {
    pub fn get(&self, s: Subset) -> f64 {
        match s {
            Subset::AccelBias => self.accel_bias,
            Subset::AccelScale => self.accel_scale,
            Subset::AccelMisalignment => self.accel_misalignment,
            Subset::GyroScale => self.gyro_scale,
            Subset::GyroMisalignment => self.gyro_misalignment,
        }
    }

    fn from_fn(f: impl Fn(Subset) -> f64) -> Self {
        Self {
            accel_bias: f(Subset::AccelBias),
            accel_scale: f(Subset::AccelScale),
            accel_misalignment: f(Subset::AccelMisalignment),
            gyro_scale: f(Subset::GyroScale),
            gyro_misalignment: f(Subset::GyroMisalignment),
        }
    }
}

fn mean_abs(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).sum::<f64>() / a.len() as f64
}

pub fn subset_errors(p: &CalibrationParams, reference: &CalibrationParams) -> SubsetErrors {
    let pct = |x: f64, r: f64| 100.0 * (x - r).abs() / r;
    let deg = |x: f64, r: f64| (x - r).abs().to_degrees();
    SubsetErrors {
        accel_bias: mean_abs(&p.accel.bias, &reference.accel.bias, |x, r| (x - r).abs() / MS2_PER_MG),
        accel_scale: mean_abs(&p.accel.scale, &reference.accel.scale, pct),
        accel_misalignment: mean_abs(&p.accel.misalignment, &reference.accel.misalignment, deg),
        gyro_scale: mean_abs(&p.gyro.scale, &reference.gyro.scale, pct),
        gyro_misalignment: mean_abs(&p.gyro.misalignment, &reference.gyro.misalignment, deg),
    }
}

/// Element-wise mean of the run parameters, gyro bias included.
pub fn reference_params(runs: &[CalibrationResult]) -> Result<CalibrationParams> {
    mean_params(runs.iter().map(|r| &r.params))
}

pub fn mean_params<'a>(params: impl IntoIterator<Item = &'a CalibrationParams>) -> Result<CalibrationParams> {
    let mut sum = [0.0; 21];
    let mut n = 0usize;
    for p in params {
        let flat = p.optimized().into_iter().chain(p.gyro.bias);
        for (s, v) in sum.iter_mut().zip(flat) {
            *s += v;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput("no calibration runs to average".into()));
    }
    let m: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    Ok(CalibrationParams {
        accel: AccelParams::from_slice(&m[..9]),
        gyro: GyroParams::from_slice(&m[9..18], [m[18], m[19], m[20]]),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub detector: DetectorConfig,
    pub solver: SolverConfig,
}

/// One sequence at one orientation count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub n_eff: usize,
    pub run_id: usize,
    /// Samples kept after truncation.
    pub slots: usize,
    pub errors: Option<SubsetErrors>,
    /// Error code when the cell is missing.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMean {
    pub n_eff: usize,
    pub runs: usize,
    pub errors: Option<SubsetErrors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub reference: CalibrationParams,
    pub full_runs: Vec<CalibrationResult>,
    pub n_values: Vec<usize>,
    /// Ordered by `n_eff`, then `run_id`.
    pub cells: Vec<EvalCell>,
    pub means: Vec<EvalMean>,
}

impl EvalReport {
    pub fn cell(&self, n_eff: usize, run_id: usize) -> Option<&EvalCell> {
        self.cells.iter().find(|c| c.n_eff == n_eff && c.run_id == run_id)
    }

    pub fn mean(&self, n_eff: usize) -> Option<&SubsetErrors> {
        self.means.iter().find(|m| m.n_eff == n_eff)?.errors.as_ref()
    }
}

/// Number of samples to keep so the `n`-th segment is still detected in full.
pub fn truncation_point(full: &CalibrationResult, n: usize, stream: &SampleStream, detector: &DetectorConfig) -> Option<usize> {
    let seg = full.segments.get(n.checked_sub(1)?)?;
    let half = (detector.window_halfwidth * stream.sample_rate()).round() as usize;
    Some((seg.end + 2 * half + 1).min(stream.slot_count()))
}

pub fn truncation_sweep(sequences: &[SampleStream], n_values: &[usize], cfg: &EvalConfig) -> Result<EvalReport> {
    if sequences.is_empty() {
        return Err(Error::EmptyInput("no sequences to evaluate".into()));
    }
    let mut n_values = n_values.to_vec();
    n_values.sort_unstable();
    n_values.dedup();
    if n_values.is_empty() || n_values[0] == 0 {
        return Err(Error::InvalidConfig("orientation counts must be positive".into()));
    }

    let full_runs = sequences
        .par_iter()
        .map(|s| calibrate(s, &cfg.detector, &cfg.solver))
        .collect::<Result<Vec<_>>>()?;
    let reference = reference_params(&full_runs)?;

    let jobs: Vec<(usize, usize)> = n_values
        .iter()
        .flat_map(|&n| (0..sequences.len()).map(move |r| (n, r)))
        .collect();
    let cells: Vec<EvalCell> = jobs
        .par_iter()
        .map(|&(n_eff, run_id)| {
            let stream = &sequences[run_id];
            let full = &full_runs[run_id];
            let Some(slots) = truncation_point(full, n_eff, stream, &cfg.detector) else {
                return EvalCell {
                    n_eff,
                    run_id,
                    slots: 0,
                    errors: None,
                    failure: Some("insufficient_segments".into()),
                };
            };
            let outcome = if slots >= stream.slot_count() {
                Ok(full.clone())
            } else {
                calibrate(&stream.truncated(slots), &cfg.detector, &cfg.solver)
            };
            match outcome {
                Ok(r) => EvalCell {
                    n_eff,
                    run_id,
                    slots,
                    errors: Some(subset_errors(&r.params, &reference)),
                    failure: None,
                },
                Err(e) => EvalCell {
                    n_eff,
                    run_id,
                    slots,
                    errors: None,
                    failure: Some(e.code().into()),
                },
            }
        })
        .collect();

    let means = n_values
        .iter()
        .map(|&n| {
            let ok: Vec<&SubsetErrors> = cells
                .iter()
                .filter(|c| c.n_eff == n)
                .filter_map(|c| c.errors.as_ref())
                .collect();
            let errors = (!ok.is_empty())
                .then(|| SubsetErrors::from_fn(|s| ok.iter().map(|e| e.get(s)).sum::<f64>() / ok.len() as f64));
            EvalMean {
                n_eff: n,
                runs: ok.len(),
                errors,
            }
        })
        .collect();

    Ok(EvalReport {
        reference,
        full_runs,
        n_values,
        cells,
        means,
    })
}

/// Long-format CSV: one row per cell and subset, plus `mean` rows.
/// Missing cells carry an empty value and the failure code as unit.
pub fn format_report_csv(report: &EvalReport) -> String {
    let mut out = String::from("n_eff,run_id,subset,value,unit\n");
    for &n in &report.n_values {
        for c in report.cells.iter().filter(|c| c.n_eff == n) {
            for s in Subset::ALL {
                match (&c.errors, &c.failure) {
                    (Some(e), _) => {
                        let _ = writeln!(out, "{n},{},{},{:.9},{}", c.run_id, s.name(), e.get(s), s.unit());
                    }
                    (None, f) => {
                        let _ = writeln!(out, "{n},{},{},,{}", c.run_id, s.name(), f.as_deref().unwrap_or("failed"));
                    }
                }
            }
        }
        if let Some(e) = report.mean(n) {
            for s in Subset::ALL {
                let _ = writeln!(out, "{n},mean,{},{:.9},{}", s.name(), e.get(s), s.unit());
            }
        }
    }
    out
}

pub fn format_report_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}
