//! Static-interval detection with variance-threshold selection.
//!
//! The variance magnitude `ς(t)²` is the sum of the three per-axis
//! accelerometer variances over a centered window of `2·window_halfwidth`.
//! A sample is static under factor `k` when `ς(t)² < k·ς_init²`, where
//! `ς_init²` is the same statistic over the long initial rest phase.
//!
//! The factor is swept over `1..=k_max` and the one producing the most usable
//! segments wins. Segments are usable when they last at least
//! `min_segment_duration` and their mean acceleration direction differs from
//! the previously accepted segment. Ties go to the lowest accelerometer
//! calibration residual, then to the smallest `k`.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TriSample;
use crate::stream::{AccelSource, SampleStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Seconds on each side of the window center.
    pub window_halfwidth: f64,
    pub k_max: u32,
    pub min_segment_duration: f64,
    pub init_phase_duration: f64,
    /// Degrees.
    pub direction_angle_threshold: f64,
    pub required_min_segments: usize,
    /// Lower bound on `ς_init²` in (m/s²)², keeps noiseless streams usable.
    pub variance_floor: f64,
    pub accel_source: AccelSource,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window_halfwidth: 0.5,
            k_max: 225,
            min_segment_duration: 1.0,
            init_phase_duration: 30.0,
            direction_angle_threshold: 10.0,
            required_min_segments: 9,
            variance_floor: 1e-10,
            accel_source: AccelSource::Primary,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window_halfwidth", self.window_halfwidth),
            ("min_segment_duration", self.min_segment_duration),
            ("init_phase_duration", self.init_phase_duration),
            ("direction_angle_threshold", self.direction_angle_threshold),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.k_max < 1 {
            return Err(Error::InvalidConfig("k_max must be at least 1".into()));
        }
        if self.variance_floor.is_nan() || self.variance_floor < 0.0 {
            return Err(Error::InvalidConfig("variance_floor must be >= 0".into()));
        }
        Ok(())
    }
}

/// A quasi-static interval, in slots of the dense stream view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticSegment {
    /// First slot, inclusive.
    pub start: usize,
    /// One past the last slot.
    pub end: usize,
    /// Mean raw acceleration over the present samples.
    pub mean_accel: TriSample,
    pub mean_gravity_dir: TriSample,
    /// Seconds.
    pub duration: f64,
}

impl StaticSegment {
    fn same_span(&self, other: &Self) -> bool {
        self.start == other.start && self.end == other.end
    }
}

/// Precomputed variance profile of one stream, reused across the `k` sweep.
#[derive(Debug, Clone)]
pub struct VarianceProfile {
    accel: Vec<Option<TriSample>>,
    variance: Vec<Option<f64>>,
    half: usize,
    sample_rate: f64,
}

impl VarianceProfile {
    pub fn new(stream: &SampleStream, source: AccelSource, window_halfwidth: f64) -> Result<Self> {
        let accel = stream.accel_slots(source);
        let half = (window_halfwidth * stream.sample_rate()).round().max(1.0) as usize;
        let variance = windowed_variance(&accel, half)?;
        Ok(Self {
            accel,
            variance,
            half,
            sample_rate: stream.sample_rate(),
        })
    }

    pub fn variance(&self) -> &[Option<f64>] {
        &self.variance
    }

    pub fn half_window(&self) -> usize {
        self.half
    }

    pub fn len(&self) -> usize {
        self.variance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variance.is_empty()
    }

    /// Raw static/motion classification for factor `k`.
    pub fn classify(&self, k: u32, baseline: f64) -> Vec<bool> {
        let threshold = f64::from(k) * baseline;
        self.variance
            .iter()
            .map(|v| v.is_some_and(|v| v < threshold))
            .collect()
    }

    pub fn mean_accel(&self, start: usize, end: usize) -> Option<TriSample> {
        let (sum, n) = self.accel[start..end]
            .iter()
            .flatten()
            .fold((Vector3::zeros(), 0usize), |(s, n), a| (s + a, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// Runs of static samples, trimmed, filtered by duration and direction.
    pub fn segments(&self, k: u32, baseline: f64, cfg: &DetectorConfig) -> Vec<StaticSegment> {
        let flags = self.classify(k, baseline);
        let min_slots = (cfg.min_segment_duration * self.sample_rate - 1e-9).ceil() as usize;
        let cos_limit = cfg.direction_angle_threshold.to_radians().cos();
        let mut out: Vec<StaticSegment> = Vec::new();
        let mut i = 0;
        while i < flags.len() {
            if !flags[i] {
                i += 1;
                continue;
            }
            let run_start = i;
            while i < flags.len() && flags[i] {
                i += 1;
            }
            let start = run_start + self.half;
            let Some(end) = i.checked_sub(self.half) else {
                continue;
            };
            if end <= start || end - start < min_slots {
                continue;
            }
            let Some(mean) = self.mean_accel(start, end) else {
                continue;
            };
            let dir = mean.normalize();
            if let Some(prev) = out.last() {
                if prev.mean_gravity_dir.dot(&dir) > cos_limit {
                    continue;
                }
            }
            out.push(StaticSegment {
                start,
                end,
                mean_accel: mean,
                mean_gravity_dir: dir,
                duration: (end - start) as f64 / self.sample_rate,
            });
        }
        out
    }
}

/// Per-slot `ς²`, `None` where the centered window does not fit or holds
/// fewer than half of its samples.
fn windowed_variance(accel: &[Option<TriSample>], half: usize) -> Result<Vec<Option<f64>>> {
    let width = 2 * half + 1;
    if accel.len() < width {
        return Err(Error::InsufficientData(format!(
            "{} samples, one variance window needs {width}",
            accel.len()
        )));
    }
    let min_present = width.div_ceil(2).max(2);
    let out = (0..accel.len())
        .into_par_iter()
        .map(|c| {
            if c < half || c + half >= accel.len() {
                return None;
            }
            variance_sum(&accel[c - half..=c + half], min_present)
        })
        .collect();
    Ok(out)
}

fn variance_sum(window: &[Option<TriSample>], min_present: usize) -> Option<f64> {
    let (sum, n) = window
        .iter()
        .flatten()
        .fold((Vector3::zeros(), 0usize), |(s, n), a| (s + a, n + 1));
    if n < min_present {
        return None;
    }
    let mean: TriSample = sum / n as f64;
    let ss: f64 = window
        .iter()
        .flatten()
        .map(|a| (a - mean).norm_squared())
        .sum();
    Some(ss / n as f64)
}

/// `ς(t)²` over a centered window of `2·window_halfwidth` seconds.
pub fn rolling_variance_magnitude(
    stream: &SampleStream,
    source: AccelSource,
    window_halfwidth: f64,
) -> Result<Vec<Option<f64>>> {
    Ok(VarianceProfile::new(stream, source, window_halfwidth)?.variance)
}

/// `ς_init²`: summed per-axis variance over the initial rest phase.
pub fn baseline_variance(stream: &SampleStream, cfg: &DetectorConfig) -> Result<f64> {
    let accel = stream.accel_slots(cfg.accel_source);
    let n = (cfg.init_phase_duration * stream.sample_rate()).round() as usize;
    if accel.len() < n {
        return Err(Error::InsufficientData(format!(
            "stream spans {} slots, initial phase needs {n}",
            accel.len()
        )));
    }
    let sigma2 = variance_sum(&accel[..n], 2).ok_or_else(|| {
        Error::InsufficientData("initial phase has fewer than two samples".into())
    })?;
    Ok(sigma2.max(cfg.variance_floor))
}

pub fn extract_segments(
    stream: &SampleStream,
    k: u32,
    baseline: f64,
    cfg: &DetectorConfig,
) -> Result<Vec<StaticSegment>> {
    let profile = VarianceProfile::new(stream, cfg.accel_source, cfg.window_halfwidth)?;
    Ok(profile.segments(k.max(1), baseline, cfg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSelection {
    pub k: u32,
    pub segments: Vec<StaticSegment>,
    pub baseline: f64,
    /// Segment count for each `k` in `1..=k_max`, before the minimum-count gate.
    pub counts: Vec<usize>,
    /// Number of residual evaluations performed for the tie-break.
    pub residual_evaluations: usize,
}

/// Sweeps `k = 1..=k_max` and keeps the factor with the most usable segments.
///
/// `residual` is only consulted when several factors tie on the count; it is
/// evaluated once per distinct segment list. A failing residual counts as
/// infinitely bad.
pub fn select_threshold<F>(
    stream: &SampleStream,
    cfg: &DetectorConfig,
    mut residual: F,
) -> Result<ThresholdSelection>
where
    F: FnMut(&[StaticSegment]) -> Result<f64>,
{
    cfg.validate()?;
    let baseline = baseline_variance(stream, cfg)?;
    let profile = VarianceProfile::new(stream, cfg.accel_source, cfg.window_halfwidth)?;

    let sweep: Vec<Vec<StaticSegment>> = (1..=cfg.k_max)
        .into_par_iter()
        .map(|k| profile.segments(k, baseline, cfg))
        .collect();
    let counts: Vec<usize> = sweep.iter().map(Vec::len).collect();
    let best = counts.iter().copied().max().unwrap_or(0);
    if best < cfg.required_min_segments {
        return Err(Error::NoUsableThreshold {
            best_count: best,
            required: cfg.required_min_segments,
        });
    }

    let tied: Vec<usize> = (0..sweep.len()).filter(|&i| counts[i] == best).collect();
    let mut chosen = tied[0];
    let mut evaluations = 0;
    if tied.len() > 1 {
        let mut scored: Vec<(usize, f64)> = Vec::new();
        for &i in &tied {
            let known = scored
                .iter()
                .find(|(j, _)| segments_equal(&sweep[*j], &sweep[i]))
                .map(|&(_, r)| r);
            let r = match known {
                Some(r) => r,
                None => {
                    evaluations += 1;
                    residual(&sweep[i]).unwrap_or(f64::INFINITY)
                }
            };
            scored.push((i, r));
        }
        // first strictly lower residual wins, so equal residuals keep the smaller k
        let mut best_r = f64::INFINITY;
        for (i, r) in scored {
            if r < best_r {
                best_r = r;
                chosen = i;
            }
        }
    }

    Ok(ThresholdSelection {
        k: chosen as u32 + 1,
        segments: sweep[chosen].clone(),
        baseline,
        counts,
        residual_evaluations: evaluations,
    })
}

fn segments_equal(a: &[StaticSegment], b: &[StaticSegment]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_span(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::Record;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn stream_from(accel: Vec<TriSample>, rate: f64) -> SampleStream {
        let records = accel
            .into_iter()
            .enumerate()
            .map(|(i, a)| Record {
                packet_index: i as u64,
                timestamp: i as f64 / rate,
                accel: Some(a),
                accel_secondary: Some(a),
                gyro: Vector3::zeros(),
            })
            .collect();
        SampleStream::new(records, rate).unwrap()
    }

    fn noisy(n: usize, mean: TriSample, sigma: f64, seed: u64) -> Vec<TriSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, sigma).unwrap();
        (0..n)
            .map(|_| {
                mean + Vector3::new(d.sample(&mut rng), d.sample(&mut rng), d.sample(&mut rng))
            })
            .collect()
    }

    #[test]
    fn constant_stream_has_zero_variance() {
        let s = stream_from(vec![Vector3::new(0.0, 0.0, 9.81); 500], 100.0);
        let v = rolling_variance_magnitude(&s, AccelSource::Primary, 0.5).unwrap();
        assert!(v[..50].iter().all(Option::is_none));
        assert!(v[450..].iter().all(Option::is_none));
        assert!(v[50..450].iter().all(|x| x.unwrap() < 1e-25));
        let cfg = DetectorConfig {
            init_phase_duration: 2.0,
            ..Default::default()
        };
        assert_eq!(baseline_variance(&s, &cfg).unwrap(), cfg.variance_floor);
    }

    #[test]
    fn short_stream_is_insufficient() {
        let s = stream_from(vec![Vector3::new(0.0, 0.0, 9.81); 50], 100.0);
        let err = rolling_variance_magnitude(&s, AccelSource::Primary, 0.5).unwrap_err();
        assert_eq!(err.code(), "insufficient_data");
    }

    #[test]
    fn white_noise_variance_is_three_sigma_squared() {
        let sigma = 0.01;
        let s = stream_from(noisy(10_000, Vector3::new(0.0, 0.0, 9.81), sigma, 7), 100.0);
        let v = rolling_variance_magnitude(&s, AccelSource::Primary, 0.5).unwrap();
        let vals: Vec<f64> = v.into_iter().flatten().collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean / (3.0 * sigma * sigma) - 1.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn adxl_level_baseline() {
        let sigma = 200e-6 * 9.80665;
        let s = stream_from(noisy(4000, Vector3::new(0.1, 0.0, 9.8), sigma, 3), 100.0);
        let b = baseline_variance(&s, &DetectorConfig::default()).unwrap();
        let expected = 3.0 * sigma * sigma;
        assert!((b / expected - 1.0).abs() < 0.15, "{b} vs {expected}");
    }

    #[test]
    fn pure_static_stream_gives_one_segment() {
        let s = stream_from(noisy(6000, Vector3::new(0.0, 0.0, 9.81), 0.002, 1), 100.0);
        let cfg = DetectorConfig::default();
        let b = baseline_variance(&s, &cfg).unwrap();
        for k in [1, 2, 5, 50, 225] {
            let segs = extract_segments(&s, k, b, &cfg).unwrap();
            assert_eq!(segs.len(), 1, "k={k}");
        }
    }

    #[test]
    fn trimming_and_minimum_duration() {
        // 3 s rest, 0.2 s jump, 1.6 s rest, 0.2 s jump, 3 s rest in a new direction
        let mut a = vec![Vector3::new(0.0, 0.0, 9.81); 300];
        a.extend(vec![Vector3::new(5.0, 0.0, 5.0); 20]);
        a.extend(vec![Vector3::new(0.0, 9.81, 0.0); 160]);
        a.extend(vec![Vector3::new(5.0, 0.0, 5.0); 20]);
        a.extend(vec![Vector3::new(9.81, 0.0, 0.0); 300]);
        for (i, x) in a.iter_mut().enumerate() {
            // alternating jitter so the windows are not exactly constant
            x.x += if i % 2 == 0 { 1e-4 } else { -1e-4 };
        }
        let s = stream_from(a, 100.0);
        let cfg = DetectorConfig {
            init_phase_duration: 2.0,
            ..Default::default()
        };
        let b = baseline_variance(&s, &cfg).unwrap();
        let segs = extract_segments(&s, 5, b, &cfg).unwrap();
        // the 1.6 s rest is only 0.6 s long after the two half-window guards
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].start, 100);
        assert!(segs[0].end <= 300 - 50);
        assert!(segs.iter().all(|g| g.duration >= 1.0));
        assert!(segs.iter().all(|g| (g.mean_gravity_dir.norm() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn no_usable_k_when_too_few_segments() {
        let s = stream_from(noisy(6000, Vector3::new(0.0, 0.0, 9.81), 0.002, 2), 100.0);
        let err = select_threshold(&s, &DetectorConfig::default(), |_| Ok(0.0)).unwrap_err();
        match err {
            Error::NoUsableThreshold { best_count, required } => {
                assert_eq!(best_count, 1);
                assert_eq!(required, 9);
            }
            other => panic!("unexpected {other}"),
        }
    }
}
