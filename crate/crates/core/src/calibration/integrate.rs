//! Gyro integration into relative orientation.
//!
//! Samples are taken as the body rate at consecutive sample instants, so `n`
//! samples describe `n − 1` steps of length `dt`. The result maps vectors
//! from the body frame at the last sample into the body frame at the first.

use serde::{Deserialize, Serialize};

use crate::model::{correct_gyro, GyroParams, Quaternion, TriSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegrationMethod {
    /// Fourth-order Runge–Kutta on `q̇ = ½ q ⊗ ω`.
    #[default]
    Rk4,
    /// One exponential-map step per interval with the mean rate.
    Euler,
}

/// Calibrates each raw sample with `p` and integrates the result.
pub fn integrate_orientation(
    gyro: &[TriSample],
    p: &GyroParams,
    dt: f64,
    method: IntegrationMethod,
) -> Quaternion {
    let rates: Vec<TriSample> = gyro.iter().map(|g| correct_gyro(g, p)).collect();
    integrate_rates(&rates, dt, method)
}

/// Integrates body rates that are already in calibrated units.
pub fn integrate_rates(rates: &[TriSample], dt: f64, method: IntegrationMethod) -> Quaternion {
    let mut q = Quaternion::IDENTITY;
    for i in 0..rates.len().saturating_sub(1) {
        q = match method {
            IntegrationMethod::Rk4 => rk4_step(&q, rates, i, dt),
            IntegrationMethod::Euler => {
                q * Quaternion::from_angular_rate(&(0.5 * (rates[i] + rates[i + 1])), dt)
            }
        }
        .normalized();
    }
    q
}

/// Rate at the middle of step `i`. Cubic through four neighbours where they
/// exist, linear otherwise.
fn midpoint_rate(rates: &[TriSample], i: usize) -> TriSample {
    if i >= 1 && i + 2 < rates.len() {
        (9.0 * (rates[i] + rates[i + 1]) - rates[i - 1] - rates[i + 2]) / 16.0
    } else {
        0.5 * (rates[i] + rates[i + 1])
    }
}

fn derivative(q: &Quaternion, w: &TriSample) -> Quaternion {
    (*q * Quaternion::new(0.0, w.x, w.y, w.z)).scale(0.5)
}

fn rk4_step(q: &Quaternion, rates: &[TriSample], i: usize, dt: f64) -> Quaternion {
    let w0 = rates[i];
    let wm = midpoint_rate(rates, i);
    let w1 = rates[i + 1];
    let k1 = derivative(q, &w0);
    let k2 = derivative(&q.add(&k1.scale(0.5 * dt)), &wm);
    let k3 = derivative(&q.add(&k2.scale(0.5 * dt)), &wm);
    let k4 = derivative(&q.add(&k3.scale(dt)), &w1);
    let incr = k1.add(&k2.scale(2.0)).add(&k3.scale(2.0)).add(&k4);
    q.add(&incr.scale(dt / 6.0))
}
