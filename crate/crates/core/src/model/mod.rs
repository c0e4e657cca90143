//! Sensor error model shared by every other module.
//!
//! Both sensors follow `corrected = T · K · (raw − b)` where `b` is the bias,
//! `K = diag(scale)` and `T` is a unit-diagonal misalignment matrix. The
//! accelerometer misalignment is upper triangular, which ties the body frame
//! to the accelerometer x axis and leaves three free angles. The gyroscope
//! matrix has all six off-diagonal entries free so that the gyro triad is
//! aligned to that accelerometer-defined body frame.
//!
//! Misalignment entries are small angles in radians. Reports convert them to
//! degrees directly (`entry · 180/π`), which is the small-angle equivalent of
//! the axis misalignment angle.

mod quaternion;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use quaternion::Quaternion;

/// Triaxial sample: m/s² for accelerometers, rad/s for gyroscopes.
pub type TriSample = Vector3<f64>;

/// Standard gravity in m/s².
pub const STANDARD_GRAVITY: f64 = 9.80665;

/// Reporting conversion for acceleration, m/s² per milli-g.
pub const MS2_PER_MG: f64 = 9.807e-3;

/// Misalignment sanity bound in radians.
pub const MAX_MISALIGNMENT: f64 = 0.2;

/// Number of optimized parameters per sensor.
pub const PARAMS_PER_SENSOR: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelParams {
    /// `[α_yz, α_zy, α_zx]`
    pub misalignment: [f64; 3],
    pub scale: [f64; 3],
    pub bias: [f64; 3],
}

impl Default for AccelParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl AccelParams {
    pub fn identity() -> Self {
        Self {
            misalignment: [0.0; 3],
            scale: [1.0; 3],
            bias: [0.0; 3],
        }
    }

    /// Nominal starting point: datasheet sensitivity, no misalignment, no bias.
    pub fn nominal(sensitivity: f64) -> Self {
        Self {
            scale: [sensitivity; 3],
            ..Self::identity()
        }
    }

    pub fn misalignment_matrix(&self) -> Matrix3<f64> {
        let [yz, zy, zx] = self.misalignment;
        Matrix3::new(1.0, -yz, zy, 0.0, 1.0, -zx, 0.0, 0.0, 1.0)
    }

    pub fn scale_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.scale))
    }

    pub fn bias_vector(&self) -> TriSample {
        Vector3::from(self.bias)
    }

    /// Packs the 9 optimized values as `[misalignment, scale, bias]`.
    pub fn to_vector(&self) -> [f64; 9] {
        let mut v = [0.0; 9];
        v[..3].copy_from_slice(&self.misalignment);
        v[3..6].copy_from_slice(&self.scale);
        v[6..].copy_from_slice(&self.bias);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            misalignment: [v[0], v[1], v[2]],
            scale: [v[3], v[4], v[5]],
            bias: [v[6], v[7], v[8]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_scale("accel", &self.scale)?;
        check_misalignment("accel", &self.misalignment)?;
        check_finite("accel bias", &self.bias)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GyroParams {
    /// `[γ_yz, γ_zy, γ_xz, γ_zx, γ_xy, γ_yx]`
    pub misalignment: [f64; 6],
    pub scale: [f64; 3],
    /// Estimated from the initial static phase, not by the optimizer.
    pub bias: [f64; 3],
}

impl Default for GyroParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl GyroParams {
    pub fn identity() -> Self {
        Self {
            misalignment: [0.0; 6],
            scale: [1.0; 3],
            bias: [0.0; 3],
        }
    }

    pub fn nominal(sensitivity: f64) -> Self {
        Self {
            scale: [sensitivity; 3],
            ..Self::identity()
        }
    }

    pub fn misalignment_matrix(&self) -> Matrix3<f64> {
        let [yz, zy, xz, zx, xy, yx] = self.misalignment;
        Matrix3::new(1.0, -yz, zy, xz, 1.0, -zx, -xy, yx, 1.0)
    }

    pub fn scale_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.scale))
    }

    pub fn bias_vector(&self) -> TriSample {
        Vector3::from(self.bias)
    }

    /// Packs the 9 optimized values as `[misalignment, scale]`; bias excluded.
    pub fn to_vector(&self) -> [f64; 9] {
        let mut v = [0.0; 9];
        v[..6].copy_from_slice(&self.misalignment);
        v[6..].copy_from_slice(&self.scale);
        v
    }

    pub fn from_slice(v: &[f64], bias: [f64; 3]) -> Self {
        Self {
            misalignment: [v[0], v[1], v[2], v[3], v[4], v[5]],
            scale: [v[6], v[7], v[8]],
            bias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_scale("gyro", &self.scale)?;
        check_misalignment("gyro", &self.misalignment)?;
        check_finite("gyro bias", &self.bias)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub accel: AccelParams,
    pub gyro: GyroParams,
}

impl CalibrationParams {
    pub fn identity() -> Self {
        Self::default()
    }

    /// The 18 optimized scalars, accelerometer first.
    pub fn optimized(&self) -> [f64; 2 * PARAMS_PER_SENSOR] {
        let mut v = [0.0; 18];
        v[..9].copy_from_slice(&self.accel.to_vector());
        v[9..].copy_from_slice(&self.gyro.to_vector());
        v
    }

    pub fn validate(&self) -> Result<()> {
        self.accel.validate()?;
        self.gyro.validate()
    }
}

fn check_scale(what: &str, scale: &[f64; 3]) -> Result<()> {
    if scale.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "{what} scale must be positive, got {scale:?}"
        )))
    }
}

fn check_misalignment(what: &str, m: &[f64]) -> Result<()> {
    if m.iter().all(|a| a.is_finite() && a.abs() < MAX_MISALIGNMENT) {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "{what} misalignment outside ±{MAX_MISALIGNMENT} rad: {m:?}"
        )))
    }
}

fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("{what} not finite: {v:?}")))
    }
}

pub fn correct_accel(raw: &TriSample, p: &AccelParams) -> TriSample {
    p.misalignment_matrix() * (p.scale_matrix() * (raw - p.bias_vector()))
}

pub fn uncorrect_accel(value: &TriSample, p: &AccelParams) -> TriSample {
    let unskewed = solve_upper_unit(&p.misalignment_matrix(), value);
    unscale(&unskewed, &p.scale) + p.bias_vector()
}

pub fn correct_gyro(raw: &TriSample, p: &GyroParams) -> TriSample {
    p.misalignment_matrix() * (p.scale_matrix() * (raw - p.bias_vector()))
}

pub fn uncorrect_gyro(value: &TriSample, p: &GyroParams) -> TriSample {
    // T_g is unit-diagonal with small off-diagonals, so LU never pivots to zero
    let unskewed = p
        .misalignment_matrix()
        .lu()
        .solve(value)
        .expect("gyro misalignment matrix is invertible for |γ| < 0.2");
    unscale(&unskewed, &p.scale) + p.bias_vector()
}

fn unscale(v: &TriSample, scale: &[f64; 3]) -> TriSample {
    Vector3::new(v.x / scale[0], v.y / scale[1], v.z / scale[2])
}

/// Back substitution for a unit upper-triangular system.
fn solve_upper_unit(t: &Matrix3<f64>, b: &TriSample) -> TriSample {
    let z = b.z;
    let y = b.y - t[(1, 2)] * z;
    let x = b.x - t[(0, 1)] * y - t[(0, 2)] * z;
    Vector3::new(x, y, z)
}
