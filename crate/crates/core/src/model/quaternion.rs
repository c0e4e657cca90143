use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Hamilton quaternion `w + xi + yj + zk`.
///
/// Orientation quaternions in this crate rotate vectors from a body frame
/// into a reference frame: `v_ref = q * v_body * q⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis / n;
        Self::new(c, s * a.x, s * a.y, s * a.z)
    }

    /// Rotation by the rotation vector `v` (axis times angle).
    ///
    /// A zero vector maps to the identity. Small angles use a series
    /// expansion so the axis is never formed by dividing by a vanishing norm.
    pub fn from_rotation_vector(v: &Vector3<f64>) -> Self {
        let theta2 = v.norm_squared();
        let theta = theta2.sqrt();
        let (c, k) = if theta < 1e-6 {
            // sin(θ/2)/θ and cos(θ/2) to fourth order
            (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
        } else {
            let (s, c) = (0.5 * theta).sin_cos();
            (c, s / theta)
        };
        Self::new(c, k * v.x, k * v.y, k * v.z)
    }

    /// Incremental rotation produced by a constant body rate over `dt`.
    pub fn from_angular_rate(omega: &Vector3<f64>, dt: f64) -> Self {
        Self::from_rotation_vector(&(omega * dt))
    }

    /// Shortest rotation taking unit direction `from` onto unit direction `to`.
    pub fn rotation_between(from: &Vector3<f64>, to: &Vector3<f64>) -> Self {
        let a = from.normalize();
        let b = to.normalize();
        let d = a.dot(&b);
        if d < -1.0 + 1e-12 {
            // antiparallel: any perpendicular axis works
            let helper = if a.x.abs() < 0.9 {
                Vector3::x()
            } else {
                Vector3::y()
            };
            let axis = a.cross(&helper).normalize();
            return Self::new(0.0, axis.x, axis.y, axis.z);
        }
        let c = a.cross(&b);
        Self::new(1.0 + d, c.x, c.y, c.z).normalized()
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::new(
            self.w + other.w,
            self.x + other.x,
            self.y + other.y,
            self.z + other.z,
        )
    }

    /// Rotation angle in `[0, π]`, treating `q` and `-q` as the same rotation.
    pub fn angle(&self) -> f64 {
        let q = self.normalized();
        2.0 * q.vector().norm().atan2(q.w.abs())
    }

    /// Angle of the relative rotation between two orientations.
    pub fn angle_to(&self, other: &Self) -> f64 {
        (self.conjugate() * *other).angle()
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.to_rotation_matrix() * v
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let Quaternion { w, x, y, z } = *self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Spherical linear interpolation along the shorter arc.
    pub fn slerp(&self, other: &Self, t: f64) -> Self {
        let mut b = *other;
        if self.dot(&b) < 0.0 {
            b = b.scale(-1.0);
        }
        let rel = self.conjugate() * b;
        let angle = rel.angle();
        let axis = rel.vector();
        *self * Self::from_axis_angle(&axis, angle * t)
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, r: Quaternion) -> Quaternion {
        let l = self;
        Quaternion::new(
            l.w * r.w - l.x * r.x - l.y * r.y - l.z * r.z,
            l.w * r.x + l.x * r.w + l.y * r.z - l.z * r.y,
            l.w * r.y - l.x * r.z + l.y * r.w + l.z * r.x,
            l.w * r.z + l.x * r.y - l.y * r.x + l.z * r.w,
        )
    }
}
