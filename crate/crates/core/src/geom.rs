//! Rotation algebra: scalar-first Hamilton quaternions, direction cosine
//! matrices and 3-2-1 Euler angles.
//!
//! A quaternion `q_b^n` maps body-frame vectors into the navigation frame,
//! i.e. `v^n = C(q) v^b`.

use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type RotMat = Matrix3<f64>;

/// Pitch values closer than this to ±π/2 are treated as gimbal lock.
pub const GIMBAL_LOCK_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeomError {
    #[error("gimbal lock: pitch {pitch} rad is within {margin} of ±π/2")]
    GimbalLock { pitch: f64, margin: f64 },
}

/// Unit quaternion, scalar first. Every constructor renormalizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuat {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for UnitQuat {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuat {
    pub const fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Normalizes `(w, x, y, z)`. Returns `None` for zero or non-finite input.
    pub fn try_new(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < f64::EPSILON {
            return None;
        }
        Some(Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    /// Like [`UnitQuat::try_new`] but panics on degenerate input.
    pub fn new_normalize(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self::try_new(w, x, y, z).expect("quaternion must be finite and non-zero")
    }

    pub fn from_wxyz(q: [f64; 4]) -> Option<Self> {
        Self::try_new(q[0], q[1], q[2], q[3])
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn wxyz(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn conj(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Exponential map of a rotation vector (axis × angle).
    pub fn from_rotation_vector(rv: &Vec3) -> Self {
        let angle = rv.norm();
        if angle < 1e-12 {
            // second-order series keeps the map smooth through zero
            let h = 0.5 * rv;
            return Self::new_normalize(1.0 - 0.125 * angle * angle, h.x, h.y, h.z);
        }
        let half = 0.5 * angle;
        let s = half.sin() / angle;
        Self::new_normalize(half.cos(), s * rv.x, s * rv.y, s * rv.z)
    }

    /// Logarithm map; the returned rotation vector has norm in [0, π].
    pub fn to_rotation_vector(&self) -> Vec3 {
        // pick the hemisphere with w >= 0 so the angle is the short way round
        let (w, v) = if self.w < 0.0 {
            (-self.w, -Vec3::new(self.x, self.y, self.z))
        } else {
            (self.w, Vec3::new(self.x, self.y, self.z))
        };
        let s = v.norm();
        if s < 1e-12 {
            return 2.0 * v;
        }
        let angle = 2.0 * s.atan2(w);
        v * (angle / s)
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n < f64::EPSILON {
            return Self::identity();
        }
        Self::from_rotation_vector(&(axis * (angle / n)))
    }

    pub fn to_rot(&self) -> RotMat {
        quat_to_rot(self)
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        quat_to_rot(self) * v
    }

    /// Geodesic angle between two attitudes, radians in [0, π].
    pub fn angle_to(&self, other: &UnitQuat) -> f64 {
        (self.conj() * *other).to_rotation_vector().norm()
    }
}

impl Mul for UnitQuat {
    type Output = UnitQuat;

    fn mul(self, rhs: UnitQuat) -> UnitQuat {
        quat_mul(&self, &rhs)
    }
}

/// Roll, pitch, yaw in radians for the 3-2-1 sequence, `C_b^n = Rz(ψ) Ry(θ) Rx(φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }
}

/// Cross-product matrix: `skew(v) * u == v × u`.
pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Hamilton product `a ⊗ b`.
pub fn quat_mul(a: &UnitQuat, b: &UnitQuat) -> UnitQuat {
    UnitQuat::new_normalize(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )
}

pub fn quat_to_rot(q: &UnitQuat) -> RotMat {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, xz, yz) = (x * y, x * z, y * z);
    let (wx, wy, wz) = (w * x, w * y, w * z);
    Matrix3::new(
        1.0 - 2.0 * (yy + zz),
        2.0 * (xy - wz),
        2.0 * (xz + wy),
        2.0 * (xy + wz),
        1.0 - 2.0 * (xx + zz),
        2.0 * (yz - wx),
        2.0 * (xz - wy),
        2.0 * (yz + wx),
        1.0 - 2.0 * (xx + yy),
    )
}

/// Converts a proper rotation matrix to a unit quaternion (Shepperd's method).
pub fn rot_to_quat(r: &RotMat) -> UnitQuat {
    let tr = r.trace();
    if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        UnitQuat::new_normalize(
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        )
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        UnitQuat::new_normalize(
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        )
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        UnitQuat::new_normalize(
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        )
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        UnitQuat::new_normalize(
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        )
    }
}

/// Zero-order-hold solution of `q̇ = ½ q ⊗ ω` over `dt`.
pub fn quat_integrate(q: &UnitQuat, omega: &Vec3, dt: f64) -> UnitQuat {
    quat_mul(q, &UnitQuat::from_rotation_vector(&(omega * dt)))
}

pub fn quat_from_euler(e: &EulerAngles) -> UnitQuat {
    let (sr, cr) = (0.5 * e.roll).sin_cos();
    let (sp, cp) = (0.5 * e.pitch).sin_cos();
    let (sy, cy) = (0.5 * e.yaw).sin_cos();
    UnitQuat::new_normalize(
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    )
}

pub fn euler_from_rot(r: &RotMat) -> Result<EulerAngles, GeomError> {
    let cos_pitch = r[(2, 1)].hypot(r[(2, 2)]);
    let pitch = (-r[(2, 0)]).atan2(cos_pitch);
    if cos_pitch < GIMBAL_LOCK_MARGIN.sin() {
        return Err(GeomError::GimbalLock {
            pitch,
            margin: GIMBAL_LOCK_MARGIN,
        });
    }
    Ok(EulerAngles {
        roll: r[(2, 1)].atan2(r[(2, 2)]),
        pitch,
        yaw: r[(1, 0)].atan2(r[(0, 0)]),
    })
}

pub fn euler_from_quat(q: &UnitQuat) -> Result<EulerAngles, GeomError> {
    euler_from_rot(&quat_to_rot(q))
}

/// First-order error quaternion `normalize([1, ½δΨ])`. Valid for ‖δΨ‖ < 0.5 rad.
pub fn small_angle_quat(dpsi: &Vec3) -> UnitQuat {
    UnitQuat::new_normalize(1.0, 0.5 * dpsi.x, 0.5 * dpsi.y, 0.5 * dpsi.z)
}

/// Geodesic angle of a rotation matrix, radians.
pub fn rot_angle(r: &RotMat) -> f64 {
    rot_to_quat(r).to_rotation_vector().norm()
}

/// Wraps an angle to (−π, π].
pub fn wrap_pi(a: f64) -> f64 {
    let mut w = a.rem_euclid(std::f64::consts::TAU);
    if w > std::f64::consts::PI {
        w -= std::f64::consts::TAU;
    }
    w
}
