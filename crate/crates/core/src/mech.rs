//! Radar-based dead-reckoning mechanization.
//!
//! Attitude comes from integrating bias-compensated gyro rates; the body
//! velocity in the navigation frame is reconstructed from the radar ego
//! velocity and the lever arm, and position is advanced with a zero-order
//! hold over the radar period.

use thiserror::Error;

use crate::geom::{quat_integrate, skew, UnitQuat, Vec3};
use crate::model::{Extrinsics, ImuSample};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MechError {
    #[error("no gyro samples in ({from}, {to}]")]
    EmptyGyroWindow { from: f64, to: f64 },
    #[error("non-positive propagation interval {0}")]
    InvalidInterval(f64),
}

/// Dead-reckoning state: position, attitude `q_b^n`, gyro bias and the
/// per-axis radar scale factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrState {
    pub position: Vec3,
    pub attitude: UnitQuat,
    pub gyro_bias: Vec3,
    pub scale: Vec3,
}

impl Default for DrState {
    fn default() -> Self {
        Self {
            position: Vec3::zeros(),
            attitude: UnitQuat::identity(),
            gyro_bias: Vec3::zeros(),
            scale: Vec3::repeat(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechOutput {
    pub velocity: Vec3,
    pub position: Vec3,
    pub attitude: UnitQuat,
    /// Set when no gyro sample fell inside the window and the previous
    /// attitude was held.
    pub gyro_gap: bool,
}

/// `v_b^n = C_b^n C_r^b diag(s) v̄ʳ − C_b^n [ω×] p_r^b`.
pub fn body_velocity_from_radar(
    v_radar: &Vec3,
    scale: &Vec3,
    omega: &Vec3,
    attitude: &UnitQuat,
    ext: &Extrinsics,
) -> Vec3 {
    let c_bn = attitude.to_rot();
    c_bn * (ext.rot_r_b() * scale.component_mul(v_radar)) - c_bn * (skew(omega) * ext.p_r_b)
}

/// Integrates attitude over `(t_from, t_to]`. Each sample is held over the
/// interval ending at its own timestamp, so the first sample after `t_to`
/// covers the remainder of the window.
///
/// Returns the new attitude, the compensated rate in effect at `t_to`, and
/// the number of samples touched.
pub fn integrate_gyro(
    attitude: &UnitQuat,
    gyro_bias: &Vec3,
    samples: &[ImuSample],
    t_from: f64,
    t_to: f64,
) -> (UnitQuat, Option<Vec3>, usize) {
    integrate_gyro_with(attitude, gyro_bias, samples, t_from, t_to, |_, _, _| {})
}

/// [`integrate_gyro`] calling `visit(sample, attitude_after, dt)` for every
/// integrated segment.
pub fn integrate_gyro_with(
    attitude: &UnitQuat,
    gyro_bias: &Vec3,
    samples: &[ImuSample],
    t_from: f64,
    t_to: f64,
    mut visit: impl FnMut(&ImuSample, &UnitQuat, f64),
) -> (UnitQuat, Option<Vec3>, usize) {
    let mut q = *attitude;
    let mut t = t_from;
    let mut last = None;
    let mut used = 0;
    let start = samples.partition_point(|s| s.t <= t_from);
    for s in &samples[start..] {
        let end = s.t.min(t_to);
        let dt = end - t;
        if dt > 0.0 {
            let omega = s.gyro - gyro_bias;
            q = quat_integrate(&q, &omega, dt);
            visit(s, &q, dt);
            last = Some(omega);
            used += 1;
        }
        t = end;
        if s.t >= t_to {
            break;
        }
    }
    (q, last, used)
}

/// One radar-epoch DR step over `(t_from, t_from + period]`.
///
/// `omega_hint` is used for the lever-arm term when the window holds no
/// gyro sample.
#[allow(clippy::too_many_arguments)]
pub fn propagate_pose(
    state: &DrState,
    gyro: &[ImuSample],
    t_from: f64,
    period: f64,
    v_radar: &Vec3,
    ext: &Extrinsics,
    omega_hint: &Vec3,
) -> Result<MechOutput, MechError> {
    if !(period > 0.0) {
        return Err(MechError::InvalidInterval(period));
    }
    let (attitude, last, used) =
        integrate_gyro(&state.attitude, &state.gyro_bias, gyro, t_from, t_from + period);
    let omega = last.unwrap_or(*omega_hint);
    let velocity = body_velocity_from_radar(v_radar, &state.scale, &omega, &attitude, ext);
    Ok(MechOutput {
        velocity,
        position: state.position + velocity * period,
        attitude,
        gyro_gap: used == 0,
    })
}

/// Like [`propagate_pose`] but fails instead of holding attitude when the
/// window is empty.
pub fn propagate_pose_strict(
    state: &DrState,
    gyro: &[ImuSample],
    t_from: f64,
    period: f64,
    v_radar: &Vec3,
    ext: &Extrinsics,
) -> Result<MechOutput, MechError> {
    let out = propagate_pose(state, gyro, t_from, period, v_radar, ext, &Vec3::zeros())?;
    if out.gyro_gap {
        return Err(MechError::EmptyGyroWindow {
            from: t_from,
            to: t_from + period,
        });
    }
    Ok(out)
}
