//! Sensor records, calibration and the stochastic configuration shared by
//! the estimator and the simulator.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{RotMat, UnitQuat, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("target at zero range has no direction")]
    ZeroRange,
    #[error("invalid noise configuration: {0}")]
    InvalidNoise(String),
}

/// One IMU record: gyro rate (rad/s) and specific force (m/s²) in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub gyro: Vec3,
    pub accel: Vec3,
}

/// A radar detection. Positive doppler means the target is receding, so a
/// static target seen from a radar moving with velocity `v` reads `-uᵀv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarTarget {
    pub position: Vec3,
    pub doppler: f64,
    /// Return power in dB; carried through untouched.
    pub power: f64,
}

impl RadarTarget {
    pub fn new(position: Vec3, doppler: f64) -> Self {
        Self {
            position,
            doppler,
            power: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RadarScan {
    pub t: f64,
    pub targets: Vec<RadarTarget>,
}

impl RadarScan {
    pub fn points(&self) -> Vec<Vec3> {
        self.targets.iter().map(|t| t.position).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> RadarScan {
        RadarScan {
            t: self.t,
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}

/// IMU-to-radar calibration: `C_b^r` and the radar origin in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Extrinsics {
    pub q_b_r: UnitQuat,
    pub p_r_b: Vec3,
}

impl Extrinsics {
    pub fn identity() -> Self {
        Self::default()
    }

    /// `C_b^r`: body → radar.
    pub fn rot_b_r(&self) -> RotMat {
        self.q_b_r.to_rot()
    }

    /// `C_r^b`: radar → body.
    pub fn rot_r_b(&self) -> RotMat {
        self.q_b_r.to_rot().transpose()
    }
}

/// Builds validated extrinsics from a raw (possibly unnormalized) quaternion
/// and a lever arm.
pub fn validate_extrinsics(q_b_r: [f64; 4], p_r_b: Vec3) -> Result<Extrinsics, ModelError> {
    if q_b_r.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::InvalidCalibration(
            "rotation has non-finite components".into(),
        ));
    }
    let q = UnitQuat::from_wxyz(q_b_r)
        .ok_or_else(|| ModelError::InvalidCalibration("rotation has zero norm".into()))?;
    if p_r_b.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::InvalidCalibration(
            "lever arm has non-finite components".into(),
        ));
    }
    Ok(Extrinsics { q_b_r: q, p_r_b })
}

pub fn unit_direction(target: &RadarTarget) -> Result<Vec3, ModelError> {
    let r = target.position.norm();
    if !(r > 0.0) || !r.is_finite() {
        return Err(ModelError::ZeroRange);
    }
    Ok(target.position / r)
}

/// All stochastic parameters of the estimator.
///
/// White-noise terms are continuous-time densities; the discrete process
/// noise over a radar period `T` is `T·σ²`. Standard deviations are stored
/// and squared at the point of use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Gyro white noise density, rad/s/√Hz.
    pub sigma_gyro: f64,
    /// Gyro bias driving noise, rad/s/√s.
    pub sigma_gyro_bias: f64,
    /// Radar scale-factor driving noise, 1/√s.
    pub sigma_scale: f64,
    /// Tilt measurement noise, rad.
    pub sigma_tilt: f64,
    /// Nominal per-target Doppler noise, m/s.
    pub sigma_radar_nominal: f64,
    /// Gyro bias Markov time constant, s.
    #[serde(with = "extended_f64")]
    pub tau_gyro_bias: f64,
    /// Scale-factor Markov time constant, s.
    #[serde(with = "extended_f64")]
    pub tau_scale: f64,
    /// Adaptive tilt threshold on | ‖f̂‖ − g |, m/s².
    pub gamma: f64,
    pub gravity: f64,
    /// Inflation gain applied to σ_a when the threshold is exceeded.
    pub kappa: f64,
    /// Radar velocity axes within this many standard deviations of zero
    /// carry no scale information for the epoch; 0 disables the gate.
    pub scale_excitation_gate: f64,
    pub p0_position: [f64; 3],
    pub p0_attitude: [f64; 3],
    pub p0_gyro_bias: [f64; 3],
    pub p0_scale: [f64; 3],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_gyro: 1.5e-4,
            sigma_gyro_bias: 2e-6,
            sigma_scale: 1e-5,
            sigma_tilt: 0.02,
            sigma_radar_nominal: 0.05,
            tau_gyro_bias: 1000.0,
            tau_scale: 1e6,
            gamma: 0.059,
            gravity: 9.81,
            kappa: 100.0,
            scale_excitation_gate: 5.0,
            p0_position: [0.0; 3],
            p0_attitude: [1f64.to_radians(), 1f64.to_radians(), 3f64.to_radians()],
            p0_gyro_bias: [0.2f64.to_radians(); 3],
            p0_scale: [0.05; 3],
        }
    }
}

impl NoiseConfig {
    /// Densities and standard deviations must be finite and non-negative;
    /// time constants, gravity, γ and κ strictly positive.
    pub fn validate(&self) -> Result<(), ModelError> {
        let non_negative = [
            ("sigma_gyro", self.sigma_gyro),
            ("sigma_gyro_bias", self.sigma_gyro_bias),
            ("sigma_scale", self.sigma_scale),
            ("sigma_tilt", self.sigma_tilt),
            ("sigma_radar_nominal", self.sigma_radar_nominal),
            ("scale_excitation_gate", self.scale_excitation_gate),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(ModelError::InvalidNoise(format!("{name} = {v}")));
            }
        }
        let positive = [
            ("tau_gyro_bias", self.tau_gyro_bias),
            ("tau_scale", self.tau_scale),
            ("gamma", self.gamma),
            ("gravity", self.gravity),
            ("kappa", self.kappa),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(ModelError::InvalidNoise(format!("{name} = {v}")));
            }
        }
        let p0 = self
            .p0_position
            .iter()
            .chain(&self.p0_attitude)
            .chain(&self.p0_gyro_bias)
            .chain(&self.p0_scale);
        if p0.into_iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(ModelError::InvalidNoise("P0 entries must be >= 0".into()));
        }
        Ok(())
    }

    /// Zero process noise, for deterministic checks.
    pub fn noiseless() -> Self {
        Self {
            sigma_gyro: 0.0,
            sigma_gyro_bias: 0.0,
            sigma_scale: 0.0,
            ..Self::default()
        }
    }
}

/// Radar-frame ego velocity with its covariance and the consensus set.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoVelEstimate {
    pub velocity: Vec3,
    pub covariance: Matrix3<f64>,
    pub inliers: Vec<usize>,
}

/// Serde adapter for time constants that may be infinite. JSON has no
/// infinity, so non-finite values are written as the strings `"inf"`,
/// `"-inf"` and `"nan"`.
pub mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("expected a number or \"inf\", got \"{other}\""))),
            },
        }
    }
}
