use super::update::tilt_measurement;
use super::FilterError;
use crate::geom::{quat_from_euler, EulerAngles, UnitQuat, Vec3};
use crate::model::{ImuSample, NoiseConfig};

/// Lower bound on the stationarity gate, (rad/s)².
const MIN_VARIANCE_LIMIT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub gyro_bias: Vec3,
    /// Standard error of `gyro_bias`, rad/s.
    pub gyro_bias_sigma: Vec3,
    pub accel_bias: Vec3,
    pub roll: f64,
    pub pitch: f64,
    /// Standard error of roll and pitch from accelerometer noise, rad.
    pub tilt_sigma: f64,
}

impl Alignment {
    /// Initial attitude with zero yaw.
    pub fn attitude(&self) -> UnitQuat {
        quat_from_euler(&EulerAngles::new(self.roll, self.pitch, 0.0))
    }
}

/// Gyro bias, accelerometer bias and tilt from a stationary IMU window.
///
/// The gate rejects windows whose per-axis gyro sample variance exceeds
/// ten times the white-noise variance at the observed sample rate.
pub fn coarse_alignment(imu: &[ImuSample], noise: &NoiseConfig) -> Result<Alignment, FilterError> {
    let (first, last) = match (imu.first(), imu.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(FilterError::EmptyStream("imu")),
    };
    let n = imu.len();
    let duration = last.t - first.t;
    let required = 1.0;
    // n samples at rate r span (n − 1)/r; count the first sample's interval too.
    let span = if n > 1 { duration * n as f64 / (n - 1) as f64 } else { 0.0 };
    if n < 2 || span < required - 1e-9 {
        return Err(FilterError::WindowTooShort {
            duration: span,
            required,
        });
    }
    let rate = (n - 1) as f64 / duration;
    let inv = 1.0 / n as f64;
    let gyro_mean = imu.iter().map(|s| s.gyro).sum::<Vec3>() * inv;
    let accel_mean = imu.iter().map(|s| s.accel).sum::<Vec3>() * inv;
    let variance = imu
        .iter()
        .map(|s| (s.gyro - gyro_mean).map(|x| x * x))
        .sum::<Vec3>()
        / (n - 1) as f64;
    let limit = (10.0 * noise.sigma_gyro * noise.sigma_gyro * rate).max(MIN_VARIANCE_LIMIT);
    let worst = variance.max();
    if worst > limit {
        return Err(FilterError::NotStationary {
            variance: worst,
            limit,
        });
    }
    // Larger of the empirical and the modelled standard error of the mean.
    let modelled = noise.sigma_gyro / (n as f64 / rate).sqrt();
    let gyro_bias_sigma = variance.map(|v| (v / n as f64).sqrt().max(modelled));
    let accel_variance = imu
        .iter()
        .map(|s| (s.accel - accel_mean).map(|x| x * x))
        .sum::<Vec3>()
        / (n - 1) as f64;
    let horizontal = 0.5 * (accel_variance.x + accel_variance.y);
    let tilt_sigma = (horizontal / n as f64).sqrt() / accel_mean.norm().max(f64::EPSILON);
    let (roll, pitch) = tilt_measurement(&accel_mean, noise.gravity)?;
    let c_nb = quat_from_euler(&EulerAngles::new(roll, pitch, 0.0))
        .to_rot()
        .transpose();
    let accel_bias = accel_mean - c_nb * Vec3::new(0.0, 0.0, -noise.gravity);
    Ok(Alignment {
        gyro_bias: gyro_mean,
        gyro_bias_sigma,
        accel_bias,
        roll,
        pitch,
        tilt_sigma,
    })
}
