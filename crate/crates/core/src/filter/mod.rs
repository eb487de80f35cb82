//! Stochastic-cloning error-state EKF around the radar dead-reckoning
//! mechanization.
//!
//! The 18-dimensional error state is ordered
//! `(δp, δΨ, δb_g, δs_r, δp_clone, δΨ_clone)`. Vector errors follow
//! `δx = x̂ − x`; attitude errors follow `q = δq(δΨ) ⊗ q̂`.

mod align;
mod dynamics;
mod run;
mod update;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use align::{coarse_alignment, Alignment};
pub use dynamics::{
    assemble_error_dynamics, discretize_phi, gate_scale_columns, time_update, ErrorDynamics, PositionStep,
};
pub use run::{run, EpochDiagnostics, Init, RunOutput, TrajectoryPoint};
pub use update::{
    adaptive_tilt_sigma, compensate_accel, measurement_update, predicted_radar_displacement,
    range_residual, reclone, tilt_measurement, tilt_residual, tilt_update_model, UpdateReport,
};

pub use crate::mech::DrState;

use crate::egovel::RansacParams;
use crate::geom::{GeomError, UnitQuat, Vec3};
use crate::model::{ModelError, NoiseConfig};
use crate::scanmatch::IcpParams;

pub type Mat12 = SMatrix<f64, 12, 12>;
pub type Mat18 = SMatrix<f64, 18, 18>;
pub type Vec18 = SVector<f64, 18>;

/// Offsets into the 18-dimensional error state.
pub mod idx {
    pub const POS: usize = 0;
    pub const ATT: usize = 3;
    pub const BIAS: usize = 6;
    pub const SCALE: usize = 9;
    pub const CLONE_POS: usize = 12;
    pub const CLONE_ATT: usize = 15;
    pub const DR_DIM: usize = 12;
    pub const DIM: usize = 18;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("empty {0} stream")]
    EmptyStream(&'static str),
    #[error("window too short for coarse alignment: {duration} s (need >= {required} s)")]
    WindowTooShort { duration: f64, required: f64 },
    #[error("platform not stationary: gyro variance {variance:.3e} exceeds {limit:.3e}")]
    NotStationary { variance: f64, limit: f64 },
    #[error("specific force {norm} m/s² is too small for a tilt measurement")]
    FreeFall { norm: f64 },
    #[error("innovation covariance is singular (condition number {condition:.3e})")]
    SingularInnovation { condition: f64 },
    #[error("clone is stale: age {age} s exceeds {max_age} s")]
    StaleClone { age: f64, max_age: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Pose frozen at the last re-cloning epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloneState {
    pub position: Vec3,
    pub attitude: UnitQuat,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBelief {
    pub dr: DrState,
    pub clone: CloneState,
    pub cov: Mat18,
    /// Product of the DR transition matrices since the last re-clone.
    pub upsilon: Mat12,
    pub scan_count: usize,
    /// Accelerometer bias from coarse alignment; never estimated.
    pub accel_bias: Vec3,
    pub t: f64,
}

impl AugmentedBelief {
    /// Fresh belief with `P0` from `noise` and the clone taken at `t`.
    pub fn new(dr: DrState, accel_bias: Vec3, noise: &NoiseConfig, t: f64) -> Self {
        let mut p = Mat12::zeros();
        let blocks = [
            (idx::POS, noise.p0_position),
            (idx::ATT, noise.p0_attitude),
            (idx::BIAS, noise.p0_gyro_bias),
            (idx::SCALE, noise.p0_scale),
        ];
        for (offset, sigmas) in blocks {
            for (i, s) in sigmas.iter().enumerate() {
                p[(offset + i, offset + i)] = s * s;
            }
        }
        let mut belief = Self {
            dr,
            clone: CloneState {
                position: dr.position,
                attitude: dr.attitude,
                t,
            },
            cov: Mat18::zeros(),
            upsilon: Mat12::identity(),
            scan_count: 0,
            accel_bias,
            t,
        };
        belief.cov.fixed_view_mut::<12, 12>(0, 0).copy_from(&p);
        reclone(&mut belief);
        belief
    }

    pub fn dr_cov(&self) -> Mat12 {
        self.cov.fixed_view::<12, 12>(0, 0).into_owned()
    }

    /// Largest |P − Pᵀ| entry.
    pub fn asymmetry(&self) -> f64 {
        (self.cov - self.cov.transpose()).amax()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let sym = 0.5 * (self.cov + self.cov.transpose());
        sym.symmetric_eigen().eigenvalues.min()
    }
}

/// Error-state vector split into its named parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorState(pub Vec18);

impl ErrorState {
    pub fn position(&self) -> Vec3 {
        self.0.fixed_rows::<3>(idx::POS).into_owned()
    }
    pub fn attitude(&self) -> Vec3 {
        self.0.fixed_rows::<3>(idx::ATT).into_owned()
    }
    pub fn gyro_bias(&self) -> Vec3 {
        self.0.fixed_rows::<3>(idx::BIAS).into_owned()
    }
    pub fn scale(&self) -> Vec3 {
        self.0.fixed_rows::<3>(idx::SCALE).into_owned()
    }
    pub fn clone_position(&self) -> Vec3 {
        self.0.fixed_rows::<3>(idx::CLONE_POS).into_owned()
    }
    pub fn clone_attitude(&self) -> Vec3 {
        self.0.fixed_rows::<3>(idx::CLONE_ATT).into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Full,
    /// Scale factor frozen at 1.
    NoScale,
    NoTilt,
    NoIcp,
    /// No measurement updates at all.
    DrOnly,
}

impl Mode {
    /// Ablation label used in file names and logs.
    pub fn label(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoScale => "no-scale",
            Mode::NoTilt => "no-tilt",
            Mode::NoIcp => "no-icp",
            Mode::DrOnly => "dr-only",
        }
    }

    pub fn uses_icp(self) -> bool {
        matches!(self, Mode::Full | Mode::NoScale | Mode::NoTilt)
    }
    pub fn uses_tilt(self) -> bool {
        matches!(self, Mode::Full | Mode::NoScale | Mode::NoIcp)
    }
    pub fn estimates_scale(self) -> bool {
        !matches!(self, Mode::NoScale)
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Mode::Full),
            "no-scale" => Ok(Mode::NoScale),
            "no-tilt" => Ok(Mode::NoTilt),
            "no-icp" => Ok(Mode::NoIcp),
            "dr-only" => Ok(Mode::DrOnly),
            other => Err(format!(
                "unknown mode '{other}' (expected full, no-scale, no-tilt, no-icp, dr-only)"
            )),
        }
    }
}

/// Position integration over a radar period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Integration {
    ZeroOrderHold,
    /// Mean of the body velocities at the two bounding radar epochs.
    #[default]
    Trapezoidal,
}

/// Which accelerometer reading feeds the tilt update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TiltSource {
    /// The IMU sample nearest to the radar epoch.
    Nearest,
    /// Specific force averaged over the radar period in the navigation
    /// frame and expressed in the current body frame.
    #[default]
    IntervalMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub noise: NoiseConfig,
    pub ransac: RansacParams,
    pub icp: IcpParams,
    /// Scans between ICP updates (window size M).
    pub window: usize,
    pub mode: Mode,
    /// Stationary lead-in used for coarse alignment, s.
    pub alignment_duration: f64,
    pub scale_bounds: (f64, f64),
    /// Radar gaps longer than this are flagged and inflate the covariance, s.
    pub max_gap: f64,
    pub tilt_source: TiltSource,
    pub integration: Integration,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            noise: NoiseConfig::default(),
            ransac: RansacParams::default(),
            icp: IcpParams::default(),
            window: 3,
            mode: Mode::Full,
            alignment_duration: 1.0,
            scale_bounds: (0.5, 1.5),
            max_gap: 1.0,
            tilt_source: TiltSource::default(),
            integration: Integration::default(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        self.noise.validate()?;
        if self.window < 1 {
            return Err(FilterError::Config("window must be >= 1".into()));
        }
        let (lo, hi) = self.scale_bounds;
        if !(lo > 0.0 && lo < 1.0 && hi > 1.0) {
            return Err(FilterError::Config(format!(
                "scale bounds ({lo}, {hi}) must bracket 1"
            )));
        }
        if self.ransac.max_iterations < 1
            || !(self.ransac.inlier_threshold > 0.0)
            || !(self.ransac.min_inlier_ratio > 0.0 && self.ransac.min_inlier_ratio <= 1.0)
        {
            return Err(FilterError::Config("invalid RANSAC parameters".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_belief_is_cloned() {
        let b = AugmentedBelief::new(DrState::default(), Vec3::zeros(), &NoiseConfig::default(), 0.0);
        let pose = b.cov.fixed_view::<6, 6>(0, 0).into_owned();
        assert_eq!(b.cov.fixed_view::<6, 6>(12, 12).into_owned(), pose);
        assert_eq!(b.cov.fixed_view::<6, 6>(0, 12).into_owned(), pose);
        assert_eq!(b.upsilon, Mat12::identity());
        assert_eq!(b.asymmetry(), 0.0);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("dr-only".parse::<Mode>(), Ok(Mode::DrOnly));
        assert!("bogus".parse::<Mode>().is_err());
        let json = serde_json::to_string(&Mode::NoScale).unwrap();
        assert_eq!(json, "\"no-scale\"");
        assert!(!Mode::DrOnly.uses_icp() && !Mode::DrOnly.uses_tilt());
    }

    #[test]
    fn config_validation() {
        assert!(FilterConfig::default().validate().is_ok());
        let bad = FilterConfig {
            window: 0,
            ..FilterConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
