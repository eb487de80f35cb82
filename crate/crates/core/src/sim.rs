//! Synthetic ground truth and sensor streams.
//!
//! Trajectories are driven by a phase `φ(t)` along a closed planar curve
//! `P(φ)`: stationary lead-in, C¹ smoothstep ramp of `φ̇`, cruise, and a
//! symmetric ramp-down, so position is C² and the specific force is
//! continuous. Heading follows the curve tangent, so it is defined at rest.
//!
//! Gyro samples carry the constant rate that reproduces the truth attitude
//! increment over their interval exactly.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{quat_from_euler, quat_integrate, EulerAngles, UnitQuat, Vec3};
use crate::model::{validate_extrinsics, Extrinsics, ImuSample, ModelError, NoiseConfig, RadarScan, RadarTarget};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid trajectory profile: {0}")]
    InvalidProfile(String),
    #[error("invalid simulation setting: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    /// `(r sin φ, r (1 − cos φ))`, radius `size`.
    Circle,
    /// Lemniscate of Gerono `(A sin φ, ½A sin 2φ)`, `A = size`.
    Figure8,
    /// Closed periodic cubic spline through waypoints scaled by `size`.
    WaypointSpline,
    Stationary,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "circle" => Ok(Self::Circle),
            "figure8" => Ok(Self::Figure8),
            "waypoint-spline" => Ok(Self::WaypointSpline),
            "stationary" => Ok(Self::Stationary),
            other => Err(format!(
                "unknown profile '{other}' (expected circle, figure8, waypoint-spline, stationary)"
            )),
        }
    }
}

/// Gravity used to convert lateral acceleration to a bank angle, m/s².
const BANK_GRAVITY: f64 = 9.81;

/// Default loop for the waypoint spline, in units of `size`.
pub const OFFICE_LOOP: [[f64; 2]; 10] = [
    [0.0, 0.0],
    [1.0, 0.0],
    [2.0, 0.05],
    [2.4, 0.4],
    [2.4, 1.0],
    [2.0, 1.35],
    [1.0, 1.4],
    [0.2, 1.3],
    [-0.3, 0.9],
    [-0.3, 0.3],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryProfile {
    pub kind: TrajectoryKind,
    /// Total duration including the stationary lead-in, s.
    pub duration: f64,
    /// Nominal cruise speed, m/s. Closed curves round to a whole number
    /// of loops, which adjusts the speed slightly.
    pub speed: f64,
    pub size: f64,
    /// Master seed for environment and sensor noise.
    pub seed: u64,
    pub stationary_lead: f64,
    /// Duration of each speed ramp, s.
    pub ramp: f64,
    /// Amplitude of the vertical undulation `z = −h sin 2φ`, m.
    pub vertical_amplitude: f64,
    /// Yaw oscillation amplitude while moving, rad.
    pub yaw_sway: f64,
    pub sway_period: f64,
    /// Roll per unit of lateral acceleration angle, saturating at `max_roll`.
    pub bank_gain: f64,
    pub max_roll: f64,
    pub imu_rate: f64,
    /// Overrides [`OFFICE_LOOP`] for the spline profile.
    pub waypoints: Option<Vec<[f64; 2]>>,
}

impl Default for TrajectoryProfile {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Figure8,
            duration: 60.0,
            speed: 3.0,
            size: 10.0,
            seed: 0,
            stationary_lead: 2.0,
            ramp: 2.0,
            vertical_amplitude: 0.0,
            yaw_sway: 0.0,
            sway_period: 4.0,
            bank_gain: 0.5,
            max_roll: 10f64.to_radians(),
            imu_rate: 400.0,
            waypoints: None,
        }
    }
}

impl TrajectoryProfile {
    pub fn new(kind: TrajectoryKind, duration: f64, speed: f64, size: f64) -> Self {
        Self {
            kind,
            duration,
            speed,
            size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidProfile(m));
        if !(self.duration > 0.0) {
            return bad(format!("duration {} must be > 0", self.duration));
        }
        if !(self.imu_rate > 0.0) {
            return bad(format!("imu_rate {} must be > 0", self.imu_rate));
        }
        if self.kind == TrajectoryKind::Stationary {
            return Ok(());
        }
        if !(self.speed > 0.0) || !(self.size > 0.0) {
            return bad("speed and size must be > 0".into());
        }
        if !(self.stationary_lead >= 0.0) || !(self.ramp >= 0.0) {
            return bad("stationary_lead and ramp must be >= 0".into());
        }
        if self.duration - self.stationary_lead < 2.0 * self.ramp || self.duration <= self.stationary_lead {
            return bad("duration too short for lead-in and ramps".into());
        }
        if self.yaw_sway != 0.0 && !(self.sway_period > 0.0) {
            return bad("sway_period must be > 0".into());
        }
        if !(self.max_roll >= 0.0 && self.max_roll < std::f64::consts::FRAC_PI_2) {
            return bad("max_roll must be in [0, 90°)".into());
        }
        if let Some(wp) = &self.waypoints {
            if wp.len() < 3 {
                return bad("at least 3 waypoints required".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub position: Vec3,
    pub attitude: UnitQuat,
    pub velocity: Vec3,
    /// Instantaneous body angular rate, rad/s.
    pub omega: Vec3,
    /// Linear acceleration in the navigation frame, m/s².
    pub accel: Vec3,
}

/// Closed periodic cubic spline with unit knot spacing.
#[derive(Debug, Clone)]
struct PeriodicSpline {
    points: Vec<Vec3>,
    second: Vec<Vec3>,
}

impl PeriodicSpline {
    fn new(points: Vec<Vec3>) -> Self {
        let n = points.len();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            a[(i, (i + n - 1) % n)] += 1.0;
            a[(i, i)] += 4.0;
            a[(i, (i + 1) % n)] += 1.0;
        }
        let lu = a.lu();
        let mut second = vec![Vec3::zeros(); n];
        for axis in 0..3 {
            let rhs = DVector::from_fn(n, |i, _| {
                6.0 * (points[(i + 1) % n][axis] - 2.0 * points[i][axis] + points[(i + n - 1) % n][axis])
            });
            let m = lu.solve(&rhs).expect("cyclic spline system is diagonally dominant");
            for i in 0..n {
                second[i][axis] = m[i];
            }
        }
        Self { points, second }
    }

    /// Value and first two derivatives at `u ∈ ℝ` (periodic in `n`).
    fn eval(&self, u: f64) -> (Vec3, Vec3, Vec3) {
        let n = self.points.len();
        let u = u.rem_euclid(n as f64);
        let i = (u.floor() as usize).min(n - 1);
        let t = u - i as f64;
        let j = (i + 1) % n;
        let (y0, y1) = (self.points[i], self.points[j]);
        let (m0, m1) = (self.second[i], self.second[j]);
        let s = 1.0 - t;
        let p = m0 * (s * s * s / 6.0) + m1 * (t * t * t / 6.0) + (y0 - m0 / 6.0) * s + (y1 - m1 / 6.0) * t;
        let d1 = -m0 * (s * s / 2.0) + m1 * (t * t / 2.0) + (y1 - y0) - (m1 - m0) / 6.0;
        let d2 = m0 * s + m1 * t;
        (p, d1, d2)
    }
}

#[derive(Debug, Clone)]
enum Shape {
    Stationary,
    Circle(f64),
    Figure8(f64),
    Spline(PeriodicSpline),
}

impl Shape {
    /// `P(φ)`, `dP/dφ`, `d²P/dφ²` of the planar part.
    fn eval(&self, phi: f64) -> (Vec3, Vec3, Vec3) {
        match self {
            Shape::Stationary => (Vec3::zeros(), Vec3::x(), Vec3::zeros()),
            Shape::Circle(r) => {
                let (s, c) = phi.sin_cos();
                (
                    Vec3::new(r * s, r * (1.0 - c), 0.0),
                    Vec3::new(r * c, r * s, 0.0),
                    Vec3::new(-r * s, r * c, 0.0),
                )
            }
            Shape::Figure8(a) => {
                let (s, c) = phi.sin_cos();
                let (s2, c2) = (2.0 * phi).sin_cos();
                (
                    Vec3::new(a * s, 0.5 * a * s2, 0.0),
                    Vec3::new(a * c, a * c2, 0.0),
                    Vec3::new(-a * s, -2.0 * a * s2, 0.0),
                )
            }
            Shape::Spline(sp) => {
                let k = sp.points.len() as f64 / std::f64::consts::TAU;
                let (p, d1, d2) = sp.eval(phi * k);
                (p, d1 * k, d2 * k * k)
            }
        }
    }
}

/// Phase schedule: `(φ, φ̇, φ̈)` as a function of time.
#[derive(Debug, Clone, Copy)]
struct Phase {
    lead: f64,
    ramp: f64,
    end: f64,
    rate: f64,
}

impl Phase {
    fn total(&self) -> f64 {
        self.rate * (self.end - self.lead - self.ramp)
    }

    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let w = self.rate;
        if w == 0.0 || t < self.lead {
            return (0.0, 0.0, 0.0);
        }
        let r = self.ramp;
        let smooth = |x: f64| (3.0 * x * x - 2.0 * x * x * x, 6.0 * x - 6.0 * x * x, x * x * x - 0.5 * x * x * x * x);
        if r > 0.0 && t < self.lead + r {
            let (h, dh, ih) = smooth((t - self.lead) / r);
            return (w * r * ih, w * h, w * dh / r);
        }
        if r > 0.0 && t > self.end - r {
            let (h, dh, ih) = smooth(((self.end - t) / r).max(0.0));
            return (self.total() - w * r * ih, w * h, -w * dh / r);
        }
        let t = t.min(self.end);
        (w * (0.5 * r + t - self.lead - r), w, 0.0)
    }
}

struct Kinematics {
    shape: Shape,
    phase: Phase,
    profile: TrajectoryProfile,
}

impl Kinematics {
    fn new(profile: &TrajectoryProfile) -> Self {
        let shape = match profile.kind {
            TrajectoryKind::Stationary => Shape::Stationary,
            TrajectoryKind::Circle => Shape::Circle(profile.size),
            TrajectoryKind::Figure8 => Shape::Figure8(profile.size),
            TrajectoryKind::WaypointSpline => {
                let wp = profile.waypoints.clone().unwrap_or_else(|| OFFICE_LOOP.to_vec());
                Shape::Spline(PeriodicSpline::new(
                    wp.iter().map(|p| Vec3::new(p[0], p[1], 0.0) * profile.size).collect(),
                ))
            }
        };
        let mut kin = Self {
            shape,
            phase: Phase {
                lead: profile.stationary_lead,
                ramp: profile.ramp,
                end: profile.duration,
                rate: 0.0,
            },
            profile: profile.clone(),
        };
        let motion = profile.duration - profile.stationary_lead - profile.ramp;
        kin.phase.rate = match &kin.shape {
            Shape::Stationary => 0.0,
            Shape::Circle(r) => profile.speed / r,
            _ => {
                let loop_length = kin.loop_length();
                let loops = (profile.speed * motion / loop_length).round().max(1.0);
                std::f64::consts::TAU * loops / motion
            }
        };
        kin
    }

    fn loop_length(&self) -> f64 {
        let n = 4096;
        let h = std::f64::consts::TAU / n as f64;
        (0..n).map(|i| self.curve(i as f64 * h).1.norm() * h).sum()
    }

    /// Curve including the vertical undulation.
    fn curve(&self, phi: f64) -> (Vec3, Vec3, Vec3) {
        let (mut p, mut d1, mut d2) = self.shape.eval(phi);
        let h = self.profile.vertical_amplitude;
        if h != 0.0 {
            let (s2, c2) = (2.0 * phi).sin_cos();
            p.z -= h * s2;
            d1.z -= 2.0 * h * c2;
            d2.z += 4.0 * h * s2;
        }
        (p, d1, d2)
    }

    /// Position, velocity, acceleration and attitude at `t`.
    fn state(&self, t: f64) -> (Vec3, Vec3, Vec3, UnitQuat) {
        let (phi, dphi, ddphi) = self.phase.eval(t);
        let (p, d1, d2) = self.curve(phi);
        let v = d1 * dphi;
        let a = d2 * dphi * dphi + d1 * ddphi;
        let prof = &self.profile;
        let envelope = if self.phase.rate > 0.0 { dphi / self.phase.rate } else { 0.0 };
        let heading = d1.y.atan2(d1.x);
        let sway = if prof.yaw_sway != 0.0 {
            prof.yaw_sway * envelope * (std::f64::consts::TAU * t / prof.sway_period).sin()
        } else {
            0.0
        };
        let yaw = heading + sway;
        let pitch = (-d1.z).atan2(d1.x.hypot(d1.y));
        let roll = if prof.max_roll > 0.0 && prof.bank_gain != 0.0 {
            let lateral = -yaw.sin() * a.x + yaw.cos() * a.y;
            let bank = prof.bank_gain * (lateral / BANK_GRAVITY).atan();
            prof.max_roll * (bank / prof.max_roll).tanh()
        } else {
            0.0
        };
        (p, v, a, quat_from_euler(&EulerAngles::new(roll, pitch, yaw)))
    }
}

/// Body rate from the attitude at `t ± h`.
fn central_rate(kin: &Kinematics, t: f64) -> Vec3 {
    let h = 1e-4;
    let q0 = kin.state(t - h).3;
    let q1 = kin.state(t + h).3;
    (q0.conj() * q1).to_rotation_vector() / (2.0 * h)
}

/// Truth at the IMU rate, samples `t_i = i / imu_rate` for `i = 0..=N`.
pub fn gen_trajectory(profile: &TrajectoryProfile) -> Result<Vec<TruthSample>, SimError> {
    profile.validate()?;
    let kin = Kinematics::new(profile);
    let n = (profile.duration * profile.imu_rate).round() as usize;
    Ok((0..=n)
        .map(|i| {
            let t = i as f64 / profile.imu_rate;
            let (position, velocity, accel, attitude) = kin.state(t);
            let omega = if kin.phase.rate == 0.0 { Vec3::zeros() } else { central_rate(&kin, t) };
            TruthSample {
                t,
                position,
                attitude,
                velocity,
                omega,
                accel,
            }
        })
        .collect())
}

/// IMU error model. Noise terms are continuous-time densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuErrorModel {
    /// Initial gyro bias, rad/s.
    pub gyro_bias: [f64; 3],
    pub accel_bias: [f64; 3],
    /// Gyro white noise, rad/s/√Hz.
    pub sigma_gyro: f64,
    /// Accelerometer white noise, m/s²/√Hz.
    pub sigma_accel: f64,
    /// Gyro bias driving noise, rad/s/√s.
    pub sigma_gyro_bias: f64,
    /// Markov time constant of the gyro bias; infinite for a random walk.
    #[serde(with = "crate::model::extended_f64")]
    pub tau_gyro_bias: f64,
    pub gravity: f64,
}

impl Default for ImuErrorModel {
    fn default() -> Self {
        Self::noiseless()
    }
}

impl ImuErrorModel {
    pub fn noiseless() -> Self {
        Self {
            gyro_bias: [0.0; 3],
            accel_bias: [0.0; 3],
            sigma_gyro: 0.0,
            sigma_accel: 0.0,
            sigma_gyro_bias: 0.0,
            tau_gyro_bias: f64::INFINITY,
            gravity: 9.81,
        }
    }

    /// Consumer MEMS unit.
    pub fn office_grade() -> Self {
        Self {
            gyro_bias: [0.002, -0.003, 0.0015],
            accel_bias: [0.02, -0.015, 0.03],
            sigma_gyro: 1.5e-4,
            sigma_accel: 2e-3,
            sigma_gyro_bias: 2e-6,
            tau_gyro_bias: 1000.0,
            gravity: 9.81,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let ok = [self.sigma_gyro, self.sigma_accel, self.sigma_gyro_bias]
            .iter()
            .all(|s| *s >= 0.0 && s.is_finite())
            && self.tau_gyro_bias > 0.0
            && self.gravity > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(format!("IMU error model {self:?}")))
        }
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// IMU samples and the true gyro bias at each sample.
///
/// The gyro carries the interval-equivalent rate `log(q_{i−1}⁻¹ q_i) / dt`
/// plus bias and noise; sample 0 carries the instantaneous rate.
pub fn synth_imu(
    truth: &[TruthSample],
    model: &ImuErrorModel,
    seed: u64,
) -> Result<(Vec<ImuSample>, Vec<Vec3>), SimError> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gravity = Vec3::new(0.0, 0.0, model.gravity);
    let mut bias = Vec3::from(model.gyro_bias);
    let accel_bias = Vec3::from(model.accel_bias);
    let mut samples = Vec::with_capacity(truth.len());
    let mut biases = Vec::with_capacity(truth.len());
    for (i, s) in truth.iter().enumerate() {
        let dt = if i > 0 { s.t - truth[i - 1].t } else { 0.0 };
        if i > 0 && model.sigma_gyro_bias > 0.0 {
            let decay = (-dt / model.tau_gyro_bias).exp();
            let var = if model.tau_gyro_bias.is_finite() {
                0.5 * model.tau_gyro_bias * (1.0 - decay * decay)
            } else {
                dt
            };
            bias = bias * decay + gauss(&mut rng) * (model.sigma_gyro_bias * var.sqrt());
        } else if i > 0 {
            bias *= (-dt / model.tau_gyro_bias).exp();
        }
        let rate = if i > 0 {
            (truth[i - 1].attitude.conj() * s.attitude).to_rotation_vector() / dt
        } else {
            s.omega
        };
        let per_sample = if dt > 0.0 { 1.0 / dt } else if truth.len() > 1 { 1.0 / (truth[1].t - truth[0].t) } else { 1.0 };
        let gyro_noise = gauss(&mut rng) * (model.sigma_gyro * per_sample.sqrt());
        let accel_noise = gauss(&mut rng) * (model.sigma_accel * per_sample.sqrt());
        let f = s.attitude.conj().rotate(&(s.accel - gravity));
        samples.push(ImuSample {
            t: s.t,
            gyro: rate + bias + gyro_noise,
            accel: f + accel_bias + accel_noise,
        });
        biases.push(bias);
    }
    Ok((samples, biases))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvironmentParams {
    /// Landmarks per square metre of the padded trajectory footprint.
    pub density: f64,
    pub min_landmarks: usize,
    /// Horizontal padding around the trajectory, m.
    pub margin: f64,
    /// Landmark height band relative to the mean trajectory height (NED z), m.
    pub z_range: (f64, f64),
    pub fov_half_angle_deg: f64,
    pub max_range: f64,
    pub max_targets: usize,
    pub dropout: f64,
}

impl Default for EnvironmentParams {
    fn default() -> Self {
        Self {
            density: 0.15,
            min_landmarks: 200,
            margin: 15.0,
            z_range: (-3.0, 1.5),
            fov_half_angle_deg: 60.0,
            max_range: 30.0,
            max_targets: 60,
            dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEnvironment {
    pub landmarks: Vec<Vec3>,
    pub fov_half_angle_deg: f64,
    pub max_range: f64,
    pub max_targets: usize,
    pub dropout: f64,
}

impl SimEnvironment {
    /// Uniform random landmarks over the padded footprint of `truth`.
    pub fn generate(truth: &[TruthSample], params: &EnvironmentParams, seed: u64) -> Result<Self, SimError> {
        if truth.is_empty() {
            return Err(SimError::InvalidConfig("empty truth".into()));
        }
        if !(params.dropout >= 0.0 && params.dropout < 1.0) || !(params.max_range > 0.0) {
            return Err(SimError::InvalidConfig("dropout in [0,1) and max_range > 0 required".into()));
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        let mut z_mean = 0.0;
        for s in truth {
            lo = lo.inf(&s.position);
            hi = hi.sup(&s.position);
            z_mean += s.position.z;
        }
        z_mean /= truth.len() as f64;
        let (x0, x1) = (lo.x - params.margin, hi.x + params.margin);
        let (y0, y1) = (lo.y - params.margin, hi.y + params.margin);
        let area = (x1 - x0) * (y1 - y0);
        let count = ((params.density * area).round() as usize).max(params.min_landmarks).max(50);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (z0, z1) = params.z_range;
        let landmarks = (0..count)
            .map(|_| {
                Vec3::new(
                    rng.random_range(x0..x1),
                    rng.random_range(y0..y1),
                    z_mean + z0 + (z1 - z0) * rng.random::<f64>(),
                )
            })
            .collect();
        Ok(Self {
            landmarks,
            fov_half_angle_deg: params.fov_half_angle_deg,
            max_range: params.max_range,
            max_targets: params.max_targets,
            dropout: params.dropout,
        })
    }

    /// Landmarks as seen from a radar at `p_radar` with orientation `c_nr`
    /// (radar to navigation frame), restricted to the field of view.
    fn visible(&self, p_radar: &Vec3, c_nr: &nalgebra::Matrix3<f64>) -> Vec<Vec3> {
        let tan_fov = self.fov_half_angle_deg.to_radians().tan();
        let mut pts: Vec<Vec3> = self
            .landmarks
            .iter()
            .map(|l| c_nr.transpose() * (l - p_radar))
            .filter(|p| {
                let r = p.norm();
                p.x > 0.0 && r > 0.1 && r <= self.max_range && p.y.abs() <= tan_fov * p.x && (-p.z).abs() <= tan_fov * p.x.hypot(p.y)
            })
            .collect();
        pts.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        pts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadarModel {
    /// True per-axis scale factor of the ego-velocity.
    pub scale: [f64; 3],
    pub sigma_doppler: f64,
    pub outlier_rate: f64,
    /// Per-axis point position noise, m.
    pub sigma_point: f64,
    pub rate: f64,
}

impl Default for RadarModel {
    fn default() -> Self {
        Self::noiseless()
    }
}

impl RadarModel {
    pub fn noiseless() -> Self {
        Self {
            scale: [1.0; 3],
            sigma_doppler: 0.0,
            outlier_rate: 0.0,
            sigma_point: 0.0,
            rate: 10.0,
        }
    }

    pub fn realistic() -> Self {
        Self {
            scale: [1.0; 3],
            sigma_doppler: 0.05,
            outlier_rate: 0.1,
            sigma_point: 0.02,
            rate: 10.0,
        }
    }
}

/// Outlier Doppler corruption magnitude range, m/s.
pub const OUTLIER_DOPPLER: (f64, f64) = (0.5, 5.0);

/// Radar velocity in the radar frame from body truth.
pub fn radar_velocity(sample: &TruthSample, ext: &Extrinsics) -> Vec3 {
    let v_body = sample.attitude.conj().rotate(&sample.velocity);
    ext.rot_b_r() * (v_body + sample.omega.cross(&ext.p_r_b))
}

/// Scans at `model.rate`, on truth samples whose index is a multiple of
/// `imu_rate / radar_rate`. Epochs without visible landmarks are emitted
/// with no targets.
pub fn synth_radar(
    truth: &[TruthSample],
    env: &SimEnvironment,
    model: &RadarModel,
    ext: &Extrinsics,
    seed: u64,
) -> Result<Vec<RadarScan>, SimError> {
    if truth.len() < 2 {
        return Err(SimError::InvalidConfig("truth needs at least two samples".into()));
    }
    if !(model.rate > 0.0) || model.scale.iter().any(|s| !(*s > 0.0)) || !(0.0..1.0).contains(&model.outlier_rate) {
        return Err(SimError::InvalidConfig(format!("radar model {model:?}")));
    }
    let truth_rate = (truth.len() - 1) as f64 / (truth[truth.len() - 1].t - truth[0].t);
    let ratio = truth_rate / model.rate;
    let step = ratio.round() as usize;
    if step == 0 || (ratio - step as f64).abs() > 1e-6 {
        return Err(SimError::InvalidConfig(format!(
            "truth rate {truth_rate} is not a multiple of the radar rate {}",
            model.rate
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inv_scale = Vec3::from(model.scale).map(|s| 1.0 / s);
    let c_rb = ext.rot_r_b();
    let scans = truth
        .iter()
        .step_by(step)
        .map(|s| {
            let v_r = radar_velocity(s, ext);
            let v_meas = v_r.component_mul(&inv_scale);
            let c_bn = s.attitude.to_rot();
            let p_radar = s.position + c_bn * ext.p_r_b;
            let mut targets = Vec::new();
            for p in env.visible(&p_radar, &(c_bn * c_rb)) {
                if targets.len() >= env.max_targets {
                    break;
                }
                if env.dropout > 0.0 && rng.random_bool(env.dropout) {
                    continue;
                }
                let u = p / p.norm();
                let mut doppler = -u.dot(&v_meas);
                if model.sigma_doppler > 0.0 {
                    doppler += model.sigma_doppler * rng.sample::<f64, _>(StandardNormal);
                }
                if model.outlier_rate > 0.0 && rng.random_bool(model.outlier_rate) {
                    let magnitude = rng.random_range(OUTLIER_DOPPLER.0..OUTLIER_DOPPLER.1);
                    doppler += if rng.random_bool(0.5) { magnitude } else { -magnitude };
                }
                let position = if model.sigma_point > 0.0 { p + gauss(&mut rng) * model.sigma_point } else { p };
                let power = 40.0 - 20.0 * p.norm().log10();
                targets.push(RadarTarget {
                    position,
                    doppler,
                    power,
                });
            }
            RadarScan { t: s.t, targets }
        })
        .collect();
    Ok(scans)
}

/// Everything needed to generate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub profile: TrajectoryProfile,
    pub imu: ImuErrorModel,
    pub radar: RadarModel,
    pub environment: EnvironmentParams,
    /// Radar-to-body rotation `q_b^r`, `[w, x, y, z]`.
    pub q_b_r: [f64; 4],
    /// Radar position in the body frame, m.
    pub p_r_b: [f64; 3],
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            profile: TrajectoryProfile::default(),
            imu: ImuErrorModel::noiseless(),
            radar: RadarModel::noiseless(),
            environment: EnvironmentParams::default(),
            q_b_r: [1.0, 0.0, 0.0, 0.0],
            p_r_b: [0.0; 3],
        }
    }
}

impl SimConfig {
    /// Filter noise settings consistent with this simulation.
    pub fn matched_noise(&self) -> NoiseConfig {
        let imu = &self.imu;
        let mut noise = NoiseConfig {
            sigma_gyro: imu.sigma_gyro,
            sigma_gyro_bias: imu.sigma_gyro_bias,
            gravity: imu.gravity,
            sigma_radar_nominal: self.radar.sigma_doppler.max(NoiseConfig::default().sigma_radar_nominal),
            ..NoiseConfig::default()
        };
        if imu.tau_gyro_bias.is_finite() {
            noise.tau_gyro_bias = imu.tau_gyro_bias;
        }
        if imu.sigma_gyro == 0.0 && imu.sigma_gyro_bias == 0.0 {
            noise.sigma_scale = 0.0;
        }
        noise
    }
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub truth: Vec<TruthSample>,
    pub gyro_bias: Vec<Vec3>,
    pub imu: Vec<ImuSample>,
    pub radar: Vec<RadarScan>,
    pub ext: Extrinsics,
    pub config: SimConfig,
}

impl SimDataset {
    /// Truth sample with timestamp closest to `t`.
    pub fn truth_at(&self, t: f64) -> &TruthSample {
        let i = self.truth.partition_point(|s| s.t < t);
        let candidates = [i.saturating_sub(1), i.min(self.truth.len() - 1)];
        let j = candidates
            .into_iter()
            .min_by(|a, b| (self.truth[*a].t - t).abs().total_cmp(&(self.truth[*b].t - t).abs()))
            .unwrap_or(0);
        &self.truth[j]
    }
}

/// Generates truth, IMU and radar streams from one master seed.
pub fn simulate(cfg: &SimConfig) -> Result<SimDataset, SimError> {
    let ext = validate_extrinsics(cfg.q_b_r, Vec3::from(cfg.p_r_b))?;
    let truth = gen_trajectory(&cfg.profile)?;
    let seed = cfg.profile.seed;
    let env = SimEnvironment::generate(&truth, &cfg.environment, seed.wrapping_mul(3).wrapping_add(1))?;
    let (imu, gyro_bias) = synth_imu(&truth, &cfg.imu, seed.wrapping_mul(3).wrapping_add(2))?;
    let radar = synth_radar(&truth, &env, &cfg.radar, &ext, seed.wrapping_mul(3).wrapping_add(3))?;
    Ok(SimDataset {
        truth,
        gyro_bias,
        imu,
        radar,
        ext,
        config: cfg.clone(),
    })
}

/// Reference attitude integration of the gyro stream with a known bias.
pub fn integrate_truth_gyro(imu: &[ImuSample], q0: UnitQuat) -> Vec<UnitQuat> {
    let mut q = q0;
    let mut out = Vec::with_capacity(imu.len());
    out.push(q);
    for w in imu.windows(2) {
        q = quat_integrate(&q, &w[1].gyro, w[1].t - w[0].t);
        out.push(q);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::egovel::{ransac_ego_velocity, RansacParams};

    fn profile(kind: TrajectoryKind) -> TrajectoryProfile {
        TrajectoryProfile::new(kind, 60.0, 3.0, 10.0)
    }

    #[test]
    fn stationary_truth_is_still() {
        let truth = gen_trajectory(&profile(TrajectoryKind::Stationary)).unwrap();
        for s in &truth {
            assert_eq!(s.velocity, Vec3::zeros());
            assert_eq!(s.omega, Vec3::zeros());
            assert_eq!(s.accel, Vec3::zeros());
        }
    }

    #[test]
    fn circle_centripetal_acceleration() {
        let mut p = profile(TrajectoryKind::Circle);
        p.stationary_lead = 0.0;
        p.ramp = 0.0;
        p.max_roll = 0.0;
        let truth = gen_trajectory(&p).unwrap();
        for s in &truth {
            assert!((s.velocity.norm() - 3.0).abs() < 1e-12);
            assert!((s.accel.norm() - 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn figure8_closes() {
        let truth = gen_trajectory(&profile(TrajectoryKind::Figure8)).unwrap();
        let (a, b) = (truth.first().unwrap(), truth.last().unwrap());
        assert!((a.position - b.position).norm() < 1e-9);
        assert!(b.velocity.norm() < 1e-12);
    }

    #[test]
    fn spline_closes_and_is_kinematically_consistent() {
        let mut p = profile(TrajectoryKind::WaypointSpline);
        p.vertical_amplitude = 0.3;
        let truth = gen_trajectory(&p).unwrap();
        assert!((truth[0].position - truth.last().unwrap().position).norm() < 1e-9);
        for w in truth.windows(3) {
            let dt = w[2].t - w[0].t;
            let fd_v = (w[2].position - w[0].position) / dt;
            assert!((fd_v - w[1].velocity).norm() < 1e-4);
            let fd_a = (w[2].velocity - w[0].velocity) / dt;
            assert!((fd_a - w[1].accel).norm() < 2e-2);
        }
    }

    #[test]
    fn stationary_imu_reads_gravity() {
        let truth = gen_trajectory(&profile(TrajectoryKind::Stationary)).unwrap();
        let (imu, _) = synth_imu(&truth, &ImuErrorModel::noiseless(), 1).unwrap();
        for s in &imu {
            assert_eq!(s.gyro, Vec3::zeros());
            assert!((s.accel - Vec3::new(0.0, 0.0, -9.81)).norm() < 1e-12);
        }
    }

    #[test]
    fn constant_gyro_bias() {
        let truth = gen_trajectory(&profile(TrajectoryKind::Circle)).unwrap();
        let model = ImuErrorModel {
            gyro_bias: [0.01, 0.0, 0.0],
            ..ImuErrorModel::noiseless()
        };
        let (biased, _) = synth_imu(&truth, &model, 1).unwrap();
        let (clean, _) = synth_imu(&truth, &ImuErrorModel::noiseless(), 1).unwrap();
        for (b, c) in biased.iter().zip(&clean) {
            assert!((b.gyro - c.gyro - Vec3::new(0.01, 0.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn circle_mean_specific_force() {
        let mut p = profile(TrajectoryKind::Circle);
        p.stationary_lead = 0.0;
        p.ramp = 0.0;
        p.max_roll = 0.0;
        let truth = gen_trajectory(&p).unwrap();
        let (imu, _) = synth_imu(&truth, &ImuErrorModel::noiseless(), 1).unwrap();
        let mean = imu.iter().map(|s| s.accel.xy().norm()).sum::<f64>() / imu.len() as f64;
        assert!((mean - 0.9).abs() / 0.9 < 0.01);
    }

    #[test]
    fn gyro_integration_reproduces_truth() {
        let mut p = profile(TrajectoryKind::Figure8);
        p.yaw_sway = 0.2;
        p.vertical_amplitude = 0.5;
        let truth = gen_trajectory(&p).unwrap();
        let (imu, _) = synth_imu(&truth, &ImuErrorModel::noiseless(), 1).unwrap();
        let q = integrate_truth_gyro(&imu, truth[0].attitude);
        for (qi, s) in q.iter().zip(&truth) {
            assert!(qi.angle_to(&s.attitude) < 1e-8);
        }
    }

    #[test]
    fn doppler_sign_and_scale() {
        let s = TruthSample {
            t: 0.0,
            position: Vec3::zeros(),
            attitude: UnitQuat::identity(),
            velocity: Vec3::x(),
            omega: Vec3::zeros(),
            accel: Vec3::zeros(),
        };
        let truth = vec![s, TruthSample { t: 0.1, ..s }];
        let env = SimEnvironment {
            landmarks: vec![Vec3::new(10.0, 0.0, 0.0)],
            fov_half_angle_deg: 60.0,
            max_range: 30.0,
            max_targets: 10,
            dropout: 0.0,
        };
        let unit = synth_radar(&truth, &env, &RadarModel::noiseless(), &Extrinsics::identity(), 0).unwrap();
        assert_eq!(unit[0].targets[0].doppler, -1.0);
        let scaled = RadarModel {
            scale: [2.0, 1.0, 1.0],
            ..RadarModel::noiseless()
        };
        let half = synth_radar(&truth, &env, &scaled, &Extrinsics::identity(), 0).unwrap();
        assert_eq!(half[0].targets[0].doppler, -0.5);
    }

    #[test]
    fn stationary_dopplers_are_zero() {
        let cfg = SimConfig {
            profile: TrajectoryProfile::new(TrajectoryKind::Stationary, 5.0, 0.0, 10.0),
            ..SimConfig::default()
        };
        let ds = simulate(&cfg).unwrap();
        assert!(ds.radar.iter().flat_map(|s| &s.targets).all(|t| t.doppler == 0.0));
        assert!(ds.radar.iter().any(|s| !s.targets.is_empty()));
    }

    #[test]
    fn noiseless_radar_round_trip() {
        let cfg = SimConfig {
            radar: RadarModel {
                scale: [1.005, 0.995, 1.0],
                ..RadarModel::noiseless()
            },
            q_b_r: UnitQuat::from_rotation_vector(&Vec3::new(0.0, 0.0, 0.3)).wxyz(),
            p_r_b: [0.3, 0.1, -0.1],
            ..SimConfig::default()
        };
        let ds = simulate(&cfg).unwrap();
        let inv = Vec3::from(cfg.radar.scale).map(|s| 1.0 / s);
        for scan in &ds.radar {
            let truth = ds.truth_at(scan.t);
            let expected = radar_velocity(truth, &ds.ext).component_mul(&inv);
            let est = ransac_ego_velocity(scan, &RansacParams::default(), 0.05).unwrap();
            assert!((est.velocity - expected).norm() < 1e-9, "t={}", scan.t);
        }
    }

    #[test]
    fn determinism() {
        let cfg = SimConfig {
            imu: ImuErrorModel::office_grade(),
            radar: RadarModel::realistic(),
            ..SimConfig::default()
        };
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a.imu, b.imu);
        assert_eq!(a.radar, b.radar);
    }
}
