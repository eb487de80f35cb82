use log::{debug, warn};
use nalgebra::{DMatrix, DVector, Matrix3};

use super::align::{coarse_alignment, Alignment};
use super::dynamics::{time_update, PositionStep};
use super::update::{
    adaptive_tilt_sigma, compensate_accel, measurement_update, predicted_radar_displacement,
    range_residual, reclone, tilt_measurement, tilt_residual, tilt_update_model,
};
use super::{idx, AugmentedBelief, DrState, FilterConfig, FilterError, Integration, TiltSource};
use crate::egovel::ransac_ego_velocity;
use crate::geom::{rot_angle, Vec3};
use crate::mech::{body_velocity_from_radar, integrate_gyro_with};
use crate::model::{Extrinsics, ImuSample, NoiseConfig, RadarScan};
use crate::scanmatch::{fitness_to_sigma, icp_register};

/// How the filter state is initialized.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Coarse alignment over the first `alignment_duration` seconds of IMU
    /// data, at the origin with zero yaw.
    CoarseAlignment,
    Given {
        state: DrState,
        accel_bias: Vec3,
        t: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub state: DrState,
}

/// Per radar epoch record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochDiagnostics {
    pub t: f64,
    pub v_radar: Vec3,
    pub trace_q: f64,
    pub inlier_count: usize,
    /// Scans since the last clone, before any re-clone at this epoch.
    pub scan_count: usize,
    pub updated: bool,
    pub sigma_tilt: Option<f64>,
    pub sigma_range: Option<f64>,
    pub residual_norm: Option<f64>,
    pub condition: Option<f64>,
    pub flags: Vec<&'static str>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Vec<TrajectoryPoint>,
    pub diagnostics: Vec<EpochDiagnostics>,
    pub alignment: Option<Alignment>,
    pub belief: AugmentedBelief,
}

/// Radar-derived velocity of the previous epoch.
struct EpochVelocity {
    v_radar: Vec3,
    omega: Vec3,
    valid: bool,
}

/// Runs the filter over time-ordered IMU and radar streams.
pub fn run(
    imu: &[ImuSample],
    radar: &[RadarScan],
    ext: &Extrinsics,
    cfg: &FilterConfig,
    init: &Init,
) -> Result<RunOutput, FilterError> {
    cfg.validate()?;
    if imu.is_empty() {
        return Err(FilterError::EmptyStream("imu"));
    }
    if radar.is_empty() {
        return Err(FilterError::EmptyStream("radar"));
    }
    let noise = effective_noise(cfg);

    let mut init_noise = noise.clone();
    let (dr, accel_bias, t0, alignment) = match init {
        Init::CoarseAlignment => {
            let end = imu[0].t + cfg.alignment_duration;
            let n = imu.partition_point(|s| s.t < end - 1e-9);
            let window = &imu[..n.max(1)];
            let a = coarse_alignment(window, &noise)?;
            init_noise.p0_gyro_bias = a.gyro_bias_sigma.into();
            init_noise.p0_attitude[0] = a.tilt_sigma;
            init_noise.p0_attitude[1] = a.tilt_sigma;
            let state = DrState {
                position: Vec3::zeros(),
                attitude: a.attitude(),
                gyro_bias: a.gyro_bias,
                scale: Vec3::repeat(1.0),
            };
            (state, a.accel_bias, window[window.len() - 1].t, Some(a))
        }
        Init::Given {
            state,
            accel_bias,
            t,
        } => (*state, *accel_bias, *t, None),
    };
    let mut belief = AugmentedBelief::new(dr, accel_bias, &init_noise, t0);

    let radar_period = nominal_period(radar.iter().map(|s| s.t)).unwrap_or(cfg.max_gap);
    let imu_period = nominal_period(imu.iter().map(|s| s.t)).unwrap_or(0.0);
    let max_clone_age = 2.0 * cfg.window as f64 * radar_period;

    let mut trajectory = vec![TrajectoryPoint {
        t: t0,
        state: belief.dr,
    }];
    let mut diagnostics = Vec::new();
    let mut clone_cloud: Option<Vec<Vec3>> = None;
    let mut prev_velocity: Option<EpochVelocity> = None;
    let mut omega_hint = Vec3::zeros();
    let mut t_prev = t0;

    for (k, scan) in radar.iter().enumerate() {
        if scan.t <= t_prev {
            continue;
        }
        let period = scan.t - t_prev;
        let mut flags = Vec::new();
        // Previous body velocity, re-evaluated with the current estimates.
        let v_prev_nav = prev_velocity.as_ref().filter(|p| p.valid).map(|p| {
            body_velocity_from_radar(&p.v_radar, &belief.dr.scale, &p.omega, &belief.dr.attitude, ext)
        });

        let mut f_nav_sum = Vec3::zeros();
        let (attitude, last_rate, used) = integrate_gyro_with(
            &belief.dr.attitude,
            &belief.dr.gyro_bias,
            imu,
            t_prev,
            scan.t,
            |s, q, dt| f_nav_sum += q.rotate(&s.accel) * dt,
        );
        belief.dr.attitude = attitude;
        if used == 0 {
            flags.push("gyro_gap");
        }
        let omega = last_rate.unwrap_or(omega_hint);
        omega_hint = omega;

        let mut ransac = cfg.ransac.clone();
        ransac.rng_seed = cfg.ransac.rng_seed.wrapping_add(k as u64);
        let (v_radar, q_scan, inliers, ego_ok) =
            match ransac_ego_velocity(scan, &ransac, noise.sigma_radar_nominal) {
                Ok(est) => (est.velocity, est.covariance, scan.subset(&est.inliers).points(), true),
                Err(e) => {
                    debug!("t={:.3}: ego-velocity failed: {e}", scan.t);
                    flags.push("egovel_failed");
                    let s2 = noise.sigma_radar_nominal * noise.sigma_radar_nominal;
                    (Vec3::zeros(), Matrix3::identity() * (10.0 * s2), Vec::new(), false)
                }
            };

        let step = match (ego_ok, cfg.integration, v_prev_nav) {
            (false, _, _) => PositionStep::Hold,
            (true, Integration::Trapezoidal, Some(prev)) => PositionStep::Trapezoidal(prev),
            _ => PositionStep::ZeroOrderHold,
        };
        let v_nav = time_update(&mut belief, &v_radar, &q_scan, &omega, ext, &noise, period, step);
        belief.t = scan.t;
        if !cfg.mode.estimates_scale() {
            freeze_scale(&mut belief);
        }
        if period > cfg.max_gap {
            warn!("t={:.3}: {period:.3} s gap in radar stream", scan.t);
            flags.push("gap");
            inflate(&mut belief, &noise, period);
        }

        let mut diag = EpochDiagnostics {
            t: scan.t,
            v_radar,
            trace_q: q_scan.trace(),
            inlier_count: inliers.len(),
            scan_count: 0,
            updated: false,
            sigma_tilt: None,
            sigma_range: None,
            residual_norm: None,
            condition: None,
            flags: Vec::new(),
        };

        let current = EpochVelocity {
            v_radar,
            omega,
            valid: ego_ok,
        };

        if clone_cloud.is_none() {
            // The first processed scan becomes the first clone epoch.
            reclone(&mut belief);
            clone_cloud = Some(inliers);
        } else {
            belief.scan_count += 1;
            diag.scan_count = belief.scan_count;
            if belief.scan_count >= cfg.window {
                let mut z = Vec::new();
                let mut h_rows: Vec<nalgebra::RowSVector<f64, 18>> = Vec::new();
                let mut r_diag = Vec::new();

                if cfg.mode.uses_icp() {
                    let target = clone_cloud.as_deref().unwrap_or(&[]);
                    match range_rows(&belief, &inliers, target, ext, cfg, max_clone_age) {
                        Ok((zr, hr, sigma)) => {
                            z.extend(zr.iter());
                            for i in 0..3 {
                                h_rows.push(hr.row(i).into_owned());
                            }
                            r_diag.extend([sigma * sigma; 3]);
                            diag.sigma_range = Some(sigma);
                        }
                        Err(flag) => flags.push(flag),
                    }
                }

                if cfg.mode.uses_tilt() {
                    let f_meas = match cfg.tilt_source {
                        TiltSource::Nearest => nearest_sample(imu, scan.t, imu_period).map(|s| s.accel),
                        TiltSource::IntervalMean => {
                            (used > 0).then(|| belief.dr.attitude.conj().rotate(&(f_nav_sum / period)))
                        }
                    };
                    let prev_nav = v_prev_nav.filter(|_| current.valid);
                    match (f_meas, prev_nav) {
                        (Some(f), Some(prev)) => {
                            let f_hat = compensate_accel(&f, &belief, &v_nav, &prev, period);
                            match tilt_rows(&belief, &f_hat, &noise) {
                                Ok((za, ha, sigma)) => {
                                    z.extend(za.iter());
                                    for row in ha {
                                        h_rows.push(row);
                                    }
                                    r_diag.extend([sigma * sigma; 2]);
                                    diag.sigma_tilt = Some(sigma);
                                }
                                Err(flag) => flags.push(flag),
                            }
                        }
                        _ => flags.push("tilt_unavailable"),
                    }
                }

                if !z.is_empty() {
                    let zv = DVector::from_vec(z);
                    let h = DMatrix::from_fn(h_rows.len(), idx::DIM, |i, j| h_rows[i][j]);
                    let r = DMatrix::from_diagonal(&DVector::from_vec(r_diag));
                    match measurement_update(&mut belief, &zv, &h, &r, cfg.scale_bounds) {
                        Ok(report) => {
                            diag.updated = true;
                            diag.residual_norm = Some(report.residual_norm);
                            diag.condition = Some(report.condition);
                            if !cfg.mode.estimates_scale() {
                                freeze_scale(&mut belief);
                            }
                        }
                        Err(FilterError::SingularInnovation { condition }) => {
                            warn!("t={:.3}: singular innovation ({condition:.3e}), update skipped", scan.t);
                            diag.condition = Some(condition);
                            flags.push("singular_innovation");
                        }
                        Err(e) => return Err(e),
                    }
                }
                if !diag.updated {
                    reclone(&mut belief);
                }
                clone_cloud = Some(inliers);
            }
        }

        diag.flags = flags;
        diagnostics.push(diag);
        trajectory.push(TrajectoryPoint {
            t: scan.t,
            state: belief.dr,
        });
        prev_velocity = Some(current);
        t_prev = scan.t;
    }

    Ok(RunOutput {
        trajectory,
        diagnostics,
        alignment,
        belief,
    })
}

fn effective_noise(cfg: &FilterConfig) -> NoiseConfig {
    let mut noise = cfg.noise.clone();
    if !cfg.mode.estimates_scale() {
        noise.sigma_scale = 0.0;
        noise.p0_scale = [0.0; 3];
        noise.tau_scale = f64::INFINITY;
    }
    noise
}

fn freeze_scale(belief: &mut AugmentedBelief) {
    belief.dr.scale = Vec3::repeat(1.0);
    for i in idx::SCALE..idx::SCALE + 3 {
        belief.cov.row_mut(i).fill(0.0);
        belief.cov.column_mut(i).fill(0.0);
    }
}

/// Covariance growth for a stream gap: the initial uncertainty is added
/// back to attitude, bias and scale, and position grows with the nominal
/// radar noise over the gap.
fn inflate(belief: &mut AugmentedBelief, noise: &NoiseConfig, gap: f64) {
    let pos = 10.0 * (noise.sigma_radar_nominal * gap).powi(2);
    let blocks = [
        (idx::ATT, noise.p0_attitude),
        (idx::BIAS, noise.p0_gyro_bias),
        (idx::SCALE, noise.p0_scale),
    ];
    for i in 0..3 {
        belief.cov[(idx::POS + i, idx::POS + i)] += pos;
    }
    for (offset, sigmas) in blocks {
        for (i, s) in sigmas.iter().enumerate() {
            belief.cov[(offset + i, offset + i)] += s * s;
        }
    }
}

fn nominal_period(times: impl ExactSizeIterator<Item = f64> + Clone) -> Option<f64> {
    let n = times.len();
    if n < 2 {
        return None;
    }
    let first = times.clone().next()?;
    let last = times.last()?;
    Some((last - first) / (n - 1) as f64)
}

/// Nearest IMU sample within half an IMU period of `t`.
fn nearest_sample(imu: &[ImuSample], t: f64, imu_period: f64) -> Option<&ImuSample> {
    let i = imu.partition_point(|s| s.t < t);
    let candidates = [i.checked_sub(1), Some(i)];
    candidates
        .into_iter()
        .flatten()
        .filter_map(|j| imu.get(j))
        .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
        .filter(|s| (s.t - t).abs() <= 0.5 * imu_period + 1e-9)
}

type RangeRows = (Vec3, nalgebra::SMatrix<f64, 3, 18>, f64);

fn range_rows(
    belief: &AugmentedBelief,
    source: &[Vec3],
    target: &[Vec3],
    ext: &Extrinsics,
    cfg: &FilterConfig,
    max_clone_age: f64,
) -> Result<RangeRows, &'static str> {
    let c_br = ext.rot_b_r();
    let r_pred = c_br
        * belief.clone.attitude.to_rot().transpose()
        * belief.dr.attitude.to_rot()
        * c_br.transpose();
    let t_pred = predicted_radar_displacement(belief, ext);
    let icp = match icp_register(source, target, (r_pred, t_pred), &cfg.icp) {
        Ok(r) => r,
        Err(e) => {
            debug!("t={:.3}: ICP skipped: {e}", belief.t);
            return Err("icp_failed");
        }
    };
    let deviation = rot_angle(&(icp.rotation * r_pred.transpose()));
    if deviation > cfg.icp.max_rotation_deviation_deg.to_radians() {
        debug!("t={:.3}: ICP rotation off by {:.1} deg", belief.t, deviation.to_degrees());
        return Err("icp_rejected");
    }
    let sigma = fitness_to_sigma(icp.fitness, icp.matched_count, &cfg.icp);
    let (z, h) = range_residual(belief, &icp.translation, ext, max_clone_age).map_err(|_| "stale_clone")?;
    Ok((z, h, sigma))
}

type TiltRows = (nalgebra::Vector2<f64>, [nalgebra::RowSVector<f64, 18>; 2], f64);

fn tilt_rows(belief: &AugmentedBelief, f_hat: &Vec3, noise: &NoiseConfig) -> Result<TiltRows, &'static str> {
    let measured = tilt_measurement(f_hat, noise.gravity).map_err(|_| "free_fall")?;
    let (ha, euler) = tilt_update_model(&belief.dr.attitude).map_err(|_| "tilt_gimbal_lock")?;
    let z = tilt_residual(&euler, measured);
    let mut rows = [nalgebra::RowSVector::<f64, 18>::zeros(); 2];
    for (i, row) in rows.iter_mut().enumerate() {
        for j in 0..3 {
            row[idx::ATT + j] = ha[(i, j)];
        }
    }
    Ok((z, rows, adaptive_tilt_sigma(f_hat, noise)))
}
