mod common;

use common::{dataset, matched_config, truth_init};
use dero::egovel::ransac_ego_velocity;
use dero::filter::{DrState, Init, Integration, Mode};
use dero::geom::Vec3;
use dero::mech::propagate_pose;
use dero::sim::{ImuErrorModel, RadarModel, SimConfig, TrajectoryKind, TrajectoryProfile};

fn office(kind: TrajectoryKind, duration: f64, seed: u64) -> SimConfig {
    SimConfig {
        profile: TrajectoryProfile {
            seed,
            yaw_sway: 0.2,
            ..TrajectoryProfile::new(kind, duration, 1.5, 6.0)
        },
        imu: ImuErrorModel::office_grade(),
        radar: RadarModel {
            scale: [1.005, 0.995, 1.0],
            ..RadarModel::realistic()
        },
        p_r_b: [0.1, -0.05, 0.02],
        ..SimConfig::default()
    }
}

#[test]
fn dr_only_matches_mechanization() {
    let ds = dataset(&office(TrajectoryKind::Figure8, 40.0, 3));
    let mut cfg = matched_config(&ds, Mode::DrOnly);
    cfg.integration = Integration::ZeroOrderHold;
    cfg.noise.tau_gyro_bias = f64::INFINITY;
    cfg.noise.tau_scale = f64::INFINITY;
    let init = truth_init(&ds);
    let out = common::run_mode(&ds, &cfg, &init);

    let Init::Given { state, t, .. } = init else { unreachable!() };
    let mut reference: DrState = state;
    let mut t_prev = t;
    let mut compared = 0;
    let mut points = out.trajectory.iter().skip(1);
    for (k, scan) in ds.radar.iter().enumerate() {
        if scan.t <= t_prev {
            continue;
        }
        let mut params = cfg.ransac.clone();
        params.rng_seed = cfg.ransac.rng_seed.wrapping_add(k as u64);
        let period = scan.t - t_prev;
        let (v_radar, ok) = match ransac_ego_velocity(scan, &params, cfg.noise.sigma_radar_nominal) {
            Ok(est) => (est.velocity, true),
            Err(_) => (Vec3::zeros(), false),
        };
        let step = propagate_pose(&reference, &ds.imu, t_prev, period, &v_radar, &ds.ext, &Vec3::zeros()).unwrap();
        assert!(!step.gyro_gap);
        reference.attitude = step.attitude;
        if ok {
            reference.position = step.position;
        }
        t_prev = scan.t;

        let p = points.next().expect("one trajectory point per scan");
        assert_eq!(p.t, scan.t);
        assert!((p.state.position - reference.position).norm() <= 1e-12, "t={}: position", scan.t);
        assert!(p.state.attitude.angle_to(&reference.attitude) <= 1e-12, "t={}: attitude", scan.t);
        assert_eq!(p.state.gyro_bias, reference.gyro_bias);
        assert_eq!(p.state.scale, reference.scale);
        compared += 1;
    }
    assert!(compared > 300);
}

#[test]
fn stationary_scale_follows_markov_decay() {
    let cfg = SimConfig {
        profile: TrajectoryProfile::new(TrajectoryKind::Stationary, 60.0, 0.0, 5.0),
        imu: ImuErrorModel {
            sigma_gyro_bias: 0.0,
            tau_gyro_bias: f64::INFINITY,
            ..ImuErrorModel::office_grade()
        },
        ..SimConfig::default()
    };
    let ds = dataset(&cfg);
    assert!(ds.radar.iter().all(|s| s.targets.iter().all(|t| t.doppler == 0.0)));
    let mut fc = matched_config(&ds, Mode::DrOnly);
    fc.noise.tau_scale = 200.0;
    let Init::Given { mut state, accel_bias, t } = truth_init(&ds) else { unreachable!() };
    let s0 = Vec3::new(1.01, 0.98, 1.02);
    state.scale = s0;
    let out = common::run_mode(&ds, &fc, &Init::Given { state, accel_bias, t });
    for p in &out.trajectory {
        let expected = s0 * (-(p.t - t) / fc.noise.tau_scale).exp();
        assert!((p.state.scale - expected).norm() <= 1e-6, "t={}", p.t);
    }
    assert!(out.trajectory.last().unwrap().t > 59.0);
}

#[test]
fn full_run_keeps_unit_quaternions_and_symmetric_covariance() {
    let ds = dataset(&office(TrajectoryKind::WaypointSpline, 60.0, 11));
    let cfg = matched_config(&ds, Mode::Full);
    let out = common::run_mode(&ds, &cfg, &Init::CoarseAlignment);
    for p in &out.trajectory {
        assert!((p.state.attitude.norm() - 1.0).abs() <= 1e-9, "t={}", p.t);
    }
    let p = &out.belief.cov;
    assert!((p - p.transpose()).amax() <= 1e-10);
    assert!(p.symmetric_eigenvalues().min() >= -1e-9 * p.trace());
    assert!(out.diagnostics.iter().any(|d| d.updated));
}

#[test]
fn runs_are_deterministic() {
    let ds = dataset(&office(TrajectoryKind::Figure8, 30.0, 5));
    let cfg = matched_config(&ds, Mode::Full);
    let a = common::run_mode(&ds, &cfg, &Init::CoarseAlignment);
    let b = common::run_mode(&ds, &cfg, &Init::CoarseAlignment);
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.diagnostics, b.diagnostics);
}
