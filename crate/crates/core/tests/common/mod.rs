#![allow(dead_code)]

use dero::eval::{evaluate, Metrics, Pose, DEFAULT_DISTANCES};
use dero::filter::{run, DrState, FilterConfig, Init, Mode, RunOutput};
use dero::geom::Vec3;
use dero::sim::{simulate, SimConfig, SimDataset};

pub fn dataset(cfg: &SimConfig) -> SimDataset {
    simulate(cfg).expect("simulation")
}

/// Filter settings matched to the simulated sensors.
pub fn matched_config(ds: &SimDataset, mode: Mode) -> FilterConfig {
    FilterConfig {
        noise: ds.config.matched_noise(),
        mode,
        ..FilterConfig::default()
    }
}

/// Exact initial state taken from the first truth sample.
pub fn truth_init(ds: &SimDataset) -> Init {
    let t0 = &ds.truth[0];
    Init::Given {
        state: DrState {
            position: t0.position,
            attitude: t0.attitude,
            gyro_bias: ds.gyro_bias[0],
            ..DrState::default()
        },
        accel_bias: Vec3::from(ds.config.imu.accel_bias),
        t: t0.t,
    }
}

pub fn run_mode(ds: &SimDataset, cfg: &FilterConfig, init: &Init) -> RunOutput {
    run(&ds.imu, &ds.radar, &ds.ext, cfg, init).expect("filter run")
}

pub fn truth_poses(ds: &SimDataset) -> Vec<Pose> {
    ds.truth
        .iter()
        .map(|s| Pose {
            t: s.t,
            position: s.position,
            attitude: s.attitude,
        })
        .collect()
}

pub fn estimate_poses(out: &RunOutput) -> Vec<Pose> {
    out.trajectory
        .iter()
        .map(|p| Pose {
            t: p.t,
            position: p.state.position,
            attitude: p.state.attitude,
        })
        .collect()
}

pub fn metrics(ds: &SimDataset, out: &RunOutput) -> Metrics {
    evaluate(&estimate_poses(out), &truth_poses(ds), &DEFAULT_DISTANCES)
        .expect("evaluation")
        .0
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
