use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use dero::eval::{evaluate, write_metrics, write_rel_errors};
use dero::filter::{self, DrState, FilterConfig, Init};
use dero::geom::Vec3;
use dero::io::{self, Dataset};
use dero::sim::{simulate, ImuErrorModel, RadarModel, SimConfig};
use log::info;

use crate::{EvalArgs, InitKind, NoisePreset, RunArgs, SimArgs};

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn sim_config(args: &SimArgs) -> Result<SimConfig> {
    let mut cfg: SimConfig = match &args.config {
        Some(path) => serde_json::from_value(read_json(path)?).with_context(|| format!("{}", path.display()))?,
        None => SimConfig::default(),
    };
    let p = &mut cfg.profile;
    if let Some(kind) = args.profile {
        p.kind = kind;
    }
    if let Some(v) = args.duration {
        p.duration = v;
    }
    if let Some(v) = args.speed {
        p.speed = v;
    }
    if let Some(v) = args.size {
        p.size = v;
    }
    if let Some(v) = args.seed {
        p.seed = v;
    }
    if let Some(v) = args.yaw_sway {
        p.yaw_sway = v.to_radians();
    }
    match args.noise {
        Some(NoisePreset::None) => {
            let scale = cfg.radar.scale;
            cfg.imu = ImuErrorModel::noiseless();
            cfg.radar = RadarModel {
                scale,
                rate: cfg.radar.rate,
                ..RadarModel::noiseless()
            };
        }
        Some(NoisePreset::Office) => {
            let scale = cfg.radar.scale;
            cfg.imu = ImuErrorModel::office_grade();
            cfg.radar = RadarModel {
                scale,
                rate: cfg.radar.rate,
                ..RadarModel::realistic()
            };
        }
        None => {}
    }
    if let Some(s) = args.scale {
        cfg.radar.scale = s;
    }
    if let Some(v) = args.sigma_doppler {
        cfg.radar.sigma_doppler = v;
    }
    if let Some(v) = args.outlier_rate {
        cfg.radar.outlier_rate = v;
    }
    Ok(cfg)
}

pub fn sim(args: &SimArgs) -> Result<()> {
    let cfg = sim_config(args)?;
    let start = Instant::now();
    let ds = simulate(&cfg).context("simulation failed")?;
    let dataset = Dataset::from_sim(&ds);
    io::write_dataset(&args.out, &dataset)?;
    println!(
        "wrote {}: {} IMU samples, {} radar scans, {:.1} s ({:.2} s elapsed)",
        args.out.display(),
        ds.imu.len(),
        ds.radar.len(),
        ds.truth.last().map_or(0.0, |s| s.t),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

/// Filter settings: defaults, then the dataset's calibration noise unless
/// the config file sets `noise`, then the config file, then flags.
pub fn filter_config(args: &RunArgs, dataset: &Dataset) -> Result<FilterConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let value = read_json(path)?;
            let has_noise = value.get("noise").is_some();
            let mut cfg: FilterConfig =
                serde_json::from_value(value).with_context(|| format!("{}", path.display()))?;
            if !has_noise {
                if let Some(noise) = &dataset.noise {
                    cfg.noise = noise.clone();
                }
            }
            cfg
        }
        None => FilterConfig {
            noise: dataset.noise.clone().unwrap_or_default(),
            ..FilterConfig::default()
        },
    };
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(m) = args.window {
        cfg.window = m;
    }
    if let Some(seed) = args.seed {
        cfg.ransac.rng_seed = seed;
    }
    if let Some(src) = args.tilt_source {
        cfg.tilt_source = src;
    }
    if let Some(i) = args.integration {
        cfg.integration = i;
    }
    cfg.validate().context("invalid filter config")?;
    Ok(cfg)
}

fn truth_init(dataset: &Dataset) -> Result<Init> {
    let Some(first) = dataset.truth.as_ref().and_then(|t| t.first()) else {
        bail!("--init truth needs ground truth in the dataset");
    };
    let gyro_bias = dataset
        .truth_gyro_bias
        .as_ref()
        .and_then(|b| b.first().copied())
        .unwrap_or_else(Vec3::zeros);
    let accel_bias = dataset
        .manifest
        .truth
        .as_ref()
        .map_or_else(Vec3::zeros, |t| Vec3::from(t.accel_bias));
    Ok(Init::Given {
        state: DrState {
            position: first.position,
            attitude: first.attitude,
            gyro_bias,
            ..DrState::default()
        },
        accel_bias,
        t: first.t,
    })
}

pub fn run(args: &RunArgs) -> Result<()> {
    let dataset = io::read_dataset(&args.dataset)?;
    for w in &dataset.warnings {
        eprintln!("warning: {w}");
    }
    let cfg = filter_config(args, &dataset)?;
    let init = match args.init {
        InitKind::Align => Init::CoarseAlignment,
        InitKind::Truth => truth_init(&dataset)?,
    };
    info!("mode {}, window {}", cfg.mode.label(), cfg.window);
    let start = Instant::now();
    let out = filter::run(&dataset.imu, &dataset.radar, &dataset.ext, &cfg, &init).context("filter run failed")?;
    let elapsed = start.elapsed().as_secs_f64();

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    io::write_trajectory(&args.out.join("trajectory.csv"), &out.trajectory)?;
    io::write_diagnostics(&args.out.join("diagnostics.csv"), &out.diagnostics)?;

    let updates = out.diagnostics.iter().filter(|d| d.updated).count();
    println!(
        "mode {}: {} epochs, {} updates, {:.3} s",
        cfg.mode.label(),
        out.diagnostics.len(),
        updates,
        elapsed
    );
    if let Some(last) = out.trajectory.last() {
        let s = &last.state;
        println!(
            "final t {:.3}: position [{:.4}, {:.4}, {:.4}] scale [{:.5}, {:.5}, {:.5}]",
            last.t, s.position.x, s.position.y, s.position.z, s.scale.x, s.scale.y, s.scale.z
        );
        if let Some(truth) = &dataset.truth {
            let i = truth.partition_point(|g| g.t < last.t).min(truth.len() - 1);
            let j = if i > 0 && (truth[i - 1].t - last.t).abs() < (truth[i].t - last.t).abs() {
                i - 1
            } else {
                i
            };
            let g = &truth[j];
            let note = match args.init {
                InitKind::Align => " (alignment frame, yaw not aligned; see eval)",
                InitKind::Truth => "",
            };
            println!(
                "final position error {:.4} m, attitude error {:.4} deg{note}",
                (s.position - g.position).norm(),
                s.attitude.angle_to(&g.attitude).to_degrees()
            );
        }
    }
    Ok(())
}

fn load_gt(path: &Path) -> Result<Vec<dero::eval::Pose>> {
    if path.is_dir() {
        let manifest = io::read_manifest(path)?;
        let Some(name) = manifest.groundtruth else {
            bail!("dataset {} has no ground truth", path.display());
        };
        Ok(io::read_poses(&path.join(name))?)
    } else {
        Ok(io::read_poses(path)?)
    }
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let est = io::read_poses(&args.est)?;
    let gt = load_gt(&args.gt)?;
    let (metrics, bins) = evaluate(&est, &gt, &args.distances)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_metrics(&args.out.join("metrics.json"), &metrics)?;
    write_rel_errors(&args.out.join("rel_errors.csv"), &bins)?;
    println!(
        "ATE {:.4} m / {:.4} deg over {} poses (alignment yaw {:.3} deg)",
        metrics.ate.translation_rmse, metrics.ate.rotation_rmse_deg, metrics.ate.pairs, metrics.alignment_yaw_deg
    );
    for b in &metrics.relative {
        match (b.translation_mean, b.rotation_mean_deg) {
            (Some(t), Some(r)) => println!("  {:>6.1} m: trans {:.4} m, rot {:.4} deg ({} segments)", b.distance, t, r, b.samples),
            _ => println!("  {:>6.1} m: trajectory too short", b.distance),
        }
    }
    Ok(())
}
