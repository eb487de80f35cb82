//! Dataset and trajectory files.
//!
//! A dataset directory holds `manifest.json`, `imu.csv`
//! (`t,wx,wy,wz,fx,fy,fz`), `radar.jsonl` (one scan per line,
//! `{t, targets:[{x,y,z,doppler,power}]}`), `calib.json`
//! (`{q_b_r:[w,x,y,z], p_r_b:[x,y,z], noise:{...}}`) and optionally
//! `groundtruth.csv`. Numbers are written in shortest round-trip form.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::Pose;
use crate::filter::{EpochDiagnostics, TrajectoryPoint};
use crate::geom::{UnitQuat, Vec3};
use crate::mech::DrState;
use crate::model::{validate_extrinsics, Extrinsics, ImuSample, ModelError, NoiseConfig, RadarScan, RadarTarget};
use crate::sim::{SimConfig, SimDataset, TruthSample};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("manifest not found: {0}")]
    ManifestNotFound(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: u64, message: String },
    #[error("{path}:{line}: timestamp {t} does not increase (previous {prev})")]
    NonMonotoneTime { path: String, line: u64, t: f64, prev: f64 },
    #[error("cannot write an empty trajectory")]
    EmptyTrajectory,
    #[error("{path}: {source}")]
    Calibration {
        path: String,
        #[source]
        source: ModelError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: u64, message: impl ToString) -> IoError {
    IoError::Parse {
        path: path.display().to_string(),
        line,
        message: message.to_string(),
    }
}

/// Ground-truth facts recorded by the simulator for later scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthInfo {
    pub scale: [f64; 3],
    pub gyro_bias: [f64; 3],
    pub accel_bias: [f64; 3],
    pub simulation: Option<SimConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub imu: String,
    pub radar: String,
    pub groundtruth: Option<String>,
    pub calib: String,
    pub imu_rate: f64,
    pub radar_rate: f64,
    pub frames: String,
    pub truth: Option<TruthInfo>,
}

/// Frame conventions recorded in every manifest.
pub const FRAMES_NOTE: &str = "navigation frame NED with gravity (0,0,+g); body frame FRD; \
quaternions [w,x,y,z] Hamilton, body-to-navigation; q_b_r rotates radar vectors into the body frame; \
p_r_b is the radar origin in the body frame; time in seconds from stream start";

impl DatasetManifest {
    pub fn standard(imu_rate: f64, radar_rate: f64, with_truth: bool) -> Self {
        Self {
            imu: "imu.csv".into(),
            radar: "radar.jsonl".into(),
            groundtruth: with_truth.then(|| "groundtruth.csv".into()),
            calib: "calib.json".into(),
            imu_rate,
            radar_rate,
            frames: FRAMES_NOTE.into(),
            truth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CalibFile {
    q_b_r: [f64; 4],
    p_r_b: [f64; 3],
    #[serde(default)]
    noise: Option<NoiseConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub imu: Vec<ImuSample>,
    pub radar: Vec<RadarScan>,
    pub truth: Option<Vec<TruthSample>>,
    /// True gyro bias per ground-truth row, when recorded.
    pub truth_gyro_bias: Option<Vec<Vec3>>,
    pub ext: Extrinsics,
    /// Noise overrides from the calibration file.
    pub noise: Option<NoiseConfig>,
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn from_sim(ds: &SimDataset) -> Self {
        let cfg = &ds.config;
        let mut manifest = DatasetManifest::standard(cfg.profile.imu_rate, cfg.radar.rate, true);
        manifest.truth = Some(TruthInfo {
            scale: cfg.radar.scale,
            gyro_bias: cfg.imu.gyro_bias,
            accel_bias: cfg.imu.accel_bias,
            simulation: Some(cfg.clone()),
        });
        Self {
            manifest,
            imu: ds.imu.clone(),
            radar: ds.radar.clone(),
            truth: Some(ds.truth.clone()),
            truth_gyro_bias: Some(ds.gyro_bias.clone()),
            ext: ds.ext,
            noise: Some(cfg.matched_noise()),
            warnings: Vec::new(),
        }
    }

    pub fn truth_poses(&self) -> Option<Vec<Pose>> {
        self.truth.as_ref().map(|t| {
            t.iter()
                .map(|s| Pose {
                    t: s.t,
                    position: s.position,
                    attitude: s.attitude,
                })
                .collect()
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, IoError> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_io(path: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
    move |e| IoError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn fmt(values: impl IntoIterator<Item = f64>) -> Vec<String> {
    values.into_iter().map(|v| v.to_string()).collect()
}

/// Writes all dataset files plus the manifest into `dir`, creating it.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = ds.manifest.clone();
    if ds.truth.is_none() {
        manifest.groundtruth = None;
    } else if manifest.groundtruth.is_none() {
        manifest.groundtruth = Some("groundtruth.csv".into());
    }

    let imu_path = dir.join(&manifest.imu);
    let mut w = csv_writer(&imu_path)?;
    w.write_record(["t", "wx", "wy", "wz", "fx", "fy", "fz"]).map_err(csv_io(&imu_path))?;
    for s in &ds.imu {
        w.write_record(fmt([s.t, s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z]))
            .map_err(csv_io(&imu_path))?;
    }
    w.flush().map_err(io_err(&imu_path))?;

    let radar_path = dir.join(&manifest.radar);
    let mut w = create(&radar_path)?;
    for scan in &ds.radar {
        let line = serde_json::to_string(&ScanRecord::from(scan)).expect("scan serializes");
        writeln!(w, "{line}").map_err(io_err(&radar_path))?;
    }
    w.flush().map_err(io_err(&radar_path))?;

    if let (Some(truth), Some(gt_name)) = (&ds.truth, &manifest.groundtruth) {
        write_groundtruth(&dir.join(gt_name), truth, ds.truth_gyro_bias.as_deref())?;
    }

    let calib_path = dir.join(&manifest.calib);
    let calib = CalibFile {
        q_b_r: ds.ext.q_b_r.wxyz(),
        p_r_b: ds.ext.p_r_b.into(),
        noise: ds.noise.clone(),
    };
    write_json(&calib_path, &calib)?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

#[derive(Debug, Serialize, Deserialize)]
struct TargetRecord {
    x: f64,
    y: f64,
    z: f64,
    doppler: f64,
    #[serde(default)]
    power: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScanRecord {
    t: f64,
    targets: Vec<TargetRecord>,
}

impl From<&RadarScan> for ScanRecord {
    fn from(scan: &RadarScan) -> Self {
        Self {
            t: scan.t,
            targets: scan
                .targets
                .iter()
                .map(|t| TargetRecord {
                    x: t.position.x,
                    y: t.position.y,
                    z: t.position.z,
                    // Normalizes -0 so stationary scans print plain zeros.
                    doppler: t.doppler + 0.0,
                    power: t.power,
                })
                .collect(),
        }
    }
}

fn write_groundtruth(path: &Path, truth: &[TruthSample], bias: Option<&[Vec3]>) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    let mut header = vec![
        "t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz", "ax", "ay", "az",
    ];
    if bias.is_some() {
        header.extend(["bgx", "bgy", "bgz"]);
    }
    w.write_record(&header).map_err(csv_io(path))?;
    for (i, s) in truth.iter().enumerate() {
        let q = s.attitude.wxyz();
        let mut row = vec![s.t, s.position.x, s.position.y, s.position.z, q[0], q[1], q[2], q[3]];
        row.extend(s.velocity.iter().chain(s.omega.iter()).chain(s.accel.iter()));
        if let Some(b) = bias {
            row.extend(b[i].iter());
        }
        w.write_record(fmt(row)).map_err(csv_io(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Header-indexed CSV table of floats.
struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<(u64, Vec<f64>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, IoError> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(BufReader::new(file));
        let header = reader
            .headers()
            .map_err(|e| parse_err(path, 1, e))?
            .iter()
            .map(str::to_string)
            .collect::<Vec<_>>();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(path, line, e)
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let values = record
                .iter()
                .enumerate()
                .map(|(i, field)| {
                    field.parse::<f64>().map_err(|_| {
                        parse_err(path, line, format!("column '{}': invalid number '{field}'", header[i]))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push((line, values));
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn columns(&self, names: &[&str]) -> Result<Vec<usize>, IoError> {
        names
            .iter()
            .map(|n| {
                self.header
                    .iter()
                    .position(|h| h == n)
                    .ok_or_else(|| parse_err(&self.path, 1, format!("missing column '{n}'")))
            })
            .collect()
    }

    fn optional(&self, names: &[&str]) -> Option<Vec<usize>> {
        self.columns(names).ok()
    }

    fn check_monotone(&self, t_col: usize) -> Result<(), IoError> {
        check_monotone(&self.path, self.rows.iter().map(|(line, v)| (*line, v[t_col])))
    }
}

fn check_monotone(path: &Path, times: impl Iterator<Item = (u64, f64)>) -> Result<(), IoError> {
    let mut prev = f64::NEG_INFINITY;
    for (line, t) in times {
        if !(t > prev) {
            return Err(IoError::NonMonotoneTime {
                path: path.display().to_string(),
                line,
                t,
                prev,
            });
        }
        prev = t;
    }
    Ok(())
}

fn vec3(v: &[f64], cols: &[usize], offset: usize) -> Vec3 {
    Vec3::new(v[cols[offset]], v[cols[offset + 1]], v[cols[offset + 2]])
}

fn quat(path: &Path, line: u64, v: &[f64], cols: &[usize], offset: usize) -> Result<UnitQuat, IoError> {
    let q = [v[cols[offset]], v[cols[offset + 1]], v[cols[offset + 2]], v[cols[offset + 3]]];
    let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.5 && norm < 1.5) {
        return Err(parse_err(path, line, format!("quaternion norm {norm} is not close to 1")));
    }
    UnitQuat::from_wxyz(q).ok_or_else(|| parse_err(path, line, "invalid quaternion"))
}

pub fn read_imu(path: &Path) -> Result<Vec<ImuSample>, IoError> {
    let table = Table::read(path)?;
    let c = table.columns(&["t", "wx", "wy", "wz", "fx", "fy", "fz"])?;
    table.check_monotone(c[0])?;
    Ok(table
        .rows
        .iter()
        .map(|(_, v)| ImuSample {
            t: v[c[0]],
            gyro: vec3(v, &c, 1),
            accel: vec3(v, &c, 4),
        })
        .collect())
}

pub fn read_radar(path: &Path) -> Result<Vec<RadarScan>, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut scans = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScanRecord = serde_json::from_str(&line).map_err(|e| parse_err(path, line_no, e))?;
        let mut targets = Vec::with_capacity(rec.targets.len());
        for t in rec.targets {
            let position = Vec3::new(t.x, t.y, t.z);
            if position.norm() == 0.0 {
                warn!("{}:{line_no}: dropping zero-range target", path.display());
                continue;
            }
            targets.push(RadarTarget {
                position,
                doppler: t.doppler,
                power: t.power,
            });
        }
        lines.push((line_no, rec.t));
        scans.push(RadarScan { t: rec.t, targets });
    }
    check_monotone(path, lines.into_iter())?;
    Ok(scans)
}

/// Ground truth with the optional true gyro bias columns.
pub fn read_groundtruth(path: &Path) -> Result<(Vec<TruthSample>, Option<Vec<Vec3>>), IoError> {
    let table = Table::read(path)?;
    let c = table.columns(&["t", "px", "py", "pz", "qw", "qx", "qy", "qz"])?;
    table.check_monotone(c[0])?;
    let kin = table.optional(&["vx", "vy", "vz", "wx", "wy", "wz", "ax", "ay", "az"]);
    let bias = table.optional(&["bgx", "bgy", "bgz"]);
    let mut truth = Vec::with_capacity(table.rows.len());
    for (line, v) in &table.rows {
        let (velocity, omega, accel) = match &kin {
            Some(k) => (vec3(v, k, 0), vec3(v, k, 3), vec3(v, k, 6)),
            None => (Vec3::zeros(), Vec3::zeros(), Vec3::zeros()),
        };
        truth.push(TruthSample {
            t: v[c[0]],
            position: vec3(v, &c, 1),
            attitude: quat(path, *line, v, &c, 4)?,
            velocity,
            omega,
            accel,
        });
    }
    let bias = bias.map(|b| table.rows.iter().map(|(_, v)| vec3(v, &b, 0)).collect());
    Ok((truth, bias))
}

fn read_calib(path: &Path) -> Result<(Extrinsics, Option<NoiseConfig>), IoError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let calib: CalibFile = serde_json::from_str(&text).map_err(|e| parse_err(path, e.line() as u64, e))?;
    let ext = validate_extrinsics(calib.q_b_r, Vec3::from(calib.p_r_b)).map_err(|source| IoError::Calibration {
        path: path.display().to_string(),
        source,
    })?;
    if let Some(noise) = &calib.noise {
        noise.validate().map_err(|source| IoError::Calibration {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok((ext, calib.noise))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, IoError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(IoError::ManifestNotFound(path.display().to_string()));
    }
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| parse_err(&path, e.line() as u64, e))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, IoError> {
    let manifest = read_manifest(dir)?;
    let imu = read_imu(&dir.join(&manifest.imu))?;
    let radar = read_radar(&dir.join(&manifest.radar))?;
    let (truth, truth_gyro_bias) = match &manifest.groundtruth {
        Some(name) if dir.join(name).is_file() => {
            let (t, b) = read_groundtruth(&dir.join(name))?;
            (Some(t), b)
        }
        _ => (None, None),
    };
    let mut warnings = Vec::new();
    let calib_path = dir.join(&manifest.calib);
    let (ext, noise) = if calib_path.is_file() {
        read_calib(&calib_path)?
    } else {
        let msg = format!("{} not found; using identity extrinsics and default noise", calib_path.display());
        warn!("{msg}");
        warnings.push(msg);
        (Extrinsics::identity(), None)
    };
    Ok(Dataset {
        manifest,
        imu,
        radar,
        truth,
        truth_gyro_bias,
        ext,
        noise,
        warnings,
    })
}

const TRAJECTORY_HEADER: [&str; 14] = [
    "t", "px", "py", "pz", "qw", "qx", "qy", "qz", "bgx", "bgy", "bgz", "srx", "sry", "srz",
];

pub fn write_trajectory(path: &Path, traj: &[TrajectoryPoint]) -> Result<(), IoError> {
    if traj.is_empty() {
        return Err(IoError::EmptyTrajectory);
    }
    let mut w = csv_writer(path)?;
    w.write_record(TRAJECTORY_HEADER).map_err(csv_io(path))?;
    for p in traj {
        let s = &p.state;
        let q = s.attitude.wxyz();
        let mut row = vec![p.t, s.position.x, s.position.y, s.position.z, q[0], q[1], q[2], q[3]];
        row.extend(s.gyro_bias.iter().chain(s.scale.iter()));
        w.write_record(fmt(row)).map_err(csv_io(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryPoint>, IoError> {
    let table = Table::read(path)?;
    let c = table.columns(&TRAJECTORY_HEADER)?;
    table.check_monotone(c[0])?;
    table
        .rows
        .iter()
        .map(|(line, v)| {
            Ok(TrajectoryPoint {
                t: v[c[0]],
                state: DrState {
                    position: vec3(v, &c, 1),
                    attitude: quat(path, *line, v, &c, 4)?,
                    gyro_bias: vec3(v, &c, 8),
                    scale: vec3(v, &c, 11),
                },
            })
        })
        .collect()
}

/// Poses from any CSV with `t,px,py,pz,qw,qx,qy,qz` columns (trajectory
/// or ground truth).
pub fn read_poses(path: &Path) -> Result<Vec<Pose>, IoError> {
    let table = Table::read(path)?;
    let c = table.columns(&["t", "px", "py", "pz", "qw", "qx", "qy", "qz"])?;
    table.check_monotone(c[0])?;
    table
        .rows
        .iter()
        .map(|(line, v)| {
            Ok(Pose {
                t: v[c[0]],
                position: vec3(v, &c, 1),
                attitude: quat(path, *line, v, &c, 4)?,
            })
        })
        .collect()
}

pub fn write_diagnostics(path: &Path, diag: &[EpochDiagnostics]) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "t", "vx", "vy", "vz", "trace_q", "inlier_count", "scan_count", "updated", "sigma_tilt", "sigma_range",
        "residual_norm", "condition", "flags",
    ])
    .map_err(csv_io(path))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for d in diag {
        w.write_record([
            d.t.to_string(),
            d.v_radar.x.to_string(),
            d.v_radar.y.to_string(),
            d.v_radar.z.to_string(),
            d.trace_q.to_string(),
            d.inlier_count.to_string(),
            d.scan_count.to_string(),
            u8::from(d.updated).to_string(),
            opt(d.sigma_tilt),
            opt(d.sigma_range),
            opt(d.residual_norm),
            opt(d.condition),
            d.flags.join("|"),
        ])
        .map_err(csv_io(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pose_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let traj = [TrajectoryPoint {
            t: 0.5,
            state: DrState::default(),
        }];
        write_trajectory(&path, &traj).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "0.5,0,0,0,1,0,0,0,0,0,0,1,1,1");
        assert_eq!(read_trajectory(&path).unwrap(), traj);
    }

    #[test]
    fn empty_trajectory_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            write_trajectory(&dir.path().join("t.csv"), &[]),
            Err(IoError::EmptyTrajectory)
        ));
    }

    #[test]
    fn swapped_imu_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imu.csv");
        std::fs::write(&path, "t,wx,wy,wz,fx,fy,fz\n0.0,0,0,0,0,0,-9.81\n0.005,0,0,0,0,0,-9.81\n0.0025,0,0,0,0,0,-9.81\n").unwrap();
        match read_imu(&path) {
            Err(IoError::NonMonotoneTime { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_number_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imu.csv");
        std::fs::write(&path, "t,wx,wy,wz,fx,fy,fz\n0.0,0,0,0,0,0,-9.81\n0.1,0,zz,0,0,0,-9.81\n").unwrap();
        let err = read_imu(&path).unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("manifest not found"));
    }
}
