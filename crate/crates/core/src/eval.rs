//! Trajectory evaluation: time association, position-yaw alignment,
//! absolute trajectory error and distance-binned relative errors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{quat_mul, UnitQuat, Vec3};

/// Largest timestamp difference accepted when pairing poses, s.
pub const ASSOCIATION_GATE: f64 = 0.02;

/// Default relative-error segment lengths, m.
pub const DEFAULT_DISTANCES: [f64; 4] = [50.0, 100.0, 150.0, 200.0];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least 2 associated pose pairs, found {found}")]
    TooFewPairs { found: usize },
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub t: f64,
    pub position: Vec3,
    pub attitude: UnitQuat,
}

/// Estimate and ground truth paired by time, with the alignment already
/// applied to the estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub est: Vec<Pose>,
    pub gt: Vec<Pose>,
    pub yaw: f64,
    pub translation: Vec3,
}

/// Nearest-neighbour association within `gate`, injective and time-ordered.
pub fn associate(est: &[Pose], gt: &[Pose], gate: f64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (i, e) in est.iter().enumerate() {
        let k = gt.partition_point(|g| g.t < e.t);
        let best = [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .filter(|&j| j < gt.len())
            .min_by(|&a, &b| (gt[a].t - e.t).abs().total_cmp(&(gt[b].t - e.t).abs()));
        let Some(j) = best else { continue };
        let dt = (gt[j].t - e.t).abs();
        if dt > gate {
            continue;
        }
        match pairs.last() {
            Some(&(pi, pj)) if pj == j => {
                if dt < (gt[j].t - est[pi].t).abs() {
                    pairs.pop();
                    pairs.push((i, j));
                }
            }
            Some(&(_, pj)) if pj > j => {}
            _ => pairs.push((i, j)),
        }
    }
    pairs
}

fn yaw_quat(yaw: f64) -> UnitQuat {
    UnitQuat::from_rotation_vector(&Vec3::new(0.0, 0.0, yaw))
}

/// Applies `p ↦ R_z(yaw) p + t` and `q ↦ q_z(yaw) ⊗ q`.
pub fn transform_poses(poses: &[Pose], yaw: f64, translation: &Vec3) -> Vec<Pose> {
    let qz = yaw_quat(yaw);
    poses
        .iter()
        .map(|p| Pose {
            t: p.t,
            position: qz.rotate(&p.position) + translation,
            attitude: quat_mul(&qz, &p.attitude),
        })
        .collect()
}

/// Closed-form yaw and translation minimising the squared position error
/// between associated poses.
pub fn align_position_yaw(est: &[Pose], gt: &[Pose]) -> Result<AlignedPair, EvalError> {
    let pairs = associate(est, gt, ASSOCIATION_GATE);
    if pairs.len() < 2 {
        return Err(EvalError::TooFewPairs { found: pairs.len() });
    }
    let e: Vec<Pose> = pairs.iter().map(|&(i, _)| est[i]).collect();
    let g: Vec<Pose> = pairs.iter().map(|&(_, j)| gt[j]).collect();
    let n = pairs.len() as f64;
    let ce = e.iter().map(|p| p.position).sum::<Vec3>() / n;
    let cg = g.iter().map(|p| p.position).sum::<Vec3>() / n;
    let (mut cross, mut dot) = (0.0, 0.0);
    for (pe, pg) in e.iter().zip(&g) {
        let a = pe.position - ce;
        let b = pg.position - cg;
        cross += a.x * b.y - a.y * b.x;
        dot += a.x * b.x + a.y * b.y;
    }
    let yaw = cross.atan2(dot);
    let translation = cg - yaw_quat(yaw).rotate(&ce);
    Ok(AlignedPair {
        est: transform_poses(&e, yaw, &translation),
        gt: g,
        yaw,
        translation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ate {
    pub translation_rmse: f64,
    pub rotation_rmse_deg: f64,
    pub pairs: usize,
}

/// Position RMSE and geodesic attitude RMSE over the aligned pairs.
pub fn ate(pair: &AlignedPair) -> Ate {
    let n = pair.est.len().max(1) as f64;
    let mut t2 = 0.0;
    let mut r2 = 0.0;
    for (e, g) in pair.est.iter().zip(&pair.gt) {
        t2 += (e.position - g.position).norm_squared();
        let angle = e.attitude.angle_to(&g.attitude);
        r2 += angle * angle;
    }
    Ate {
        translation_rmse: (t2 / n).sqrt(),
        rotation_rmse_deg: (r2 / n).sqrt().to_degrees(),
        pairs: pair.est.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeBin {
    pub distance: f64,
    /// Translation error of each segment, m.
    pub translation: Vec<f64>,
    /// Rotation error of each segment, deg.
    pub rotation: Vec<f64>,
    /// Set when the trajectory is shorter than `distance`.
    pub too_short: bool,
}

/// Cumulative ground-truth arc length.
pub fn arc_length(poses: &[Pose]) -> Vec<f64> {
    let mut d = Vec::with_capacity(poses.len());
    let mut acc = 0.0;
    for (i, p) in poses.iter().enumerate() {
        if i > 0 {
            acc += (p.position - poses[i - 1].position).norm();
        }
        d.push(acc);
    }
    d
}

/// For every start pose and every distance, compares the relative motion
/// over the first segment whose ground-truth arc length reaches the
/// distance.
pub fn relative_errors(pair: &AlignedPair, distances: &[f64]) -> Vec<RelativeBin> {
    let dist = arc_length(&pair.gt);
    let total = dist.last().copied().unwrap_or(0.0);
    distances
        .iter()
        .map(|&d| {
            let mut bin = RelativeBin {
                distance: d,
                translation: Vec::new(),
                rotation: Vec::new(),
                too_short: total < d,
            };
            for i in 0..dist.len() {
                let j = dist.partition_point(|&x| x < dist[i] + d);
                if j >= dist.len() {
                    break;
                }
                let (gi, gj) = (&pair.gt[i], &pair.gt[j]);
                let (ei, ej) = (&pair.est[i], &pair.est[j]);
                let dq_g = gi.attitude.conj() * gj.attitude;
                let dq_e = ei.attitude.conj() * ej.attitude;
                let dt_g = gi.attitude.conj().rotate(&(gj.position - gi.position));
                let dt_e = ei.attitude.conj().rotate(&(ej.position - ei.position));
                bin.rotation.push(dq_g.angle_to(&dq_e).to_degrees());
                bin.translation.push(dq_g.conj().rotate(&(dt_e - dt_g)).norm());
            }
            bin
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub distance: f64,
    pub samples: usize,
    pub translation_mean: Option<f64>,
    pub rotation_mean_deg: Option<f64>,
    pub too_short: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ate: Ate,
    pub alignment_yaw_deg: f64,
    pub alignment_translation: [f64; 3],
    pub relative: Vec<BinSummary>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Alignment, ATE and relative errors in one pass.
pub fn evaluate(est: &[Pose], gt: &[Pose], distances: &[f64]) -> Result<(Metrics, Vec<RelativeBin>), EvalError> {
    let pair = align_position_yaw(est, gt)?;
    let bins = relative_errors(&pair, distances);
    let relative = bins
        .iter()
        .map(|b| BinSummary {
            distance: b.distance,
            samples: b.translation.len(),
            translation_mean: mean(&b.translation),
            rotation_mean_deg: mean(&b.rotation),
            too_short: b.too_short,
        })
        .collect();
    let metrics = Metrics {
        ate: ate(&pair),
        alignment_yaw_deg: pair.yaw.to_degrees(),
        alignment_translation: pair.translation.into(),
        relative,
    };
    Ok((metrics, bins))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_metrics(path: &Path, metrics: &Metrics) -> Result<(), EvalError> {
    let text = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

/// `bin,type,value` rows, one per segment sample.
pub fn write_rel_errors(path: &Path, bins: &[RelativeBin]) -> Result<(), EvalError> {
    let mut out = String::from("bin,type,value\n");
    for b in bins {
        for v in &b.translation {
            out.push_str(&format!("{},translation,{}\n", b.distance, v));
        }
        for v in &b.rotation {
            out.push_str(&format!("{},rotation,{}\n", b.distance, v));
        }
    }
    std::fs::write(path, out).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{quat_from_euler, EulerAngles};

    fn wiggly(n: usize) -> Vec<Pose> {
        (0..n)
            .map(|i| {
                let t = i as f64 * 0.1;
                Pose {
                    t,
                    position: Vec3::new(10.0 * (0.1 * t).sin(), 5.0 * (0.2 * t).sin(), 0.3 * t.cos()),
                    attitude: quat_from_euler(&EulerAngles::new(0.05 * t.sin(), 0.02, 0.1 * t)),
                }
            })
            .collect()
    }

    #[test]
    fn identity_alignment() {
        let gt = wiggly(100);
        let pair = align_position_yaw(&gt, &gt).unwrap();
        assert!(pair.yaw.abs() < 1e-12 && pair.translation.norm() < 1e-12);
        let a = ate(&pair);
        assert!(a.translation_rmse < 1e-12 && a.rotation_rmse_deg < 1e-6);
    }

    #[test]
    fn recovers_yaw_and_shift() {
        let gt = wiggly(100);
        let est = transform_poses(&gt, 30f64.to_radians(), &Vec3::new(1.0, 2.0, 0.0));
        let pair = align_position_yaw(&est, &gt).unwrap();
        assert!((pair.yaw.to_degrees() + 30.0).abs() < 1e-9);
        let a = ate(&pair);
        assert!(a.translation_rmse < 1e-9 && a.rotation_rmse_deg < 1e-6);
    }

    #[test]
    fn single_pair_is_rejected() {
        let gt = wiggly(1);
        assert!(matches!(align_position_yaw(&gt, &gt), Err(EvalError::TooFewPairs { found: 1 })));
    }

    #[test]
    fn one_displaced_pose_rmse() {
        let gt = wiggly(100);
        let mut est = gt.clone();
        est[40].position.x += 1.0;
        let pair = AlignedPair {
            est,
            gt,
            yaw: 0.0,
            translation: Vec3::zeros(),
        };
        assert!((ate(&pair).translation_rmse - 0.1).abs() < 1e-12);
    }

    #[test]
    fn association_gate_and_injectivity() {
        let gt = wiggly(10);
        let mut est = gt.clone();
        for p in &mut est {
            p.t += 0.005;
        }
        est.push(Pose { t: 5.0, ..est[0] });
        let pairs = associate(&est, &gt, ASSOCIATION_GATE);
        assert_eq!(pairs.len(), 10);
        assert!(pairs.windows(2).all(|w| w[0].1 < w[1].1));
    }

    #[test]
    fn short_trajectory_flags_bins() {
        let gt = wiggly(20);
        let pair = align_position_yaw(&gt, &gt).unwrap();
        let bins = relative_errors(&pair, &DEFAULT_DISTANCES);
        assert!(bins.iter().all(|b| b.too_short && b.translation.is_empty()));
    }
}
