//! Point-to-point ICP between two radar inlier clouds.
//!
//! The returned transform maps source (scan `k`) points into the target
//! (scan `k-M`) frame: `x_target = R x_source + t`. Its translation is the
//! position of radar `k` expressed in radar frame `k-M`.

use std::collections::HashMap;

use nalgebra::{Matrix3, SVD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{rot_angle, RotMat, Vec3};

/// Target clouds at or above this size use a hash grid for neighbour search.
const GRID_THRESHOLD: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IcpError {
    #[error("too few points: source {source_len}, target {target_len}, need {min}")]
    TooFewPoints {
        source_len: usize,
        target_len: usize,
        min: usize,
    },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Stop once the incremental transform changes by less than this
    /// (translation metres + rotation radians).
    pub tolerance: f64,
    pub max_correspondence_distance: f64,
    pub min_points: usize,
    /// Pairs whose residual exceeds `trim_factor × RMS` of the previous
    /// iteration are dropped; `0` disables trimming.
    pub trim_factor: f64,
    /// Trimming never cuts below this distance, m.
    pub trim_floor: f64,
    /// Only keep pairs that are mutual nearest neighbours.
    pub reciprocal: bool,
    pub sigma_floor: f64,
    pub sigma_gain: f64,
    /// Results whose rotation departs from the prediction by more than this
    /// are rejected by the filter, degrees.
    pub max_rotation_deviation_deg: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-6,
            max_correspondence_distance: 0.5,
            min_points: 10,
            trim_factor: 3.0,
            trim_floor: 0.05,
            reciprocal: true,
            sigma_floor: 0.05,
            sigma_gain: 2.0,
            max_rotation_deviation_deg: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub rotation: RotMat,
    pub translation: Vec3,
    /// RMS of the matched residuals after the final alignment, m.
    pub fitness: f64,
    pub matched_count: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Per iteration: (RMS before alignment, RMS after alignment) on that
    /// iteration's correspondences.
    pub rms_history: Vec<(f64, f64)>,
}

/// Noise level for the translation measurement from the ICP residual.
pub fn fitness_to_sigma(fitness: f64, matched_count: usize, params: &IcpParams) -> f64 {
    let n = matched_count.max(1) as f64;
    params.sigma_floor.max(params.sigma_gain * fitness / n.sqrt())
}

enum Neighbours<'a> {
    Brute(&'a [Vec3]),
    Grid {
        points: &'a [Vec3],
        cell: f64,
        cells: HashMap<(i64, i64, i64), Vec<usize>>,
    },
}

impl<'a> Neighbours<'a> {
    fn new(points: &'a [Vec3], radius: f64) -> Self {
        if points.len() < GRID_THRESHOLD || !radius.is_finite() || radius <= 0.0 {
            return Neighbours::Brute(points);
        }
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_of(p, radius)).or_default().push(i);
        }
        Neighbours::Grid {
            points,
            cell: radius,
            cells,
        }
    }

    /// Nearest point and its squared distance. The grid variant only sees
    /// points within one cell size.
    fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        match self {
            Neighbours::Brute(points) => points
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm_squared()))
                .min_by(|a, b| a.1.total_cmp(&b.1)),
            Neighbours::Grid {
                points,
                cell,
                cells,
            } => {
                let (cx, cy, cz) = cell_of(q, *cell);
                let mut best: Option<(usize, f64)> = None;
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        for dz in -1..=1 {
                            let Some(bucket) = cells.get(&(cx + dx, cy + dy, cz + dz)) else {
                                continue;
                            };
                            for &i in bucket {
                                let d = (points[i] - q).norm_squared();
                                if best.is_none_or(|(_, b)| d < b) {
                                    best = Some((i, d));
                                }
                            }
                        }
                    }
                }
                best
            }
        }
    }
}

fn cell_of(p: &Vec3, cell: f64) -> (i64, i64, i64) {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

/// Closed-form rigid alignment (Kabsch) of matched pairs `dst ≈ R src + t`.
fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Result<(RotMat, Vec3), IcpError> {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = SVD::new(h, true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0] {
        return Err(IcpError::DegenerateGeometry(
            "cross-covariance rank < 2".into(),
        ));
    }
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested V^T").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    Ok((r, cd - r * cs))
}

pub fn icp_register(
    source: &[Vec3],
    target: &[Vec3],
    init: (RotMat, Vec3),
    params: &IcpParams,
) -> Result<IcpResult, IcpError> {
    if source.len() < params.min_points || target.len() < params.min_points {
        return Err(IcpError::TooFewPoints {
            source_len: source.len(),
            target_len: target.len(),
            min: params.min_points,
        });
    }
    let max_d = params.max_correspondence_distance;
    let target_index = Neighbours::new(target, max_d);
    let (mut r, mut t) = init;
    let mut history = Vec::new();
    let mut converged = false;
    let mut prev_rms = f64::INFINITY;
    let mut matched_count = 0;
    let mut iterations = 0;

    for _ in 0..params.max_iterations {
        iterations += 1;
        let moved: Vec<Vec3> = source.iter().map(|p| r * p + t).collect();
        let source_index = params.reciprocal.then(|| Neighbours::new(&moved, max_d));
        let gate = if params.trim_factor > 0.0 && prev_rms.is_finite() {
            max_d.min((params.trim_factor * prev_rms).max(params.trim_floor))
        } else {
            max_d
        };
        let gate2 = gate * gate;

        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut before = 0.0;
        for (i, p) in moved.iter().enumerate() {
            let Some((j, d2)) = target_index.nearest(p) else {
                continue;
            };
            if d2 > gate2 {
                continue;
            }
            if let Some(index) = &source_index {
                if index.nearest(&target[j]).map(|(k, _)| k) != Some(i) {
                    continue;
                }
            }
            before += d2;
            src.push(source[i]);
            dst.push(target[j]);
        }
        if src.len() < 3 {
            return Err(IcpError::DegenerateGeometry(format!(
                "only {} matched pairs",
                src.len()
            )));
        }
        let (r_new, t_new) = kabsch(&src, &dst)?;
        let after: f64 = src
            .iter()
            .zip(&dst)
            .map(|(s, d)| (r_new * s + t_new - d).norm_squared())
            .sum();
        let n = src.len() as f64;
        let rms_after = (after / n).sqrt();
        history.push(((before / n).sqrt(), rms_after));
        let change = (t_new - t).norm() + rot_angle(&(r_new * r.transpose()));
        r = r_new;
        t = t_new;
        matched_count = src.len();
        prev_rms = rms_after;
        if change < params.tolerance {
            converged = true;
            break;
        }
    }

    Ok(IcpResult {
        rotation: r,
        translation: t,
        fitness: prev_rms,
        matched_count,
        converged,
        iterations,
        rms_history: history,
    })
}
