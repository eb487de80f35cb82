//! Instantaneous radar ego-velocity from Doppler returns.
//!
//! For a static target with line-of-sight unit vector `u`, the measured
//! radial speed is `v_d = -uᵀ v^r`. Stacking the directions into `U` gives
//! the linear system `U v = -d`, solved in the least-squares sense inside a
//! 3-point RANSAC loop.

use nalgebra::{Matrix3, SVD};
use rand::{seq::index::sample, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec3;
use crate::model::{unit_direction, EgoVelEstimate, ModelError, RadarScan, RadarTarget};

/// Below this many targets the residual variance is floored at the nominal
/// Doppler variance.
const SMALL_SAMPLE: usize = 10;
/// Relative singular-value threshold for rank-3 geometry.
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EgoVelError {
    #[error("direction matrix is rank deficient (need rank 3)")]
    RankDeficient,
    #[error("insufficient inliers: found {found}, need {required}")]
    InsufficientInliers { found: usize, required: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub max_iterations: usize,
    /// Consensus gate on |doppler residual|, m/s.
    pub inlier_threshold: f64,
    pub min_inlier_ratio: f64,
    pub rng_seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            max_iterations: 17,
            inlier_threshold: 0.15,
            min_inlier_ratio: 0.25,
            rng_seed: 0,
        }
    }
}

impl RansacParams {
    /// Iterations needed to draw one all-inlier 3-sample with probability
    /// `confidence` when a fraction `outlier_ratio` of targets are outliers.
    pub fn iterations_for(confidence: f64, outlier_ratio: f64) -> usize {
        let good = (1.0 - outlier_ratio).powi(3);
        if good >= 1.0 {
            return 1;
        }
        ((1.0 - confidence).ln() / (1.0 - good).ln()).ceil() as usize
    }
}

/// `v_d + uᵀ v`: zero for a static target observed with velocity `v`.
pub fn doppler_residual(target: &RadarTarget, v: &Vec3) -> Result<f64, ModelError> {
    let u = unit_direction(target)?;
    Ok(target.doppler + u.dot(v))
}

/// Least-squares ego velocity over all `targets`; the covariance is
/// `s² (UᵀU)⁻¹` with the unbiased residual variance `s²`, floored at
/// `sigma_nominal²` for small target counts.
pub fn lsq_ego_velocity(
    targets: &[RadarTarget],
    sigma_nominal: f64,
) -> Result<EgoVelEstimate, EgoVelError> {
    let dirs = targets
        .iter()
        .map(unit_direction)
        .collect::<Result<Vec<_>, _>>()?;
    let (velocity, info_inv) = solve(&dirs, targets)?;
    let n = targets.len();
    let rss: f64 = dirs
        .iter()
        .zip(targets)
        .map(|(u, t)| (t.doppler + u.dot(&velocity)).powi(2))
        .sum();
    let mut s2 = if n > 3 { rss / (n - 3) as f64 } else { 0.0 };
    if n < SMALL_SAMPLE {
        s2 = s2.max(sigma_nominal * sigma_nominal);
    }
    let cov = info_inv * s2;
    Ok(EgoVelEstimate {
        velocity,
        covariance: 0.5 * (cov + cov.transpose()),
        inliers: (0..n).collect(),
    })
}

fn solve(dirs: &[Vec3], targets: &[RadarTarget]) -> Result<(Vec3, Matrix3<f64>), EgoVelError> {
    if dirs.len() < 3 {
        return Err(EgoVelError::RankDeficient);
    }
    let mut ata = Matrix3::zeros();
    let mut atb = Vec3::zeros();
    for (u, t) in dirs.iter().zip(targets) {
        ata += u * u.transpose();
        atb -= u * t.doppler;
    }
    let svd = SVD::new(ata, true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= RANK_TOL * smax {
        return Err(EgoVelError::RankDeficient);
    }
    let inv = svd
        .pseudo_inverse(0.0)
        .map_err(|_| EgoVelError::RankDeficient)?;
    Ok((inv * atb, inv))
}

/// 3-point RANSAC followed by a least-squares refit on the largest
/// consensus set. Deterministic for a given `params.rng_seed`.
pub fn ransac_ego_velocity(
    scan: &RadarScan,
    params: &RansacParams,
    sigma_nominal: f64,
) -> Result<EgoVelEstimate, EgoVelError> {
    let n = scan.targets.len();
    let required = 3usize.max((params.min_inlier_ratio * n as f64).ceil() as usize);
    if n < 3 {
        return Err(EgoVelError::InsufficientInliers { found: n, required });
    }
    let dirs = scan
        .targets
        .iter()
        .map(unit_direction)
        .collect::<Result<Vec<_>, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut best: Vec<usize> = Vec::new();
    for _ in 0..params.max_iterations.max(1) {
        let idx = sample(&mut rng, n, 3).into_vec();
        let sample_dirs: Vec<Vec3> = idx.iter().map(|&i| dirs[i]).collect();
        let sample_targets: Vec<RadarTarget> = idx.iter().map(|&i| scan.targets[i]).collect();
        let Ok((hypothesis, _)) = solve(&sample_dirs, &sample_targets) else {
            continue;
        };
        let consensus: Vec<usize> = (0..n)
            .filter(|&i| {
                (scan.targets[i].doppler + dirs[i].dot(&hypothesis)).abs()
                    <= params.inlier_threshold
            })
            .collect();
        if consensus.len() > best.len() {
            best = consensus;
            if best.len() == n {
                break;
            }
        }
    }

    if best.len() < required {
        return Err(EgoVelError::InsufficientInliers {
            found: best.len(),
            required,
        });
    }
    let inlier_targets: Vec<RadarTarget> = best.iter().map(|&i| scan.targets[i]).collect();
    let mut est = lsq_ego_velocity(&inlier_targets, sigma_nominal)?;
    est.inliers = best;
    Ok(est)
}
