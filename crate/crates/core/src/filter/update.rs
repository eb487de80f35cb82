use nalgebra::{DMatrix, DVector, SMatrix, Vector2};

use super::dynamics::symmetrize;
use super::{idx, AugmentedBelief, ErrorState, FilterError, Vec18};
use crate::geom::{
    euler_from_quat, quat_mul, skew, small_angle_quat, wrap_pi, EulerAngles, GeomError, UnitQuat,
    Vec3,
};
use crate::model::{Extrinsics, NoiseConfig};

/// Innovation covariances with a larger condition number are rejected.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Largest |pitch| accepted by the tilt model, rad.
pub const MAX_TILT_PITCH: f64 = 80.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    /// Error estimate that was injected.
    pub correction: ErrorState,
    pub residual_norm: f64,
    pub condition: f64,
}

/// Predicted position of the radar at scan k expressed in the radar frame
/// of the clone epoch.
pub fn predicted_radar_displacement(belief: &AugmentedBelief, ext: &Extrinsics) -> Vec3 {
    let c_br = ext.rot_b_r();
    let c_clone = belief.clone.attitude.to_rot();
    let d = displacement(belief, ext);
    c_br * (c_clone.transpose() * d) - c_br * ext.p_r_b
}

fn displacement(belief: &AugmentedBelief, ext: &Extrinsics) -> Vec3 {
    belief.dr.position + belief.dr.attitude.rotate(&ext.p_r_b) - belief.clone.position
}

/// Residual `ẑ − p̄` of the ICP translation and its Jacobian with respect
/// to the augmented error state.
pub fn range_residual(
    belief: &AugmentedBelief,
    measured: &Vec3,
    ext: &Extrinsics,
    max_clone_age: f64,
) -> Result<(Vec3, SMatrix<f64, 3, 18>), FilterError> {
    let age = belief.t - belief.clone.t;
    if age > max_clone_age {
        return Err(FilterError::StaleClone {
            age,
            max_age: max_clone_age,
        });
    }
    let a = ext.rot_b_r() * belief.clone.attitude.to_rot().transpose();
    let d = displacement(belief, ext);
    let lever_n = belief.dr.attitude.rotate(&ext.p_r_b);

    let mut inner = SMatrix::<f64, 3, 18>::zeros();
    inner
        .fixed_view_mut::<3, 3>(0, idx::POS)
        .fill_with_identity();
    inner
        .fixed_view_mut::<3, 3>(0, idx::ATT)
        .copy_from(&skew(&lever_n));
    inner
        .fixed_view_mut::<3, 3>(0, idx::CLONE_POS)
        .copy_from(&(-nalgebra::Matrix3::identity()));
    inner
        .fixed_view_mut::<3, 3>(0, idx::CLONE_ATT)
        .copy_from(&skew(&(-d)));
    let h = a * inner;
    let z = predicted_radar_displacement(belief, ext) - measured;
    Ok((z, h))
}

/// Removes the accelerometer bias and the radar-derived linear
/// acceleration from a specific-force reading.
pub fn compensate_accel(
    f: &Vec3,
    belief: &AugmentedBelief,
    v_now: &Vec3,
    v_prev: &Vec3,
    period: f64,
) -> Vec3 {
    let accel_n = (v_now - v_prev) / period;
    f - belief.accel_bias - belief.dr.attitude.to_rot().transpose() * accel_n
}

/// Roll and pitch of the body from a gravity-dominated specific force.
pub fn tilt_measurement(f: &Vec3, gravity: f64) -> Result<(f64, f64), FilterError> {
    let norm = f.norm();
    if norm <= 0.5 * gravity {
        return Err(FilterError::FreeFall { norm });
    }
    let roll = (-f.y).atan2(-f.z);
    let pitch = (f.x / f.y.hypot(f.z)).atan();
    Ok((roll, pitch))
}

/// Tilt Jacobian `H_a` with respect to δΨ and the current Euler angles.
pub fn tilt_update_model(
    q: &UnitQuat,
) -> Result<(SMatrix<f64, 2, 3>, EulerAngles), GeomError> {
    let e = euler_from_quat(q)?;
    if e.pitch.abs() >= MAX_TILT_PITCH {
        return Err(GeomError::GimbalLock {
            pitch: e.pitch,
            margin: std::f64::consts::FRAC_PI_2 - MAX_TILT_PITCH,
        });
    }
    let (sy, cy) = e.yaw.sin_cos();
    let cp = e.pitch.cos();
    let h = SMatrix::<f64, 2, 3>::new(-cy / cp, -sy / cp, 0.0, sy, -cy, 0.0);
    Ok((h, e))
}

/// `(φ̂, θ̂) − (φ̄_a, θ̄_a)` with the roll difference wrapped.
pub fn tilt_residual(estimate: &EulerAngles, measured: (f64, f64)) -> Vector2<f64> {
    Vector2::new(
        wrap_pi(estimate.roll - measured.0),
        estimate.pitch - measured.1,
    )
}

/// Tilt noise, inflated when the specific-force magnitude departs from g
/// by more than γ.
pub fn adaptive_tilt_sigma(f: &Vec3, noise: &NoiseConfig) -> f64 {
    let d = (f.norm() - noise.gravity).abs();
    if d <= noise.gamma {
        noise.sigma_tilt
    } else {
        let ratio = d / noise.gamma;
        noise.sigma_tilt * (1.0 + noise.kappa * ratio * ratio).sqrt()
    }
}

/// Stacked EKF update with Joseph-form covariance, error injection into
/// the DR state and the clone, and re-cloning.
///
/// The scale estimate is clamped to `scale_bounds` after injection.
pub fn measurement_update(
    belief: &mut AugmentedBelief,
    z: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    scale_bounds: (f64, f64),
) -> Result<UpdateReport, FilterError> {
    let rows = z.len();
    if h.nrows() != rows || h.ncols() != idx::DIM || r.nrows() != rows || r.ncols() != rows {
        return Err(FilterError::Config(format!(
            "measurement dimensions z {rows}, H {}x{}, R {}x{}",
            h.nrows(),
            h.ncols(),
            r.nrows(),
            r.ncols()
        )));
    }
    let p = DMatrix::from_column_slice(idx::DIM, idx::DIM, belief.cov.as_slice());
    let pht = &p * h.transpose();
    let s = h * &pht + r;
    let s = 0.5 * (&s + s.transpose());
    let eig = s.clone().symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_INNOVATION_CONDITION) {
        return Err(FilterError::SingularInnovation { condition });
    }
    let chol = s
        .cholesky()
        .ok_or(FilterError::SingularInnovation { condition })?;
    // K = P Hᵀ S⁻¹, computed as (S⁻¹ H P)ᵀ.
    let k = chol.solve(&pht.transpose()).transpose();
    let dx = &k * z;

    let ikh = DMatrix::<f64>::identity(idx::DIM, idx::DIM) - &k * h;
    let joseph = &ikh * &p * ikh.transpose() + &k * r * k.transpose();
    let mut cov = belief.cov;
    cov.copy_from(&joseph);
    belief.cov = symmetrize(&cov);

    let correction = ErrorState(Vec18::from_column_slice(dx.as_slice()));
    inject(belief, &correction, scale_bounds);
    reclone(belief);

    Ok(UpdateReport {
        correction,
        residual_norm: z.norm(),
        condition,
    })
}

fn inject(belief: &mut AugmentedBelief, dx: &ErrorState, scale_bounds: (f64, f64)) {
    let dr = &mut belief.dr;
    dr.position -= dx.position();
    dr.attitude = quat_mul(&small_angle_quat(&dx.attitude()), &dr.attitude);
    dr.gyro_bias -= dx.gyro_bias();
    dr.scale -= dx.scale();
    let (lo, hi) = scale_bounds;
    dr.scale = dr.scale.map(|s| s.clamp(lo, hi));
    belief.clone.position -= dx.clone_position();
    belief.clone.attitude = quat_mul(
        &small_angle_quat(&dx.clone_attitude()),
        &belief.clone.attitude,
    );
}

/// Copies the current DR pose into the clone with perfect correlation and
/// resets the transition accumulator.
pub fn reclone(belief: &mut AugmentedBelief) {
    belief.clone.position = belief.dr.position;
    belief.clone.attitude = belief.dr.attitude;
    belief.clone.t = belief.t;
    let pose = belief.cov.fixed_view::<6, 6>(0, 0).into_owned();
    let rows = belief.cov.fixed_view::<12, 6>(0, 0).into_owned();
    belief
        .cov
        .fixed_view_mut::<6, 6>(idx::CLONE_POS, idx::CLONE_POS)
        .copy_from(&pose);
    belief
        .cov
        .fixed_view_mut::<12, 6>(0, idx::CLONE_POS)
        .copy_from(&rows);
    belief
        .cov
        .fixed_view_mut::<6, 12>(idx::CLONE_POS, 0)
        .copy_from(&rows.transpose());
    belief.upsilon = super::Mat12::identity();
    belief.scan_count = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::DrState;
    use crate::geom::quat_from_euler;
    use approx::assert_relative_eq;

    fn belief() -> AugmentedBelief {
        AugmentedBelief::new(DrState::default(), Vec3::zeros(), &NoiseConfig::default(), 0.0)
    }

    #[test]
    fn range_residual_trivial() {
        let b = belief();
        let (z, _) = range_residual(&b, &Vec3::zeros(), &Extrinsics::identity(), 1.0).unwrap();
        assert_eq!(z, Vec3::zeros());
    }

    #[test]
    fn range_residual_unit_displacement() {
        let mut b = belief();
        b.dr.position = Vec3::x();
        let (z, h) = range_residual(&b, &Vec3::x(), &Extrinsics::identity(), 1.0).unwrap();
        assert_eq!(z, Vec3::zeros());
        assert_eq!(h.fixed_view::<3, 3>(0, 0).into_owned(), nalgebra::Matrix3::identity());
        assert_eq!(h.fixed_view::<3, 3>(0, 12).into_owned(), -nalgebra::Matrix3::identity());
    }

    #[test]
    fn stale_clone_is_rejected() {
        let mut b = belief();
        b.t = 0.7;
        assert!(matches!(
            range_residual(&b, &Vec3::zeros(), &Extrinsics::identity(), 0.6),
            Err(FilterError::StaleClone { .. })
        ));
    }

    #[test]
    fn accel_compensation() {
        let mut b = belief();
        let f = Vec3::new(1.0, 0.0, -9.81);
        assert_eq!(compensate_accel(&f, &b, &Vec3::x(), &Vec3::x(), 0.1), f);
        let fa = compensate_accel(&f, &b, &Vec3::new(1.1, 0.0, 0.0), &Vec3::x(), 0.1);
        assert_relative_eq!(fa, Vec3::new(0.0, 0.0, -9.81), epsilon = 1e-12);
        b.accel_bias = Vec3::new(0.1, 0.0, 0.0);
        let fb = compensate_accel(&f, &b, &Vec3::zeros(), &Vec3::zeros(), 0.1);
        assert_eq!(fb, f - Vec3::new(0.1, 0.0, 0.0));
    }

    #[test]
    fn tilt_examples() {
        assert_eq!(tilt_measurement(&Vec3::new(0.0, 0.0, -9.81), 9.81).unwrap(), (0.0, 0.0));
        let (r, p) = tilt_measurement(&Vec3::new(4.905, 0.0, -8.496), 9.81).unwrap();
        assert!(r.abs() < 1e-12 && (p.to_degrees() - 30.0).abs() < 1e-3);
        let (r, p) = tilt_measurement(&Vec3::new(0.0, -4.905, -8.496), 9.81).unwrap();
        assert!((r.to_degrees() - 30.0).abs() < 1e-3 && p.abs() < 1e-12);
        assert!(matches!(
            tilt_measurement(&Vec3::new(0.0, 0.0, -1.0), 9.81),
            Err(FilterError::FreeFall { .. })
        ));
    }

    #[test]
    fn tilt_model_examples() {
        let (h, _) = tilt_update_model(&UnitQuat::identity()).unwrap();
        assert_relative_eq!(h, SMatrix::<f64, 2, 3>::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0));
        let q = quat_from_euler(&EulerAngles::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let (h, _) = tilt_update_model(&q).unwrap();
        assert_relative_eq!(h, SMatrix::<f64, 2, 3>::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0), epsilon = 1e-15);
        let steep = quat_from_euler(&EulerAngles::new(0.0, 85f64.to_radians(), 0.0));
        assert!(tilt_update_model(&steep).is_err());
    }

    #[test]
    fn adaptive_sigma_examples() {
        let noise = NoiseConfig::default();
        let g = noise.gravity;
        assert_eq!(adaptive_tilt_sigma(&Vec3::new(0.0, 0.0, -g), &noise), noise.sigma_tilt);
        let at_gamma = Vec3::new(0.0, 0.0, -(g + noise.gamma));
        assert_eq!(adaptive_tilt_sigma(&at_gamma, &noise), noise.sigma_tilt);
        let two_gamma = Vec3::new(0.0, 0.0, -(g + 2.0 * noise.gamma));
        assert_relative_eq!(
            adaptive_tilt_sigma(&two_gamma, &noise),
            noise.sigma_tilt * 401f64.sqrt(),
            max_relative = 1e-6
        );
    }

    #[test]
    fn zero_residual_shrinks_covariance() {
        let mut b = belief();
        b.cov[(0, 0)] = 1.0;
        let before = b.clone();
        let mut h = DMatrix::zeros(3, 18);
        h.view_mut((0, 0), (3, 3)).fill_with_identity();
        let r = DMatrix::identity(3, 3);
        let report = measurement_update(&mut b, &DVector::zeros(3), &h, &r, (0.5, 1.5)).unwrap();
        assert_eq!(report.correction.0, Vec18::zeros());
        assert_eq!(b.dr, before.dr);
        assert!(b.cov.trace() < before.cov.trace());
    }

    #[test]
    fn scalar_kalman_analog() {
        let mut b = belief();
        b.cov = super::super::Mat18::zeros();
        b.cov[(0, 0)] = 1.0;
        let mut h = DMatrix::zeros(1, 18);
        h[(0, 0)] = 1.0;
        let r = DMatrix::identity(1, 1);
        let report = measurement_update(&mut b, &DVector::from_element(1, 0.5), &h, &r, (0.5, 1.5)).unwrap();
        assert_relative_eq!(report.correction.0[0], 0.25);
        assert_relative_eq!(b.cov[(0, 0)], 0.5);
        assert_relative_eq!(b.dr.position.x, -0.25);
    }

    #[test]
    fn singular_innovation_is_reported() {
        let mut b = belief();
        b.cov = super::super::Mat18::zeros();
        let mut h = DMatrix::zeros(1, 18);
        h[(0, 0)] = 1.0;
        let r = DMatrix::zeros(1, 1);
        assert!(matches!(
            measurement_update(&mut b, &DVector::zeros(1), &h, &r, (0.5, 1.5)),
            Err(FilterError::SingularInnovation { .. })
        ));
    }

    #[test]
    fn attitude_injection_reduces_error() {
        let truth = quat_from_euler(&EulerAngles::new(0.1, -0.2, 0.5));
        let err = Vec3::new(0.01, 0.0, 0.0);
        // q_true = δq(δΨ) ⊗ q̂  ⇒  q̂ = δq(δΨ)⁻¹ ⊗ q_true.
        let estimate = quat_mul(&small_angle_quat(&err).conj(), &truth);
        let mut b = AugmentedBelief::new(
            DrState {
                attitude: estimate,
                ..DrState::default()
            },
            Vec3::zeros(),
            &NoiseConfig::default(),
            0.0,
        );
        let mut h = DMatrix::zeros(3, 18);
        h.view_mut((0, 3), (3, 3)).fill_with_identity();
        let z = DVector::from_column_slice(err.as_slice());
        let r = DMatrix::identity(3, 3) * 1e-8;
        measurement_update(&mut b, &z, &h, &r, (0.5, 1.5)).unwrap();
        assert!(b.dr.attitude.angle_to(&truth) < estimate.angle_to(&truth) * 0.1);
    }

    #[test]
    fn reclone_block_identities() {
        let mut b = belief();
        for i in 0..12 {
            for j in 0..12 {
                b.cov[(i, j)] = ((i * 7 + j * 7) % 5) as f64 * 0.01 + if i == j { 1.0 } else { 0.0 };
            }
        }
        b.t = 3.0;
        reclone(&mut b);
        let pose = b.cov.fixed_view::<6, 6>(0, 0).into_owned();
        assert_eq!(b.cov.fixed_view::<6, 6>(12, 12).into_owned(), pose);
        assert_eq!(
            b.cov.fixed_view::<12, 6>(0, 12).into_owned(),
            b.cov.fixed_view::<12, 6>(0, 0).into_owned()
        );
        assert_eq!(b.clone.t, 3.0);
        assert_eq!(b.scan_count, 0);
    }
}
