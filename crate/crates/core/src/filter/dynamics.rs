use nalgebra::Matrix3;

use super::{idx, AugmentedBelief, Mat12, Mat18};
use crate::geom::{skew, Vec3};
use crate::model::{Extrinsics, NoiseConfig};

/// Continuous-time DR error dynamics `δẋ = F δx + G w` with
/// `w = (n_r, n_g, n_bg, n_sr)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDynamics {
    pub f: Mat12,
    pub g: Mat12,
}

pub fn assemble_error_dynamics(
    belief: &AugmentedBelief,
    v_radar: &Vec3,
    omega: &Vec3,
    ext: &Extrinsics,
    noise: &NoiseConfig,
) -> ErrorDynamics {
    let c_bn = belief.dr.attitude.to_rot();
    let c_rb = ext.rot_r_b();
    let lever = ext.p_r_b;
    let v_hat = belief.dr.scale.component_mul(v_radar);
    let c_bn_c_rb = c_bn * c_rb;

    let mut f = Mat12::zeros();
    let vel_term = c_bn * (skew(omega) * lever) - c_bn_c_rb * v_hat;
    f.fixed_view_mut::<3, 3>(idx::POS, idx::ATT)
        .copy_from(&(-skew(&vel_term)));
    f.fixed_view_mut::<3, 3>(idx::POS, idx::BIAS)
        .copy_from(&(-c_bn * skew(&lever)));
    f.fixed_view_mut::<3, 3>(idx::POS, idx::SCALE)
        .copy_from(&(c_bn_c_rb * Matrix3::from_diagonal(v_radar)));
    f.fixed_view_mut::<3, 3>(idx::ATT, idx::BIAS).copy_from(&c_bn);
    f.fixed_view_mut::<3, 3>(idx::BIAS, idx::BIAS)
        .copy_from(&(-Matrix3::identity() / noise.tau_gyro_bias));
    f.fixed_view_mut::<3, 3>(idx::SCALE, idx::SCALE)
        .copy_from(&(-Matrix3::identity() / noise.tau_scale));

    let mut g = Mat12::zeros();
    g.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(c_bn_c_rb * Matrix3::from_diagonal(&belief.dr.scale)));
    g.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(c_bn * skew(&lever)));
    g.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-c_bn));
    g.fixed_view_mut::<6, 6>(6, 6).fill_with_identity();

    ErrorDynamics { f, g }
}

/// Second-order truncation `I + F T + ½ F² T²`.
pub fn discretize_phi(f: &Mat12, period: f64) -> Mat12 {
    let ft = f * period;
    Mat12::identity() + ft + 0.5 * ft * ft
}

/// How the position is advanced over one radar period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PositionStep {
    Hold,
    /// `p += v_k T`.
    ZeroOrderHold,
    /// `p += ½ (v_{k−1} + v_k) T` with the given `v_{k−1}`.
    Trapezoidal(Vec3),
}

/// Radar-epoch time update: covariance propagation of the augmented
/// system, position advance with a zero-order hold, and the Markov mean
/// decay of the bias and scale estimates.
///
/// The attitude must already be integrated to the epoch. Returns the body
/// velocity in the navigation frame used for the position step.
#[allow(clippy::too_many_arguments)]
pub fn time_update(
    belief: &mut AugmentedBelief,
    v_radar: &Vec3,
    q_scan: &Matrix3<f64>,
    omega: &Vec3,
    ext: &Extrinsics,
    noise: &NoiseConfig,
    period: f64,
    step: PositionStep,
) -> Vec3 {
    let velocity = crate::mech::body_velocity_from_radar(
        v_radar,
        &belief.dr.scale,
        omega,
        &belief.dr.attitude,
        ext,
    );
    let mut dynamics = assemble_error_dynamics(belief, v_radar, omega, ext, noise);
    gate_scale_columns(&mut dynamics.f, v_radar, q_scan, noise.scale_excitation_gate);
    if let PositionStep::Trapezoidal(prev) = step {
        // Attitude coupling of the velocity actually integrated, so that a
        // common attitude error leaves the clone-relative displacement
        // unchanged.
        dynamics
            .f
            .fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&skew(&(0.5 * (prev + velocity))));
    }
    let phi = discretize_phi(&dynamics.f, period);

    let mut qd = Mat12::zeros();
    qd.fixed_view_mut::<3, 3>(0, 0).copy_from(q_scan);
    let blocks = [
        (3, noise.sigma_gyro),
        (6, noise.sigma_gyro_bias),
        (9, noise.sigma_scale),
    ];
    for (offset, sigma) in blocks {
        for i in 0..3 {
            qd[(offset + i, offset + i)] = sigma * sigma;
        }
    }
    qd *= period;

    let p11 = belief.cov.fixed_view::<12, 12>(0, 0).into_owned();
    let p12 = belief.cov.fixed_view::<12, 6>(0, 12).into_owned();
    let xi = phi * p11 * phi.transpose() + dynamics.g * qd * dynamics.g.transpose();
    let cross = phi * p12;
    let mut cov = belief.cov;
    cov.fixed_view_mut::<12, 12>(0, 0).copy_from(&xi);
    cov.fixed_view_mut::<12, 6>(0, 12).copy_from(&cross);
    cov.fixed_view_mut::<6, 12>(12, 0).copy_from(&cross.transpose());
    belief.cov = symmetrize(&cov);
    belief.upsilon = phi * belief.upsilon;

    let dr = &mut belief.dr;
    match step {
        PositionStep::Hold => {}
        PositionStep::ZeroOrderHold => dr.position += velocity * period,
        PositionStep::Trapezoidal(prev) => dr.position += 0.5 * (prev + velocity) * period,
    }
    dr.gyro_bias *= (-period / noise.tau_gyro_bias).exp();
    dr.scale *= (-period / noise.tau_scale).exp();
    belief.t += period;
    velocity
}

/// Zeroes the scale columns of `F` on axes whose measured radar velocity
/// lies within `gate` standard deviations of zero. There the velocity is
/// mostly noise and the column would correlate with the noise it carries.
pub fn gate_scale_columns(f: &mut Mat12, v_radar: &Vec3, q_scan: &Matrix3<f64>, gate: f64) {
    for i in 0..3 {
        if v_radar[i].abs() < gate * q_scan[(i, i)].sqrt() {
            f.fixed_view_mut::<3, 1>(0, 9 + i).fill(0.0);
        }
    }
}

pub(crate) fn symmetrize(p: &Mat18) -> Mat18 {
    0.5 * (p + p.transpose())
}
