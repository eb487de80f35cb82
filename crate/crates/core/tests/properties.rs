use dero::egovel::{ransac_ego_velocity, RansacParams};
use dero::eval::{align_position_yaw, ate, relative_errors, transform_poses, AlignedPair, Pose};
use dero::geom::{quat_from_euler, EulerAngles, RotMat, UnitQuat, Vec3};
use dero::model::{RadarScan, RadarTarget};
use dero::scanmatch::{icp_register, IcpParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn rand_quat() -> impl Strategy<Value = UnitQuat> {
    (-PI..PI, -1.4..1.4f64, -PI..PI).prop_map(|(r, p, y)| quat_from_euler(&EulerAngles::new(r, p, y)))
}

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn static_scan(v: &Vec3, n: usize, outliers: usize, seed: u64) -> RadarScan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets = (0..n)
        .map(|i| {
            let p = Vec3::new(rng.random_range(1.0..10.0), rng.random_range(-6.0..6.0), rng.random_range(-3.0..3.0));
            let mut doppler = -p.normalize().dot(v);
            if i < outliers {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                doppler += sign * rng.random_range(0.5..5.0);
            }
            RadarTarget::new(p, doppler)
        })
        .collect();
    RadarScan { t: 0.0, targets }
}

fn wiggly(n: usize) -> Vec<Pose> {
    (0..n)
        .map(|i| {
            let t = i as f64 * 0.1;
            Pose {
                t,
                position: Vec3::new(3.0 * (0.2 * t).cos(), 2.0 * (0.4 * t).sin(), 0.3 * (0.7 * t).sin()),
                attitude: quat_from_euler(&EulerAngles::new(0.1 * (0.3 * t).sin(), 0.05 * t.cos(), 0.2 * t)),
            }
        })
        .collect()
}

fn perturbed(poses: &[Pose], seed: u64) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    poses
        .iter()
        .map(|p| Pose {
            t: p.t,
            position: p.position + Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)),
            attitude: UnitQuat::from_rotation_vector(&(Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 0.02)) * p.attitude,
        })
        .collect()
}

fn rigid(poses: &[Pose], q: &UnitQuat, t: &Vec3) -> Vec<Pose> {
    poses
        .iter()
        .map(|p| Pose {
            t: p.t,
            position: q.rotate(&p.position) + t,
            attitude: *q * p.attitude,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ransac_recovers_noiseless_velocity(v in vec3(3.0), frac in 0.0..0.5f64, seed in any::<u64>()) {
        let n = 40;
        let outliers = (frac * n as f64) as usize;
        let scan = static_scan(&v, n, outliers, seed);
        let params = RansacParams { max_iterations: RansacParams::iterations_for(0.9999, 0.5), rng_seed: seed, ..RansacParams::default() };
        let est = ransac_ego_velocity(&scan, &params, 0.05).unwrap();
        prop_assert!((est.velocity - v).norm() <= 1e-9);
        prop_assert!(est.inliers.iter().all(|&i| i >= outliers));
    }

    #[test]
    fn ransac_is_bit_deterministic(v in vec3(3.0), seed in any::<u64>()) {
        let scan = static_scan(&v, 30, 9, seed);
        let params = RansacParams { rng_seed: seed, ..RansacParams::default() };
        let a = ransac_ego_velocity(&scan, &params, 0.05);
        let b = ransac_ego_velocity(&scan, &params, 0.05);
        prop_assert_eq!(a.ok(), b.ok());
    }

    #[test]
    fn ate_is_invariant_to_yaw_and_translation(yaw in -PI..PI, shift in vec3(50.0), seed in any::<u64>()) {
        let gt = wiggly(200);
        let est = perturbed(&gt, seed);
        let base = ate(&align_position_yaw(&est, &gt).unwrap());
        let moved = transform_poses(&est, yaw, &shift);
        let other = ate(&align_position_yaw(&moved, &gt).unwrap());
        prop_assert!((base.translation_rmse - other.translation_rmse).abs() <= 1e-9);
        prop_assert!((base.rotation_rmse_deg - other.rotation_rmse_deg).abs() <= 1e-9);
    }

    #[test]
    fn relative_errors_ignore_rigid_transforms(qe in rand_quat(), te in vec3(20.0), qg in rand_quat(), tg in vec3(20.0), seed in any::<u64>()) {
        let gt = wiggly(300);
        let est = perturbed(&gt, seed);
        let distances = [2.0, 5.0];
        let pair = |e: Vec<Pose>, g: Vec<Pose>| AlignedPair { est: e, gt: g, yaw: 0.0, translation: Vec3::zeros() };
        let base = relative_errors(&pair(est.clone(), gt.clone()), &distances);
        let moved_est = relative_errors(&pair(rigid(&est, &qe, &te), gt.clone()), &distances);
        let moved_gt = relative_errors(&pair(est, rigid(&gt, &qg, &tg)), &distances);
        for moved in [moved_est, moved_gt] {
            for (a, b) in base.iter().zip(&moved) {
                prop_assert_eq!(a.translation.len(), b.translation.len());
                for (x, y) in a.translation.iter().zip(&b.translation) {
                    prop_assert!((x - y).abs() <= 1e-9);
                }
                for (x, y) in a.rotation.iter().zip(&b.rotation) {
                    prop_assert!((x - y).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn icp_self_registration_is_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud: Vec<Vec3> = (0..80)
            .map(|_| Vec3::new(rng.random_range(0.0..10.0), rng.random_range(-5.0..5.0), rng.random_range(-2.0..2.0)))
            .collect();
        let r = icp_register(&cloud, &cloud, (RotMat::identity(), Vec3::zeros()), &IcpParams::default()).unwrap();
        prop_assert!((r.rotation - RotMat::identity()).norm() <= 1e-9);
        prop_assert!(r.translation.norm() <= 1e-9);
        prop_assert!(r.fitness <= 1e-9);
    }
}
