use lodo::dataio::{
    make_synthetic_sequence, read_calib, read_poses, relative_gt, write_poses, CalibTr,
    SyntheticConfig,
};
use lodo::evaluation::{accumulate, odometry_errors, subsequence_set};
use lodo::geometry::{compose, delta_to_transform, invert, RigidTransform, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_walk(seed: u64, n: usize) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut poses = vec![RigidTransform::identity()];
    for _ in 1..n {
        let d = lodo::PoseDelta::new(
            [
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(0.5..1.5),
            ],
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-1.0..1.0),
            ],
        );
        let last = *poses.last().unwrap();
        poses.push(compose(&last, &delta_to_transform(&d)));
    }
    Trajectory::new(poses).unwrap()
}

#[test]
fn camera_trajectory_survives_lidar_round_trip() {
    let calib = read_calib("Tr: 4.276802e-04 -9.999672e-01 -8.084491e-03 -1.198459e-02 -7.210626e-03 8.081198e-03 -9.999413e-01 -5.403984e-02 9.999738e-01 4.859485e-04 -7.206933e-03 -2.921968e-01\n").unwrap();
    let cam = random_walk(1, 120);
    let velo = accumulate(&relative_gt(&cam, &calib));
    let tr_inv = invert(&calib.tr);
    let c0 = cam.poses()[0];
    for (c, v) in cam.poses().iter().zip(velo.poses()) {
        let back = compose(&compose(&compose(&c0, &calib.tr), v), &tr_inv);
        assert!((back.matrix() - c.matrix()).amax() < 1e-6);
    }
}

#[test]
fn evaluation_after_text_round_trip_is_zero() {
    let gt = random_walk(2, 300);
    let pred = read_poses(&write_poses(&gt)).unwrap();
    let set = subsequence_set(&gt, &[50.0, 100.0], 1).unwrap();
    assert!(!set.is_empty());
    let e = odometry_errors(&gt, &pred, &set).unwrap();
    assert_eq!((e.e_t, e.e_r), (0.0, 0.0));
}

#[test]
fn synthetic_sequence_ground_truth_reaccumulates() {
    let cfg = SyntheticConfig {
        n_points: 64,
        ..SyntheticConfig::default()
    };
    let (_, traj) = make_synthetic_sequence(5, 40, &cfg).unwrap();
    let back = accumulate(&relative_gt(&traj, &CalibTr::identity()));
    for (a, b) in traj.poses().iter().zip(back.poses()) {
        assert!((a.matrix() - b.matrix()).amax() < 1e-9);
    }
}
