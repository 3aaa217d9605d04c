use lodo::dataio::synthetic_street_scene;
use lodo::pointcloud::{remove_dominant_plane, RansacParams};

#[test]
fn street_scene_plane_is_removed() {
    for seed in 0..5 {
        let (cloud, truth) = synthetic_street_scene(seed, 20_000, 0.45);
        let out = remove_dominant_plane(
            &cloud,
            &RansacParams {
                seed,
                ..RansacParams::default()
            },
        )
        .unwrap();
        let frac = out.removal_fraction();
        assert!((0.43..=0.47).contains(&frac), "seed {seed}: {frac}");
        let true_inliers = truth.iter().filter(|&&t| t).count();
        let caught = truth
            .iter()
            .zip(&out.removed)
            .filter(|(&t, &r)| t && r)
            .count();
        assert!(caught as f64 >= 0.99 * true_inliers as f64);
        assert_eq!(out.cloud.len() + out.plane.inlier_count, cloud.len());
        assert!(out.plane.normal[2].abs() > 1.0 - 1e-9);
    }
}
