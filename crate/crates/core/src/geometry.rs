//! SE(3) pose algebra and the 6-vector pose encoding used as network target.
//!
//! Rotations in a [`PoseDelta`] are fixed-axis roll-pitch-yaw Euler angles in
//! degrees, `R = Rz(yaw) * Ry(pitch) * Rx(roll)`, stored as `(roll, pitch, yaw)`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use thiserror::Error;

/// Maximum tolerated deviation of `RᵀR` from identity before `compose`
/// re-orthonormalizes its result.
pub const ORTHONORMAL_DRIFT: f64 = 1e-9;

/// Distance (degrees) from ±90° pitch at which the Euler decomposition is
/// treated as singular.
pub const GIMBAL_EPS_DEG: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    /// Pitch is at ±90°. `canonical` holds the roll = 0 decomposition.
    #[error("GimbalLock: pitch {pitch_deg}° is within {GIMBAL_EPS_DEG}° of ±90°")]
    GimbalLock {
        pitch_deg: f64,
        canonical: PoseDelta,
    },
    #[error("InvalidTransform: {0}")]
    InvalidTransform(String),
}

/// Rigid body transform. The homogeneous bottom row `(0, 0, 0, 1)` is implicit,
/// so it always holds exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Builds a transform from parts, validating orthonormality and handedness.
    pub fn from_parts(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let t = Self {
            rotation,
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    /// Builds a transform without validation. Callers guarantee `rotation` is a
    /// proper rotation.
    pub fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Parses a homogeneous 4×4 matrix. The bottom row must be exactly `(0,0,0,1)`.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self, GeometryError> {
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return Err(GeometryError::InvalidTransform(
                "bottom row is not (0, 0, 0, 1)".into(),
            ));
        }
        Self::from_parts(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn rotation_z_deg(yaw: f64) -> Self {
        Self {
            rotation: rot_z(yaw.to_radians()),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation_vector(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major upper 3×4 block, the KITTI pose line layout.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.rotation[(r, c)];
            }
            out[r * 4 + 3] = self.translation[r];
        }
        out
    }

    pub fn from_row_major_3x4(v: &[f64; 12]) -> Result<Self, GeometryError> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let translation = Vector3::new(v[3], v[7], v[11]);
        Self::from_parts(rotation, translation)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self
            .rotation
            .iter()
            .chain(self.translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(GeometryError::InvalidTransform("non-finite entry".into()));
        }
        let drift = orthonormal_drift(&self.rotation);
        if drift >= ORTHONORMAL_DRIFT {
            return Err(GeometryError::InvalidTransform(format!(
                "rotation not orthonormal (|RᵀR - I|∞ = {drift:e})"
            )));
        }
        if self.rotation.determinant() <= 0.0 {
            return Err(GeometryError::InvalidTransform(
                "rotation has non-positive determinant".into(),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_point(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.apply(&Vector3::new(p[0], p[1], p[2]));
        [v.x, v.y, v.z]
    }
}

/// Largest absolute entry of `RᵀR - I`.
pub fn orthonormal_drift(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

/// `a · b`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    let mut rotation = a.rotation * b.rotation;
    if orthonormal_drift(&rotation) > ORTHONORMAL_DRIFT {
        rotation = gram_schmidt(&rotation);
    }
    RigidTransform {
        rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

/// Exact SE(3) inverse `(Rᵀ, -Rᵀt)`.
pub fn invert(t: &RigidTransform) -> RigidTransform {
    let rt = t.rotation.transpose();
    RigidTransform {
        rotation: rt,
        translation: -(rt * t.translation),
    }
}

/// Orthonormalizes the columns by Gram–Schmidt.
pub fn gram_schmidt(r: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = r.column(0).normalize();
    let c1 = (r.column(1) - c0 * c0.dot(&r.column(1))).normalize();
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Motion encoded as translation (meters) and roll/pitch/yaw (degrees).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseDelta {
    pub t: [f64; 3],
    pub r: [f64; 3],
}

impl PoseDelta {
    pub fn new(t: [f64; 3], r: [f64; 3]) -> Self {
        Self { t, r }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            t: [v[0], v[1], v[2]],
            r: [v[3], v[4], v[5]],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.t[0], self.t[1], self.t[2], self.r[0], self.r[1], self.r[2],
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Wraps an angle in degrees to `(-180, 180]`.
pub fn canonical_angle_deg(a: f64) -> f64 {
    let mut w = a % 360.0;
    if w > 180.0 {
        w -= 360.0;
    } else if w <= -180.0 {
        w += 360.0;
    }
    w
}

pub fn euler_to_rotation(r: [f64; 3]) -> Matrix3<f64> {
    let [roll, pitch, yaw] = r;
    rot_z(yaw.to_radians()) * rot_y(pitch.to_radians()) * rot_x(roll.to_radians())
}

pub fn delta_to_transform(d: &PoseDelta) -> RigidTransform {
    RigidTransform {
        rotation: euler_to_rotation(d.r),
        translation: Vector3::new(d.t[0], d.t[1], d.t[2]),
    }
}

/// Inverse of [`delta_to_transform`]. Angles come back in `(-180, 180]`.
pub fn transform_to_delta(t: &RigidTransform) -> Result<PoseDelta, GeometryError> {
    let r = &t.rotation;
    let tr = [t.translation.x, t.translation.y, t.translation.z];
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin().to_degrees();
    if 90.0 - pitch.abs() <= GIMBAL_EPS_DEG {
        // With roll fixed at 0 the remaining yaw is read from the first two rows.
        let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]).to_degrees();
        let canonical = PoseDelta {
            t: tr,
            r: [0.0, canonical_angle_deg(pitch), canonical_angle_deg(yaw)],
        };
        return Err(GeometryError::GimbalLock {
            pitch_deg: pitch,
            canonical,
        });
    }
    let roll = r[(2, 1)].atan2(r[(2, 2)]).to_degrees();
    let yaw = r[(1, 0)].atan2(r[(0, 0)]).to_degrees();
    Ok(PoseDelta {
        t: tr,
        r: [
            canonical_angle_deg(roll),
            canonical_angle_deg(pitch),
            canonical_angle_deg(yaw),
        ],
    })
}

/// [`transform_to_delta`] that falls back to the roll = 0 decomposition at
/// gimbal lock instead of failing.
pub fn transform_to_delta_canonical(t: &RigidTransform) -> PoseDelta {
    match transform_to_delta(t) {
        Ok(d) => d,
        Err(GeometryError::GimbalLock { canonical, .. }) => canonical,
        Err(GeometryError::InvalidTransform(_)) => unreachable!("decomposition never validates"),
    }
}

/// Absolute rotation angle `arccos((Tr(R) - 1) / 2)` in degrees.
///
/// Evaluated as `atan2(|vee(R - Rᵀ)|, Tr(R) - 1)`, which is the same angle but
/// keeps full precision near zero where `arccos` loses half the digits. Exactly
/// symmetric rotations (e.g. `R·Rᵀ` computed in floating point) give exactly 0.
pub fn rotation_angle_deg(t: &RigidTransform) -> f64 {
    let r = &t.rotation;
    let sin2 = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    )
    .norm();
    let cos2 = (r.trace() - 1.0).clamp(-2.0, 2.0);
    sin2.atan2(cos2).to_degrees()
}

/// Direct `arccos` form with the argument clamped to `[-1, 1]`.
pub fn rotation_angle_deg_acos(t: &RigidTransform) -> f64 {
    ((t.rotation.trace() - 1.0) / 2.0)
        .clamp(-1.0, 1.0)
        .acos()
        .to_degrees()
}

/// Ordered poses; index is the frame number and pose 0 defines the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    poses: Vec<RigidTransform>,
}

impl Trajectory {
    /// Returns `None` for an empty pose list.
    pub fn new(poses: Vec<RigidTransform>) -> Option<Self> {
        (!poses.is_empty()).then_some(Self { poses })
    }

    pub fn identity() -> Self {
        Self {
            poses: vec![RigidTransform::identity()],
        }
    }

    pub fn poses(&self) -> &[RigidTransform] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn push(&mut self, pose: RigidTransform) {
        self.poses.push(pose);
    }

    /// Applies `world` on the left of every pose.
    pub fn transformed(&self, world: &RigidTransform) -> Self {
        Self {
            poses: self.poses.iter().map(|p| compose(world, p)).collect(),
        }
    }
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;
    use rand::Rng;

    pub fn random_transform<R: Rng>(rng: &mut R, max_angle: f64, max_t: f64) -> RigidTransform {
        let d = PoseDelta::new(
            [
                rng.gen_range(-max_t..=max_t),
                rng.gen_range(-max_t..=max_t),
                rng.gen_range(-max_t..=max_t),
            ],
            [
                rng.gen_range(-max_angle..=max_angle),
                rng.gen_range(-max_angle..=max_angle),
                rng.gen_range(-max_angle..=max_angle),
            ],
        );
        delta_to_transform(&d)
    }
}

#[cfg(test)]
mod tests {
    use super::test_util::random_transform;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_abs_diff(a: &RigidTransform, b: &RigidTransform) -> f64 {
        (a.matrix() - b.matrix()).amax()
    }

    #[test]
    fn compose_identity_and_translations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_transform(&mut rng, 170.0, 50.0);
        assert_eq!(compose(&RigidTransform::identity(), &t), t);
        let c = compose(
            &RigidTransform::translation(1.0, 0.0, 0.0),
            &RigidTransform::translation(0.0, 2.0, 0.0),
        );
        assert_eq!(c, RigidTransform::translation(1.0, 2.0, 0.0));
        assert!(max_abs_diff(&compose(&t, &invert(&t)), &RigidTransform::identity()) < 1e-12);
    }

    #[test]
    fn invert_examples() {
        assert_eq!(
            invert(&RigidTransform::identity()),
            RigidTransform::identity()
        );
        assert_eq!(
            invert(&RigidTransform::translation(1.0, 2.0, 3.0)),
            RigidTransform::translation(-1.0, -2.0, -3.0)
        );
    }

    #[test]
    fn group_laws_on_random_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let id = RigidTransform::identity();
        for _ in 0..1000 {
            let a = random_transform(&mut rng, 180.0, 20.0);
            let b = random_transform(&mut rng, 180.0, 20.0);
            let c = random_transform(&mut rng, 180.0, 20.0);
            assert!(max_abs_diff(&compose(&invert(&a), &a), &id) < 1e-12);
            let left = compose(&compose(&a, &b), &c);
            let right = compose(&a, &compose(&b, &c));
            assert!(max_abs_diff(&left, &right) < 1e-12);
            assert_eq!(rotation_angle_deg(&compose(&a, &invert(&a))), 0.0);
            left.validate().unwrap();
        }
    }

    #[test]
    fn delta_examples() {
        assert_eq!(
            delta_to_transform(&PoseDelta::zero()),
            RigidTransform::identity()
        );
        assert_eq!(
            delta_to_transform(&PoseDelta::new([1.0, 0.0, 0.0], [0.0; 3])),
            RigidTransform::translation(1.0, 0.0, 0.0)
        );
        let rz = delta_to_transform(&PoseDelta::new([0.0; 3], [0.0, 0.0, 90.0]));
        let p = rz.apply_point([1.0, 0.0, 0.0]);
        assert!((p[0] - 0.0).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12 && p[2].abs() < 1e-12);
    }

    #[test]
    fn transform_to_delta_examples() {
        assert_eq!(
            transform_to_delta(&RigidTransform::identity()).unwrap(),
            PoseDelta::zero()
        );
        let d = transform_to_delta(&RigidTransform::translation(3.0, 4.0, 5.0)).unwrap();
        assert_eq!(d, PoseDelta::new([3.0, 4.0, 5.0], [0.0; 3]));
    }

    #[test]
    fn delta_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let d = PoseDelta::new(
                [
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                ],
                [
                    rng.gen_range(-60.0..=60.0),
                    rng.gen_range(-60.0..=60.0),
                    rng.gen_range(-60.0..=60.0),
                ],
            );
            let back = transform_to_delta(&delta_to_transform(&d)).unwrap();
            for (a, b) in d.to_array().iter().zip(back.to_array()) {
                assert!((a - b).abs() < 1e-9, "{d:?} vs {back:?}");
            }
        }
    }

    #[test]
    fn round_trip_near_gimbal_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let d = PoseDelta::new(
                [0.0; 3],
                [
                    rng.gen_range(-179.0..=179.0),
                    rng.gen_range(-89.0..=89.0),
                    rng.gen_range(-179.0..=179.0),
                ],
            );
            let back = transform_to_delta(&delta_to_transform(&d)).unwrap();
            for (a, b) in d.r.iter().zip(back.r) {
                assert!((a - b).abs() < 1e-9, "{d:?} vs {back:?}");
            }
        }
    }

    #[test]
    fn gimbal_lock_is_signaled_with_canonical_decomposition() {
        let d = PoseDelta::new([1.0, 2.0, 3.0], [20.0, 90.0, 50.0]);
        let t = delta_to_transform(&d);
        match transform_to_delta(&t) {
            Err(GeometryError::GimbalLock { canonical, .. }) => {
                assert_eq!(canonical.r[0], 0.0);
                assert_eq!(canonical.t, [1.0, 2.0, 3.0]);
                let rebuilt = delta_to_transform(&canonical);
                assert!(max_abs_diff(&rebuilt, &t) < 1e-6);
            }
            other => panic!("expected gimbal lock, got {other:?}"),
        }
    }

    #[test]
    fn canonical_angle_range() {
        assert_eq!(canonical_angle_deg(-180.0), 180.0);
        assert_eq!(canonical_angle_deg(180.0), 180.0);
        assert_eq!(canonical_angle_deg(190.0), -170.0);
        assert_eq!(canonical_angle_deg(-540.0), 180.0);
        assert_eq!(canonical_angle_deg(30.0), 30.0);
    }

    #[test]
    fn rotation_angle_examples() {
        assert_eq!(rotation_angle_deg(&RigidTransform::identity()), 0.0);
        assert!((rotation_angle_deg(&RigidTransform::rotation_z_deg(30.0)) - 30.0).abs() < 1e-9);
        // Trace slightly above 3 from round-off must clamp to zero, not NaN.
        let r = Matrix3::from_diagonal(&Vector3::new(1.0 + 1e-15, 1.0, 1.0));
        let t = RigidTransform::from_parts_unchecked(r, Vector3::zeros());
        assert_eq!(rotation_angle_deg(&t), 0.0);
        assert_eq!(rotation_angle_deg_acos(&t), 0.0);
    }

    #[test]
    fn angle_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let t = random_transform(&mut rng, 179.0, 1.0);
            let a = rotation_angle_deg(&t);
            let b = rotation_angle_deg_acos(&t);
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            assert!((0.0..=180.0).contains(&a));
        }
    }

    #[test]
    fn rotation_angle_conjugation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let t = random_transform(&mut rng, 170.0, 10.0);
            let q = delta_to_transform(&PoseDelta::new(
                [0.0; 3],
                [
                    rng.gen_range(-180.0..180.0),
                    rng.gen_range(-89.0..89.0),
                    rng.gen_range(-180.0..180.0),
                ],
            ));
            let conj = compose(&compose(&q, &t), &invert(&q));
            assert!((rotation_angle_deg(&conj) - rotation_angle_deg(&t)).abs() < 1e-6);
        }
    }

    #[test]
    fn compose_repairs_drift() {
        let mut r = euler_to_rotation([10.0, 20.0, 30.0]);
        r[(0, 0)] += 1e-7;
        let skewed = RigidTransform::from_parts_unchecked(r, Vector3::zeros());
        let c = compose(&skewed, &RigidTransform::identity());
        assert!(orthonormal_drift(c.rotation()) < 1e-12);
        assert!(c.rotation().determinant() > 0.0);
    }

    #[test]
    fn from_matrix_rejects_bad_bottom_row() {
        let mut m = Matrix4::identity();
        m[(3, 0)] = 1e-3;
        assert!(RigidTransform::from_matrix(&m).is_err());
        assert!(RigidTransform::from_matrix(&Matrix4::identity()).is_ok());
    }
}
