//! Point-cloud value type, RANSAC ground-plane removal and subsampling.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::RigidTransform;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CloudError {
    #[error("TooFewPoints: need at least {need}, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("NonFinite: point cloud contains non-finite values")]
    NonFinite,
    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),
}

/// `n` points with XYZ (meters) and `channels` feature values per point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    xyz: Vec<[f64; 3]>,
    features: Vec<f64>,
    channels: usize,
}

impl PointCloud {
    pub fn new(
        xyz: Vec<[f64; 3]>,
        features: Vec<f64>,
        channels: usize,
    ) -> Result<Self, CloudError> {
        if features.len() != xyz.len() * channels {
            return Err(CloudError::ShapeMismatch(format!(
                "{} points with {} channels need {} feature values, got {}",
                xyz.len(),
                channels,
                xyz.len() * channels,
                features.len()
            )));
        }
        if !xyz
            .iter()
            .flatten()
            .chain(features.iter())
            .all(|v| v.is_finite())
        {
            return Err(CloudError::NonFinite);
        }
        Ok(Self {
            xyz,
            features,
            channels,
        })
    }

    /// Cloud with a single intensity channel.
    pub fn with_intensity(xyz: Vec<[f64; 3]>, intensity: Vec<f64>) -> Result<Self, CloudError> {
        Self::new(xyz, intensity, 1)
    }

    pub fn empty(channels: usize) -> Self {
        Self {
            xyz: Vec::new(),
            features: Vec::new(),
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.xyz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xyz.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn xyz(&self) -> &[[f64; 3]] {
        &self.xyz
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    /// Points at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.channels);
        for &i in indices {
            features.extend_from_slice(self.feature(i));
        }
        Self {
            xyz: indices.iter().map(|&i| self.xyz[i]).collect(),
            features,
            channels: self.channels,
        }
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            xyz: self.xyz.iter().map(|&p| t.apply_point(p)).collect(),
            features: self.features.clone(),
            channels: self.channels,
        }
    }

    pub fn translated(&self, v: [f64; 3]) -> Self {
        Self {
            xyz: self
                .xyz
                .iter()
                .map(|p| [p[0] + v[0], p[1] + v[1], p[2] + v[2]])
                .collect(),
            features: self.features.clone(),
            channels: self.channels,
        }
    }
}

/// Plane `{x : normal·x + offset = 0}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneModel {
    pub normal: [f64; 3],
    pub offset: f64,
    pub inlier_count: usize,
}

impl PlaneModel {
    pub fn signed_distance(&self, p: &[f64; 3]) -> f64 {
        self.normal[0] * p[0] + self.normal[1] * p[1] + self.normal[2] * p[2] + self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub threshold: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            iterations: 200,
            seed: 0,
        }
    }
}

/// Minimum inlier fraction below which no plane is removed.
pub const MIN_PLANE_FRACTION: f64 = 0.05;

/// Result of [`remove_dominant_plane`].
#[derive(Debug, Clone)]
pub struct PlaneRemoval {
    pub cloud: PointCloud,
    /// Model refit by least squares to the inliers of the winning hypothesis.
    pub plane: PlaneModel,
    /// The 3-point hypothesis that won the RANSAC vote.
    pub hypothesis: PlaneModel,
    /// Per input point, whether it was removed.
    pub removed: Vec<bool>,
}

impl PlaneRemoval {
    pub fn removal_fraction(&self) -> f64 {
        let n = self.removed.len();
        if n == 0 {
            0.0
        } else {
            self.plane.inlier_count as f64 / n as f64
        }
    }
}

fn plane_through(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> Option<([f64; 3], f64)> {
    let u = Vector3::new(b[0] - a[0], b[1] - a[1], b[2] - a[2]);
    let v = Vector3::new(c[0] - a[0], c[1] - a[1], c[2] - a[2]);
    let n = u.cross(&v);
    let norm = n.norm();
    if !(norm > 1e-12 * (u.norm() * v.norm()).max(f64::MIN_POSITIVE)) {
        return None;
    }
    let n = n / norm;
    let offset = -(n.x * a[0] + n.y * a[1] + n.z * a[2]);
    Some(([n.x, n.y, n.z], offset))
}

fn refit_plane(points: &[[f64; 3]], mask: &[bool]) -> Option<([f64; 3], f64)> {
    let selected: Vec<&[f64; 3]> = points
        .iter()
        .zip(mask)
        .filter_map(|(p, &m)| m.then_some(p))
        .collect();
    if selected.len() < 3 {
        return None;
    }
    let k = selected.len() as f64;
    let mut centroid = Vector3::zeros();
    for p in &selected {
        centroid += Vector3::new(p[0], p[1], p[2]);
    }
    centroid /= k;
    let mut cov = Matrix3::zeros();
    for p in &selected {
        let d = Vector3::new(p[0], p[1], p[2]) - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (min_i, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let n = eig.eigenvectors.column(min_i).normalize();
    Some(([n.x, n.y, n.z], -n.dot(&centroid)))
}

/// Fits the maximum-inlier plane with 3-point RANSAC and removes its inliers.
///
/// Hypotheses are scored by inlier count; ties keep the earlier iteration. If
/// the best hypothesis covers less than [`MIN_PLANE_FRACTION`] of the cloud the
/// input is returned unchanged with `inlier_count = 0`.
pub fn remove_dominant_plane(
    cloud: &PointCloud,
    params: &RansacParams,
) -> Result<PlaneRemoval, CloudError> {
    let n = cloud.len();
    if n < 3 {
        return Err(CloudError::TooFewPoints { need: 3, got: n });
    }
    if !(params.threshold > 0.0) || params.iterations == 0 {
        return Err(CloudError::InvalidArgument(
            "RANSAC needs threshold > 0 and at least one iteration".into(),
        ));
    }
    let pts = cloud.xyz();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<([f64; 3], f64, usize)> = None;
    for _ in 0..params.iterations {
        let s = index::sample(&mut rng, n, 3);
        let Some((normal, offset)) =
            plane_through(&pts[s.index(0)], &pts[s.index(1)], &pts[s.index(2)])
        else {
            continue;
        };
        let model = PlaneModel {
            normal,
            offset,
            inlier_count: 0,
        };
        let count = pts
            .iter()
            .filter(|p| model.signed_distance(p).abs() <= params.threshold)
            .count();
        if best.map_or(true, |(_, _, c)| count > c) {
            best = Some((normal, offset, count));
        }
    }

    let unchanged = |normal, offset| PlaneRemoval {
        cloud: cloud.clone(),
        plane: PlaneModel {
            normal,
            offset,
            inlier_count: 0,
        },
        hypothesis: PlaneModel {
            normal,
            offset,
            inlier_count: 0,
        },
        removed: vec![false; n],
    };
    let Some((normal, offset, count)) = best else {
        return Ok(unchanged([0.0, 0.0, 1.0], 0.0));
    };
    if (count as f64) < MIN_PLANE_FRACTION * n as f64 {
        return Ok(unchanged(normal, offset));
    }

    let hypothesis = PlaneModel {
        normal,
        offset,
        inlier_count: count,
    };
    let removed: Vec<bool> = pts
        .iter()
        .map(|p| hypothesis.signed_distance(p).abs() <= params.threshold)
        .collect();
    let (rn, ro) = refit_plane(pts, &removed).unwrap_or((normal, offset));
    let kept: Vec<usize> = (0..n).filter(|&i| !removed[i]).collect();
    Ok(PlaneRemoval {
        cloud: cloud.select(&kept),
        plane: PlaneModel {
            normal: rn,
            offset: ro,
            inlier_count: count,
        },
        hypothesis,
        removed,
    })
}

/// Uniform subsample without replacement, keeping original point order.
pub fn random_subsample(cloud: &PointCloud, n_max: usize, seed: u64) -> PointCloud {
    let n = cloud.len();
    if n <= n_max {
        return cloud.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, n_max).into_vec();
    picked.sort_unstable();
    cloud.select(&picked)
}

/// Uniform random point in `[lo, hi)³`, for synthetic scenes.
pub(crate) fn uniform_point<R: Rng>(rng: &mut R, lo: [f64; 3], hi: [f64; 3]) -> [f64; 3] {
    [
        rng.gen_range(lo[0]..hi[0]),
        rng.gen_range(lo[1]..hi[1]),
        rng.gen_range(lo[2]..hi[2]),
    ]
}
