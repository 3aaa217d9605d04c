//! Trajectory accumulation and KITTI-style sub-sequence errors.
//!
//! For every start frame `i` and length class `L` the end frame `j` is the
//! first frame whose path distance from `i` reaches `L`. The error of a
//! segment is `T_gt(i,j)⁻¹ · T_pred(i,j)`; its translation norm and rotation
//! angle are divided by the segment's ground-truth path length and averaged.

use thiserror::Error;

pub use crate::dataio::write_poses;
use crate::geometry::{
    compose, delta_to_transform, invert, rotation_angle_deg, PoseDelta, RigidTransform, Trajectory,
};

pub const DEFAULT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("LengthMismatch: ground truth has {gt} poses, prediction {pred}")]
    LengthMismatch { gt: usize, pred: usize },
    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),
}

/// `pose₀ = I`, `pose_{t+1} = pose_t · T(delta_t)`.
pub fn accumulate(deltas: &[PoseDelta]) -> Trajectory {
    let mut traj = Trajectory::identity();
    let mut pose = RigidTransform::identity();
    for d in deltas {
        pose = compose(&pose, &delta_to_transform(d));
        traj.push(pose);
    }
    traj
}

/// Cumulative path length `s(k)`, with `s(0) = 0`.
pub fn arc_lengths(traj: &Trajectory) -> Vec<f64> {
    let mut s = Vec::with_capacity(traj.len());
    let mut acc = 0.0;
    s.push(acc);
    for w in traj.poses().windows(2) {
        acc += (w[1].translation_vector() - w[0].translation_vector()).norm();
        s.push(acc);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubSequence {
    pub i: usize,
    pub j: usize,
    pub length_class: f64,
    /// Ground-truth path distance from `i` to `j`, meters.
    pub dist: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubSequenceSet {
    pub lengths: Vec<f64>,
    pub entries: Vec<SubSequence>,
}

impl SubSequenceSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Every (start, length class) segment of `traj`, starts stepping by `stride`.
pub fn subsequence_set(
    traj: &Trajectory,
    lengths: &[f64],
    stride: usize,
) -> Result<SubSequenceSet, EvalError> {
    if stride == 0 {
        return Err(EvalError::InvalidArgument("stride must be >= 1".into()));
    }
    if let Some(l) = lengths.iter().find(|l| !(**l > 0.0)) {
        return Err(EvalError::InvalidArgument(format!(
            "length class {l} must be positive"
        )));
    }
    let s = arc_lengths(traj);
    let mut entries = Vec::new();
    for i in (0..s.len()).step_by(stride) {
        for &l in lengths {
            let j = i + s[i..].partition_point(|&sk| sk - s[i] < l);
            if j < s.len() {
                entries.push(SubSequence {
                    i,
                    j,
                    length_class: l,
                    dist: s[j] - s[i],
                });
            }
        }
    }
    Ok(SubSequenceSet {
        lengths: lengths.to_vec(),
        entries,
    })
}

/// Translation norm (meters) and rotation angle (degrees) of `gt⁻¹ · pred`.
pub fn pose_error(gt_ij: &RigidTransform, pred_ij: &RigidTransform) -> (f64, f64) {
    let e = compose(&invert(gt_ij), pred_ij);
    (e.translation_vector().norm(), rotation_angle_deg(&e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassErrors {
    pub length_class: f64,
    pub count: usize,
    /// Mean translation error ratio.
    pub e_t: f64,
    /// Mean rotation error, degrees per meter.
    pub e_r: f64,
}

/// Overall and per-length-class means. An empty set reports zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct OdomErrors {
    pub count: usize,
    pub e_t: f64,
    pub e_r: f64,
    pub per_class: Vec<ClassErrors>,
}

impl OdomErrors {
    pub fn e_t_percent(&self) -> f64 {
        100.0 * self.e_t
    }

    /// Report table, one row per length class plus a `total` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("length_class,count,e_t_percent,e_r_deg_per_m\n");
        for c in &self.per_class {
            out.push_str(&format!(
                "{},{},{},{}\n",
                c.length_class,
                c.count,
                100.0 * c.e_t,
                c.e_r
            ));
        }
        out.push_str(&format!(
            "total,{},{},{}\n",
            self.count,
            self.e_t_percent(),
            self.e_r
        ));
        out
    }
}

pub fn odometry_errors(
    gt: &Trajectory,
    pred: &Trajectory,
    set: &SubSequenceSet,
) -> Result<OdomErrors, EvalError> {
    if gt.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gt: gt.len(),
            pred: pred.len(),
        });
    }
    let (g, p) = (gt.poses(), pred.poses());
    let mut per_class: Vec<(f64, usize, f64, f64)> =
        set.lengths.iter().map(|&l| (l, 0, 0.0, 0.0)).collect();
    let (mut sum_t, mut sum_r) = (0.0, 0.0);
    for e in &set.entries {
        if e.j >= g.len() || e.i >= e.j {
            return Err(EvalError::InvalidArgument(format!(
                "entry ({}, {}) does not fit a {}-pose trajectory",
                e.i,
                e.j,
                g.len()
            )));
        }
        let gt_ij = compose(&invert(&g[e.i]), &g[e.j]);
        let pred_ij = compose(&invert(&p[e.i]), &p[e.j]);
        let (t_err, angle) = pose_error(&gt_ij, &pred_ij);
        let (et, er) = (t_err / e.dist, angle / e.dist);
        sum_t += et;
        sum_r += er;
        let slot = match per_class.iter().position(|c| c.0 == e.length_class) {
            Some(k) => k,
            None => {
                per_class.push((e.length_class, 0, 0.0, 0.0));
                per_class.len() - 1
            }
        };
        let c = &mut per_class[slot];
        c.1 += 1;
        c.2 += et;
        c.3 += er;
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    let n = set.entries.len();
    Ok(OdomErrors {
        count: n,
        e_t: mean(sum_t, n),
        e_r: mean(sum_r, n),
        per_class: per_class
            .into_iter()
            .map(|(l, k, t, r)| ClassErrors {
                length_class: l,
                count: k,
                e_t: mean(t, k),
                e_r: mean(r, k),
            })
            .collect(),
    })
}
