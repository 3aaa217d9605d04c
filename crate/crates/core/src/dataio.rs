//! KITTI odometry IO (Velodyne scans, pose files, calibration), ground-truth
//! frame conversion, sequence splits and synthetic frame pairs.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{
    compose, delta_to_transform, gram_schmidt, invert, orthonormal_drift,
    transform_to_delta_canonical, PoseDelta, RigidTransform, Trajectory, ORTHONORMAL_DRIFT,
};
use crate::pointcloud::{uniform_point, PointCloud};

/// Largest rotation drift from orthonormal accepted when parsing text
/// matrices. Anything between this and exact is projected back.
pub const TEXT_ROTATION_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("MalformedScan: {0}")]
    MalformedScan(String),
    #[error("MalformedPose: line {line}: {reason}")]
    MalformedPose { line: usize, reason: String },
    #[error("MalformedCalib: {0}")]
    MalformedCalib(String),
    #[error("MissingData: {0}")]
    MissingData(String),
    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),
    #[error("Io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Two consecutive scans and the LiDAR-frame motion from `p` to `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub p: PointCloud,
    pub q: PointCloud,
    pub target: PoseDelta,
}

/// Decodes a Velodyne scan: little-endian `f32` records `(x, y, z, intensity)`.
pub fn read_scan(bytes: &[u8]) -> Result<PointCloud, DataError> {
    if bytes.len() % 16 != 0 {
        return Err(DataError::MalformedScan(format!(
            "{} bytes is not a multiple of 16",
            bytes.len()
        )));
    }
    let n = bytes.len() / 16;
    let mut xyz = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(16).enumerate() {
        let v: [f32; 4] =
            std::array::from_fn(|k| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()));
        if !v.iter().all(|x| x.is_finite()) {
            return Err(DataError::MalformedScan(format!(
                "record {i} has a non-finite value"
            )));
        }
        xyz.push([v[0] as f64, v[1] as f64, v[2] as f64]);
        intensity.push(v[3] as f64);
    }
    Ok(PointCloud::with_intensity(xyz, intensity).expect("finite, matched lengths"))
}

/// Encodes a single-channel cloud in the Velodyne layout.
pub fn write_scan(cloud: &PointCloud) -> Result<Vec<u8>, DataError> {
    if cloud.channels() != 1 {
        return Err(DataError::MalformedScan(format!(
            "scans carry exactly one feature channel, cloud has {}",
            cloud.channels()
        )));
    }
    let mut out = Vec::with_capacity(16 * cloud.len());
    for (p, f) in cloud.xyz().iter().zip(cloud.features()) {
        for v in [p[0], p[1], p[2], *f] {
            let x = v as f32;
            if !x.is_finite() {
                return Err(DataError::MalformedScan(format!("{v} does not fit in f32")));
            }
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

fn parse_3x4(tokens: &[&str]) -> Result<RigidTransform, String> {
    if tokens.len() != 12 {
        return Err(format!("expected 12 values, found {}", tokens.len()));
    }
    let mut v = [0.0; 12];
    for (slot, tok) in v.iter_mut().zip(tokens) {
        *slot = tok
            .parse::<f64>()
            .map_err(|_| format!("'{tok}' is not a number"))?;
        if !slot.is_finite() {
            return Err(format!("non-finite value '{tok}'"));
        }
    }
    let mut rot = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    let drift = orthonormal_drift(&rot);
    if drift > TEXT_ROTATION_TOLERANCE || rot.determinant() <= 0.0 {
        return Err(format!(
            "rotation block is not a rotation (drift {drift:e})"
        ));
    }
    if drift >= ORTHONORMAL_DRIFT {
        rot = gram_schmidt(&rot);
    }
    RigidTransform::from_parts(rot, Vector3::new(v[3], v[7], v[11])).map_err(|e| e.to_string())
}

/// Parses a KITTI pose file: one row-major 3×4 matrix per non-empty line.
pub fn read_poses(text: &str) -> Result<Trajectory, DataError> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let pose = parse_3x4(&tokens).map_err(|reason| DataError::MalformedPose {
            line: i + 1,
            reason,
        })?;
        poses.push(pose);
    }
    Trajectory::new(poses).ok_or(DataError::MalformedPose {
        line: 0,
        reason: "no poses".into(),
    })
}

/// One pose per line, 12 values row-major, shortest round-trip formatting.
pub fn write_poses(traj: &Trajectory) -> String {
    let mut out = String::new();
    for pose in traj.poses() {
        let line: Vec<String> = pose
            .to_row_major_3x4()
            .iter()
            .map(|v| format!("{v:e}"))
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// LiDAR → camera extrinsic (`Tr` in KITTI calibration files).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibTr {
    pub tr: RigidTransform,
}

impl CalibTr {
    pub fn identity() -> Self {
        Self {
            tr: RigidTransform::identity(),
        }
    }
}

pub fn read_calib(text: &str) -> Result<CalibTr, DataError> {
    for line in text.lines() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        if key.trim() == "Tr" {
            let tokens: Vec<&str> = rest.split_whitespace().collect();
            let tr = parse_3x4(&tokens).map_err(DataError::MalformedCalib)?;
            return Ok(CalibTr { tr });
        }
    }
    Err(DataError::MalformedCalib("no 'Tr:' line".into()))
}

pub fn write_calib(calib: &CalibTr) -> String {
    let v: Vec<String> = calib
        .tr
        .to_row_major_3x4()
        .iter()
        .map(|v| format!("{v:e}"))
        .collect();
    format!("Tr: {}\n", v.join(" "))
}

/// LiDAR-frame relative motions `Tr⁻¹ · C_t⁻¹ · C_{t+1} · Tr` between
/// consecutive camera poses.
pub fn relative_gt_transforms(traj_cam: &Trajectory, calib: &CalibTr) -> Vec<RigidTransform> {
    let tr_inv = invert(&calib.tr);
    traj_cam
        .poses()
        .windows(2)
        .map(|w| {
            let rel = compose(&invert(&w[0]), &w[1]);
            compose(&compose(&tr_inv, &rel), &calib.tr)
        })
        .collect()
}

/// [`relative_gt_transforms`] encoded as pose deltas.
pub fn relative_gt(traj_cam: &Trajectory, calib: &CalibTr) -> Vec<PoseDelta> {
    relative_gt_transforms(traj_cam, calib)
        .iter()
        .map(transform_to_delta_canonical)
        .collect()
}

/// Sequence ids per split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<u32>,
    pub test: Vec<u32>,
    pub validation: Vec<u32>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: vec![0, 1, 2, 8, 9],
            test: vec![3, 4, 5, 6, 10],
            validation: vec![7],
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let all = [&self.train, &self.test, &self.validation];
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                if let Some(s) = a.iter().find(|s| b.contains(s)) {
                    return Err(DataError::InvalidArgument(format!(
                        "sequence {s} is in two splits"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&[u32], DataError> {
        match name {
            "train" => Ok(&self.train),
            "test" => Ok(&self.test),
            "validation" | "val" => Ok(&self.validation),
            other => Err(DataError::InvalidArgument(format!(
                "unknown split '{other}'"
            ))),
        }
    }
}

/// Frame in which a pose file is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseFrame {
    /// KITTI ground truth: camera frame, converted through `Tr`.
    Camera,
    /// Already LiDAR-frame; calibration is ignored.
    Lidar,
}

impl std::str::FromStr for PoseFrame {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "camera" => Ok(PoseFrame::Camera),
            "lidar" => Ok(PoseFrame::Lidar),
            other => Err(format!(
                "unknown frame '{other}' (expected camera or lidar)"
            )),
        }
    }
}

/// KITTI odometry directory tree rooted at `root`.
#[derive(Debug, Clone)]
pub struct KittiLayout {
    pub root: PathBuf,
}

impl KittiLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn sequence_dir(&self, seq: u32) -> PathBuf {
        self.root.join("sequences").join(format!("{seq:02}"))
    }

    pub fn velodyne_dir(&self, seq: u32) -> PathBuf {
        self.sequence_dir(seq).join("velodyne")
    }

    pub fn scan_path(&self, seq: u32, frame: usize) -> PathBuf {
        self.velodyne_dir(seq).join(format!("{frame:06}.bin"))
    }

    pub fn poses_path(&self, seq: u32) -> PathBuf {
        self.root.join("poses").join(format!("{seq:02}.txt"))
    }

    pub fn calib_path(&self, seq: u32) -> PathBuf {
        self.sequence_dir(seq).join("calib.txt")
    }

    /// Sorted scan files of a sequence.
    pub fn scan_files(&self, seq: u32) -> Result<Vec<PathBuf>, DataError> {
        let dir = self.velodyne_dir(seq);
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect();
        files.sort();
        Ok(files)
    }

    pub fn load_scan(&self, seq: u32, frame: usize) -> Result<PointCloud, DataError> {
        load_scan_file(&self.scan_path(seq, frame))
    }

    pub fn load_poses(&self, seq: u32) -> Result<Trajectory, DataError> {
        let path = self.poses_path(seq);
        read_poses(&fs::read_to_string(&path).map_err(io_err(&path))?)
    }

    pub fn load_calib(&self, seq: u32) -> Result<CalibTr, DataError> {
        let path = self.calib_path(seq);
        read_calib(&fs::read_to_string(&path).map_err(io_err(&path))?)
    }

    /// LiDAR-frame ground-truth deltas of a sequence.
    pub fn ground_truth_deltas(
        &self,
        seq: u32,
        frame: PoseFrame,
    ) -> Result<Vec<PoseDelta>, DataError> {
        let traj = self.load_poses(seq)?;
        let calib = match frame {
            PoseFrame::Camera => self.load_calib(seq)?,
            PoseFrame::Lidar => CalibTr::identity(),
        };
        Ok(relative_gt(&traj, &calib))
    }
}

/// Consecutive-frame pairs of one or more sequences, read from disk on access.
#[derive(Debug, Clone)]
pub struct SequencePairs {
    layout: KittiLayout,
    index: Vec<(u32, usize)>,
    targets: Vec<PoseDelta>,
}

impl SequencePairs {
    pub fn open(
        layout: KittiLayout,
        sequences: &[u32],
        frame: PoseFrame,
    ) -> Result<Self, DataError> {
        let (mut index, mut targets) = (Vec::new(), Vec::new());
        for &seq in sequences {
            let deltas = layout.ground_truth_deltas(seq, frame)?;
            let scans = layout.scan_files(seq)?.len();
            if scans != deltas.len() + 1 {
                return Err(DataError::MissingData(format!(
                    "sequence {seq:02}: {scans} scans but {} poses",
                    deltas.len() + 1
                )));
            }
            index.extend((0..deltas.len()).map(|f| (seq, f)));
            targets.extend(deltas);
        }
        Ok(Self {
            layout,
            index,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Sequence and first frame of pair `i`.
    pub fn frame_of(&self, i: usize) -> (u32, usize) {
        self.index[i]
    }

    pub fn load(&self, i: usize) -> Result<FramePair, DataError> {
        let (seq, f) = self.index[i];
        Ok(FramePair {
            p: self.layout.load_scan(seq, f)?,
            q: self.layout.load_scan(seq, f + 1)?,
            target: self.targets[i],
        })
    }
}

pub fn load_scan_file(path: &Path) -> Result<PointCloud, DataError> {
    read_scan(&fs::read(path).map_err(io_err(path))?)
}

/// Knobs of [`make_synthetic_pair`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub n_points: usize,
    /// Per-axis translation bound, meters.
    pub max_t: f64,
    /// Per-angle rotation bound, degrees.
    pub max_r: f64,
    pub noise_sigma: f64,
    /// Fraction of `p`'s points kept in `q`.
    pub overlap: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_points: 256,
            max_t: 1.0,
            max_r: 5.0,
            noise_sigma: 0.0,
            overlap: 1.0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<(), DataError> {
        if self.n_points < 16 {
            return Err(DataError::InvalidArgument("n_points must be >= 16".into()));
        }
        if !(self.overlap > 0.0 && self.overlap <= 1.0) {
            return Err(DataError::InvalidArgument(
                "overlap must lie in (0, 1]".into(),
            ));
        }
        if !(self.max_t >= 0.0 && (0.0..180.0).contains(&self.max_r) && self.noise_sigma >= 0.0) {
            return Err(DataError::InvalidArgument(
                "need max_t >= 0, 0 <= max_r < 180 and noise_sigma >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Ground plane at sensor height plus 3–10 Gaussian blobs.
fn synthetic_scene(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    let clusters = rng.gen_range(3..=10);
    let centers: Vec<([f64; 3], f64)> = (0..clusters)
        .map(|_| {
            (
                uniform_point(rng, [-15.0, -15.0, -1.0], [15.0, 15.0, 2.0]),
                rng.gen_range(0.5..2.0),
            )
        })
        .collect();
    let n_ground = n / 2;
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut xyz = Vec::with_capacity(n);
    for i in 0..n {
        if i < n_ground {
            xyz.push([
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
                -1.73,
            ]);
        } else {
            let (c, s) = centers[rng.gen_range(0..clusters)];
            xyz.push(std::array::from_fn(|k| c[k] + s * unit.sample(rng)));
        }
    }
    let intensity = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    PointCloud::with_intensity(xyz, intensity).unwrap()
}

/// Random scene `p`, motion `target` drawn uniformly within the bounds, and
/// `q = T⁻¹ p` with optional noise and dropout, so `T q ≈ p`.
pub fn make_synthetic_pair(seed: u64, cfg: &SyntheticConfig) -> Result<FramePair, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = synthetic_scene(&mut rng, cfg.n_points);
    let mut draw = |bound: f64| {
        if bound > 0.0 {
            rng.gen_range(-bound..bound)
        } else {
            0.0
        }
    };
    let t = [draw(cfg.max_t), draw(cfg.max_t), draw(cfg.max_t)];
    let r = [draw(cfg.max_r), draw(cfg.max_r), draw(cfg.max_r)];
    let target = PoseDelta::new(t, r);
    let inv = invert(&delta_to_transform(&target));
    let keep = ((cfg.overlap * cfg.n_points as f64).round() as usize).clamp(1, cfg.n_points);
    let mut kept: Vec<usize> = if keep == cfg.n_points {
        (0..cfg.n_points).collect()
    } else {
        index::sample(&mut rng, cfg.n_points, keep).into_vec()
    };
    kept.sort_unstable();
    let q_src = p.select(&kept);
    let mut q = q_src.transformed(&inv);
    if cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sigma).unwrap();
        let xyz = q
            .xyz()
            .iter()
            .map(|x| std::array::from_fn(|k| x[k] + noise.sample(&mut rng)))
            .collect();
        q = PointCloud::with_intensity(xyz, q.features().to_vec()).unwrap();
    }
    Ok(FramePair { p, q, target })
}

/// Street-like scan: exact ground-plane points (`z = -1.73`) for the given
/// fraction, the rest on building facades, parked cars and poles well clear
/// of the road. The mask marks ground points.
pub fn synthetic_street_scene(
    seed: u64,
    n_points: usize,
    plane_fraction: f64,
) -> (PointCloud, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_plane = (plane_fraction.clamp(0.0, 1.0) * n_points as f64).round() as usize;
    let ground = -1.73;
    let mut xyz = Vec::with_capacity(n_points);
    let mut mask = Vec::with_capacity(n_points);
    for i in 0..n_points {
        if i < n_plane {
            xyz.push([
                rng.gen_range(-40.0..40.0),
                rng.gen_range(-12.0..12.0),
                ground,
            ]);
            mask.push(true);
            continue;
        }
        let p = match rng.gen_range(0..10) {
            // Facades on both sides of the street.
            0..=5 => {
                let side = if rng.gen_bool(0.5) { 12.0 } else { -12.0 };
                let p = uniform_point(
                    &mut rng,
                    [-40.0, 0.0, ground + 0.5],
                    [40.0, 1.5, ground + 12.0],
                );
                [p[0], side + p[1].copysign(side), p[2]]
            }
            // Cars.
            6..=8 => {
                let slot = rng.gen_range(-8i32..8) as f64 * 5.0;
                let lane = if rng.gen_bool(0.5) { 7.5 } else { -7.5 };
                uniform_point(
                    &mut rng,
                    [slot, lane - 1.0, ground + 0.4],
                    [slot + 4.2, lane + 1.0, ground + 1.6],
                )
            }
            // Poles.
            _ => {
                let x = rng.gen_range(-4i32..4) as f64 * 10.0;
                let y = if rng.gen_bool(0.5) { 10.0 } else { -10.0 };
                uniform_point(
                    &mut rng,
                    [x, y, ground + 0.5],
                    [x + 0.2, y + 0.2, ground + 6.0],
                )
            }
        };
        xyz.push(p);
        mask.push(false);
    }
    let intensity = (0..n_points).map(|_| rng.gen_range(0.0..1.0)).collect();
    (PointCloud::with_intensity(xyz, intensity).unwrap(), mask)
}

/// A static world observed from a trajectory of random small motions.
/// Returns LiDAR-frame scans (one per pose) and the poses.
pub fn make_synthetic_sequence(
    seed: u64,
    frames: usize,
    cfg: &SyntheticConfig,
) -> Result<(Vec<PointCloud>, Trajectory), DataError> {
    cfg.validate()?;
    if frames < 2 {
        return Err(DataError::InvalidArgument(
            "a sequence needs at least 2 frames".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traj = Trajectory::identity();
    for _ in 1..frames {
        let mut draw = |bound: f64| {
            if bound > 0.0 {
                rng.gen_range(-bound..bound)
            } else {
                0.0
            }
        };
        // Mostly forward driving so sub-sequences accumulate path length.
        let t = [
            cfg.max_t + draw(0.2 * cfg.max_t),
            draw(0.2 * cfg.max_t),
            draw(0.05 * cfg.max_t),
        ];
        let r = [
            draw(0.1 * cfg.max_r),
            draw(0.1 * cfg.max_r),
            draw(cfg.max_r),
        ];
        let last = *traj.poses().last().unwrap();
        traj.push(compose(&last, &delta_to_transform(&PoseDelta::new(t, r))));
    }
    let world = synthetic_scene(&mut rng, cfg.n_points * 4);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let keep = ((cfg.overlap * cfg.n_points as f64).round() as usize).clamp(1, cfg.n_points);
    let mut scans = Vec::with_capacity(frames);
    for pose in traj.poses() {
        let mut idx = index::sample(&mut rng, world.len(), keep).into_vec();
        idx.sort_unstable();
        let mut scan = world.select(&idx).transformed(&invert(pose));
        if cfg.noise_sigma > 0.0 {
            let xyz = scan
                .xyz()
                .iter()
                .map(|x| std::array::from_fn(|k| x[k] + noise.sample(&mut rng)))
                .collect();
            scan = PointCloud::with_intensity(xyz, scan.features().to_vec()).unwrap();
        }
        scans.push(scan);
    }
    Ok((scans, traj))
}

/// Writes scans, LiDAR-frame poses and an identity calibration in the KITTI
/// layout.
pub fn write_sequence(
    layout: &KittiLayout,
    seq: u32,
    scans: &[PointCloud],
    traj: &Trajectory,
) -> Result<(), DataError> {
    let vel = layout.velodyne_dir(seq);
    fs::create_dir_all(&vel).map_err(io_err(&vel))?;
    for (i, s) in scans.iter().enumerate() {
        let path = layout.scan_path(seq, i);
        fs::write(&path, write_scan(s)?).map_err(io_err(&path))?;
    }
    let poses = layout.poses_path(seq);
    let dir = poses.parent().unwrap();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    fs::write(&poses, write_poses(traj)).map_err(io_err(&poses))?;
    let calib = layout.calib_path(seq);
    fs::write(&calib, write_calib(&CalibTr::identity())).map_err(io_err(&calib))?;
    Ok(())
}
