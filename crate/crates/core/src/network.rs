//! The odometry network: shared SA₁ on both scans, flow embedding, SA₂, SA₃,
//! mini-PointNet and a regression head producing `(t, r)`.
//!
//! Every MLP layer is `linear → batch-norm → ReLU`, except the very last head
//! layer which is a bare linear map. An [`MlpSpec`] lists per-layer output
//! widths; the input width of the first layer comes from the context
//! (`3 + c` for SA, `3 + 2c` for FE, `c` for the mini-PointNet).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::checkpoint::{Checkpoint, NamedTensor};
use crate::autodiff::{
    AdamState, AutodiffError, BatchStats, Gradients, Mode, Scalar, Tape, Tensor, TensorRole, Var,
};
use crate::geometry::PoseDelta;
use crate::neighbors::{self, FpsStart, NeighborError};
use crate::pointcloud::{random_subsample, PointCloud};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("EmptyCloud: network input has no points")]
    EmptyCloud,
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("MissingParameter: {0}")]
    MissingParameter(String),
    #[error("UnknownPreset: {0}")]
    UnknownPreset(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

impl From<NeighborError> for NetworkError {
    fn from(e: NeighborError) -> Self {
        match e {
            NeighborError::EmptyCloud => NetworkError::EmptyCloud,
            NeighborError::InvalidArgument(m) => NetworkError::ShapeMismatch(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec(pub Vec<usize>);

impl MlpSpec {
    pub fn out_width(&self) -> usize {
        *self.0.last().expect("non-empty MLP spec")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaConfig {
    pub radius: f64,
    pub n_fps: usize,
    pub n_n: usize,
    pub mlp: MlpSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeConfig {
    pub n_n: usize,
    pub mlp: MlpSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub sa1: SaConfig,
    pub fe: FeConfig,
    pub sa2: SaConfig,
    pub sa3: SaConfig,
    pub mpn: MlpSpec,
    pub head: MlpSpec,
    /// Per-point input feature channels (1: intensity).
    pub feature_channels: usize,
    /// Random subsample of each input scan before SA₁; `None` feeds whole scans.
    pub pre_subsample: Option<usize>,
    pub subsample_seed: u64,
    pub fps_start: FpsStart,
}

pub const PRESETS: &[&str] = &["table1", "reduced"];

impl ModelConfig {
    /// The published architecture, 61,290 trainable parameters.
    pub fn table1() -> Self {
        Self {
            sa1: SaConfig {
                radius: 1.0,
                n_fps: 1024,
                n_n: 8,
                mlp: MlpSpec(vec![4, 8, 16, 32]),
            },
            fe: FeConfig {
                n_n: 16,
                mlp: MlpSpec(vec![32, 64]),
            },
            sa2: SaConfig {
                radius: 4.0,
                n_fps: 256,
                n_n: 32,
                mlp: MlpSpec(vec![64, 64]),
            },
            sa3: SaConfig {
                radius: 8.0,
                n_fps: 64,
                n_n: 8,
                mlp: MlpSpec(vec![64, 64]),
            },
            mpn: MlpSpec(vec![64, 256]),
            head: MlpSpec(vec![64, 6]),
            feature_channels: 1,
            pre_subsample: Some(16384),
            subsample_seed: 0,
            fps_start: FpsStart::First,
        }
    }

    /// Same layer structure at roughly a quarter of the widths and far fewer
    /// centroids, with radii sized for the synthetic scenes.
    pub fn reduced() -> Self {
        Self {
            sa1: SaConfig {
                radius: 3.0,
                n_fps: 64,
                n_n: 8,
                mlp: MlpSpec(vec![4, 4, 8, 8]),
            },
            fe: FeConfig {
                n_n: 8,
                mlp: MlpSpec(vec![8, 16]),
            },
            sa2: SaConfig {
                radius: 8.0,
                n_fps: 16,
                n_n: 8,
                mlp: MlpSpec(vec![16, 16]),
            },
            sa3: SaConfig {
                radius: 16.0,
                n_fps: 8,
                n_n: 8,
                mlp: MlpSpec(vec![16, 16]),
            },
            mpn: MlpSpec(vec![16, 64]),
            head: MlpSpec(vec![16, 6]),
            feature_channels: 1,
            pre_subsample: Some(1024),
            subsample_seed: 0,
            fps_start: FpsStart::First,
        }
    }

    pub fn preset(name: &str) -> Result<Self, NetworkError> {
        match name {
            "table1" => Ok(Self::table1()),
            "reduced" => Ok(Self::reduced()),
            other => Err(NetworkError::UnknownPreset(format!(
                "{other} (known: {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let mlps = [
            ("sa1", &self.sa1.mlp),
            ("fe", &self.fe.mlp),
            ("sa2", &self.sa2.mlp),
            ("sa3", &self.sa3.mlp),
            ("mpn", &self.mpn),
            ("head", &self.head),
        ];
        for (name, m) in mlps {
            if m.0.is_empty() || m.0.contains(&0) {
                return Err(NetworkError::ShapeMismatch(format!(
                    "{name}: MLP widths must be >= 1"
                )));
            }
        }
        for (name, sa) in [("sa1", &self.sa1), ("sa2", &self.sa2), ("sa3", &self.sa3)] {
            if !(sa.radius > 0.0) || sa.n_fps == 0 || sa.n_n == 0 {
                return Err(NetworkError::ShapeMismatch(format!(
                    "{name}: need r > 0 and counts >= 1"
                )));
            }
        }
        if self.fe.n_n == 0 || self.feature_channels == 0 {
            return Err(NetworkError::ShapeMismatch(
                "fe.n_n and feature channels must be >= 1".into(),
            ));
        }
        if self.head.out_width() != 6 {
            return Err(NetworkError::ShapeMismatch(
                "head must end in 6 outputs".into(),
            ));
        }
        Ok(())
    }

    /// Every linear layer in network order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut out = Vec::new();
        let mut push_mlp = |prefix: &str, input: usize, spec: &MlpSpec, bare_last: bool| {
            let mut width = input;
            for (i, &w) in spec.0.iter().enumerate() {
                out.push(LayerSpec {
                    prefix: format!("{prefix}.{i}"),
                    input: width,
                    output: w,
                    batch_norm: !(bare_last && i + 1 == spec.0.len()),
                });
                width = w;
            }
        };
        let c = self.feature_channels;
        push_mlp("sa1", 3 + c, &self.sa1.mlp, false);
        let c1 = self.sa1.mlp.out_width();
        push_mlp("fe", 3 + 2 * c1, &self.fe.mlp, false);
        push_mlp("sa2", 3 + self.fe.mlp.out_width(), &self.sa2.mlp, false);
        push_mlp("sa3", 3 + self.sa2.mlp.out_width(), &self.sa3.mlp, false);
        push_mlp("mpn", self.sa3.mlp.out_width(), &self.mpn, false);
        push_mlp("head", self.mpn.out_width(), &self.head, true);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub prefix: String,
    pub input: usize,
    pub output: usize,
    pub batch_norm: bool,
}

/// Named model tensors: linear weights/biases, batch-norm affine parameters and
/// running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    entries: BTreeMap<String, (TensorRole, Tensor<S>)>,
}

impl<S: Scalar> ModelParams<S> {
    /// Weights uniform in `±√(1/fan_in)`, biases 0, γ = 1, β = 0, running
    /// mean 0 and variance 1.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = BTreeMap::new();
        for l in config.layers() {
            let bound = (1.0 / l.input as f64).sqrt();
            let w: Vec<S> = (0..l.input * l.output)
                .map(|_| S::of(rng.gen_range(-bound..bound)))
                .collect();
            entries.insert(
                format!("{}.weight", l.prefix),
                (
                    TensorRole::Weight,
                    Tensor::new(vec![l.input, l.output], w).unwrap(),
                ),
            );
            entries.insert(
                format!("{}.bias", l.prefix),
                (TensorRole::Bias, Tensor::zeros(&[l.output])),
            );
            if l.batch_norm {
                let o = l.output;
                entries.insert(
                    format!("{}.bn.gamma", l.prefix),
                    (TensorRole::BnGamma, Tensor::filled(&[o], S::ONE)),
                );
                entries.insert(
                    format!("{}.bn.beta", l.prefix),
                    (TensorRole::BnBeta, Tensor::zeros(&[o])),
                );
                entries.insert(
                    format!("{}.bn.running_mean", l.prefix),
                    (TensorRole::BnRunningMean, Tensor::zeros(&[o])),
                );
                entries.insert(
                    format!("{}.bn.running_var", l.prefix),
                    (TensorRole::BnRunningVar, Tensor::filled(&[o], S::ONE)),
                );
            }
        }
        Self { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.entries.get(name).map(|e| &e.1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.entries.get_mut(name).map(|e| &mut e.1)
    }

    pub fn role(&self, name: &str) -> Option<TensorRole> {
        self.entries.get(name).map(|e| e.0)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, TensorRole, &Tensor<S>)> {
        self.entries.iter().map(|(k, (r, t))| (k.as_str(), *r, t))
    }

    /// Mutable access to the optimizer-visible tensors.
    pub fn trainable_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.entries
            .iter_mut()
            .filter(|(_, (r, _))| r.is_trainable())
            .map(|(k, (_, t))| (k.as_str(), t))
    }

    /// Trainable scalars: weights, biases and batch-norm γ/β.
    pub fn count_parameters(&self) -> usize {
        self.entries
            .values()
            .filter(|(r, _)| r.is_trainable())
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Folds training-mode batch statistics into the running averages.
    pub fn apply_batch_stats(
        &mut self,
        stats: &[(String, BatchStats<S>)],
    ) -> Result<(), NetworkError> {
        for (prefix, s) in stats {
            let mean_key = format!("{prefix}.bn.running_mean");
            let var_key = format!("{prefix}.bn.running_var");
            let mut mean = self
                .entries
                .remove(&mean_key)
                .ok_or_else(|| NetworkError::MissingParameter(mean_key.clone()))?;
            let var = self
                .get_mut(&var_key)
                .ok_or_else(|| NetworkError::MissingParameter(var_key.clone()))?;
            s.update_running(mean.1.data_mut(), var.data_mut());
            self.entries.insert(mean_key, mean);
        }
        Ok(())
    }

    /// Checks that every tensor the config needs exists with the right shape.
    pub fn check_against(&self, config: &ModelConfig) -> Result<(), NetworkError> {
        let expected = Self::init(config, 0);
        for (name, (role, t)) in &expected.entries {
            match self.entries.get(name) {
                Some((r, have)) if r == role && have.shape() == t.shape() => {}
                Some((_, have)) => {
                    return Err(NetworkError::ShapeMismatch(format!(
                        "{name}: expected {:?}, found {:?}",
                        t.shape(),
                        have.shape()
                    )))
                }
                None => return Err(NetworkError::MissingParameter(name.clone())),
            }
        }
        if self.entries.len() != expected.entries.len() {
            return Err(NetworkError::ShapeMismatch(
                "checkpoint has extra tensors".into(),
            ));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, adam: Option<&AdamState<S>>) -> Checkpoint<S> {
        let mut tensors: Vec<NamedTensor<S>> = self
            .entries
            .iter()
            .map(|(k, (r, t))| NamedTensor {
                name: k.clone(),
                role: *r,
                tensor: t.clone(),
            })
            .collect();
        let mut step = 0;
        if let Some(a) = adam {
            step = a.step;
            for (k, t) in &a.m {
                tensors.push(NamedTensor {
                    name: format!("adam.m.{k}"),
                    role: TensorRole::AdamFirstMoment,
                    tensor: t.clone(),
                });
            }
            for (k, t) in &a.v {
                tensors.push(NamedTensor {
                    name: format!("adam.v.{k}"),
                    role: TensorRole::AdamSecondMoment,
                    tensor: t.clone(),
                });
            }
        }
        Checkpoint { step, tensors }
    }

    /// Splits a checkpoint into model tensors and Adam state.
    pub fn from_checkpoint(ck: Checkpoint<S>) -> (Self, AdamState<S>) {
        let mut entries = BTreeMap::new();
        let mut adam = AdamState::default();
        adam.step = ck.step;
        for t in ck.tensors {
            match t.role {
                TensorRole::AdamFirstMoment => {
                    let k = t
                        .name
                        .strip_prefix("adam.m.")
                        .unwrap_or(&t.name)
                        .to_string();
                    adam.m.insert(k, t.tensor);
                }
                TensorRole::AdamSecondMoment => {
                    let k = t
                        .name
                        .strip_prefix("adam.v.")
                        .unwrap_or(&t.name)
                        .to_string();
                    adam.v.insert(k, t.tensor);
                }
                role => {
                    entries.insert(t.name, (role, t.tensor));
                }
            }
        }
        (Self { entries }, adam)
    }
}

/// Per-cloud coordinates plus stacked features living on a tape.
struct Level {
    coords: Vec<Vec<[f64; 3]>>,
    features: Var,
}

/// Builds the model graph on a tape, binding parameters as leaves on first use.
pub struct GraphBuilder<'t, S: Scalar> {
    tape: &'t mut Tape<S>,
    params: &'t ModelParams<S>,
    mode: Mode,
    fps_start: FpsStart,
    leaves: BTreeMap<String, Var>,
    stats: Vec<(String, BatchStats<S>)>,
}

impl<'t, S: Scalar> GraphBuilder<'t, S> {
    pub fn new(
        tape: &'t mut Tape<S>,
        params: &'t ModelParams<S>,
        mode: Mode,
        fps_start: FpsStart,
    ) -> Self {
        Self {
            tape,
            params,
            mode,
            fps_start,
            leaves: BTreeMap::new(),
            stats: Vec::new(),
        }
    }

    fn param(&mut self, name: &str) -> Result<Var, NetworkError> {
        if let Some(&v) = self.leaves.get(name) {
            return Ok(v);
        }
        let t = self
            .params
            .get(name)
            .ok_or_else(|| NetworkError::MissingParameter(name.to_string()))?
            .clone();
        let v = self.tape.leaf(t)?;
        self.leaves.insert(name.to_string(), v);
        Ok(v)
    }

    /// Shared MLP over the rows of `x`.
    fn mlp(
        &mut self,
        prefix: &str,
        mut x: Var,
        spec: &MlpSpec,
        bare_last: bool,
    ) -> Result<Var, NetworkError> {
        for i in 0..spec.0.len() {
            let p = format!("{prefix}.{i}");
            let w = self.param(&format!("{p}.weight"))?;
            let b = self.param(&format!("{p}.bias"))?;
            x = self.tape.linear(x, w, b)?;
            if bare_last && i + 1 == spec.0.len() {
                break;
            }
            let g = self.param(&format!("{p}.bn.gamma"))?;
            let be = self.param(&format!("{p}.bn.beta"))?;
            let rm = self.params.get(&format!("{p}.bn.running_mean"));
            let rv = self.params.get(&format!("{p}.bn.running_var"));
            let (Some(rm), Some(rv)) = (rm, rv) else {
                return Err(NetworkError::MissingParameter(format!("{p}.bn.running_*")));
            };
            let (y, stats) = self
                .tape
                .batch_norm(x, g, be, (rm.data(), rv.data()), self.mode)?;
            if let Some(s) = stats {
                self.stats.push((p, s));
            }
            x = self.tape.relu(y)?;
        }
        Ok(x)
    }

    fn set_abstraction(
        &mut self,
        prefix: &str,
        input: &Level,
        cfg: &SaConfig,
    ) -> Result<Level, NetworkError> {
        let mut gather = Vec::new();
        let mut rel: Vec<S> = Vec::new();
        let mut valid = Vec::new();
        let mut coords_out = Vec::with_capacity(input.coords.len());
        let mut offset = 0;
        for pts in &input.coords {
            let start = self.fps_start.resolve(pts);
            let centroids = neighbors::farthest_point_sampling(pts, cfg.n_fps, start)?;
            let groups = neighbors::radius_group(pts, &centroids, cfg.radius, cfg.n_n)?;
            for (list, &c) in groups.iter().zip(&centroids) {
                valid.push(list.len());
                let cp = pts[c];
                for e in 0..cfg.n_n {
                    // Short lists are padded with their first entry; pooling
                    // only reads the valid prefix.
                    let i = *list.get(e).unwrap_or(&list[0]);
                    gather.push(offset + i);
                    let p = pts[i];
                    rel.extend([p[0] - cp[0], p[1] - cp[1], p[2] - cp[2]].map(S::of));
                }
            }
            coords_out.push(centroids.iter().map(|&c| pts[c]).collect());
            offset += pts.len();
        }
        let rows = gather.len();
        let f = self.tape.gather_rows(input.features, &gather)?;
        let r = self.tape.constant(Tensor::new(vec![rows, 3], rel)?)?;
        let x = self.tape.concat_cols(&[f, r])?;
        let h = self.mlp(prefix, x, &cfg.mlp, false)?;
        let width = cfg.mlp.out_width();
        let h = self.tape.reshape(h, &[valid.len(), cfg.n_n, width])?;
        let pooled = self.tape.max_pool_set(h, &valid)?;
        Ok(Level {
            coords: coords_out,
            features: pooled,
        })
    }

    /// `first` and `second` index clouds of `level`; returns one embedding
    /// per point of each `first` cloud.
    fn flow_embedding(
        &mut self,
        prefix: &str,
        level: &Level,
        first: &[usize],
        second: &[usize],
        cfg: &FeConfig,
    ) -> Result<Level, NetworkError> {
        let offsets: Vec<usize> = level
            .coords
            .iter()
            .scan(0, |acc, c| {
                let o = *acc;
                *acc += c.len();
                Some(o)
            })
            .collect();
        let mut gp = Vec::new();
        let mut gq = Vec::new();
        let mut rel: Vec<S> = Vec::new();
        let mut coords_out = Vec::new();
        for (&a, &b) in first.iter().zip(second) {
            let (xp, yq) = (&level.coords[a], &level.coords[b]);
            let nn = neighbors::knn(xp, yq, cfg.n_n)?;
            for (i, list) in nn.iter().enumerate() {
                for &j in list {
                    gp.push(offsets[a] + i);
                    gq.push(offsets[b] + j);
                    let (x, y) = (xp[i], yq[j]);
                    rel.extend([y[0] - x[0], y[1] - x[1], y[2] - x[2]].map(S::of));
                }
            }
            coords_out.push(xp.clone());
        }
        let rows = gp.len();
        let f = self.tape.gather_rows(level.features, &gp)?;
        let g = self.tape.gather_rows(level.features, &gq)?;
        let r = self.tape.constant(Tensor::new(vec![rows, 3], rel)?)?;
        let x = self.tape.concat_cols(&[f, g, r])?;
        let h = self.mlp(prefix, x, &cfg.mlp, false)?;
        let points = rows / cfg.n_n;
        let h = self
            .tape
            .reshape(h, &[points, cfg.n_n, cfg.mlp.out_width()])?;
        let pooled = self.tape.max_pool_set(h, &vec![cfg.n_n; points])?;
        Ok(Level {
            coords: coords_out,
            features: pooled,
        })
    }

    /// Shared MLP over `sets` equally sized groups of rows, then max over each.
    fn mini_pointnet(
        &mut self,
        prefix: &str,
        x: Var,
        sets: usize,
        spec: &MlpSpec,
    ) -> Result<Var, NetworkError> {
        let rows = self.tape.value(x).rows();
        if sets == 0 || rows == 0 || rows % sets != 0 {
            return Err(NetworkError::ShapeMismatch(format!(
                "mini-PointNet: {rows} rows into {sets} sets"
            )));
        }
        let h = self.mlp(prefix, x, spec, false)?;
        let per = rows / sets;
        let h = self.tape.reshape(h, &[sets, per, spec.out_width()])?;
        Ok(self.tape.max_pool_set(h, &vec![per; sets])?)
    }

    fn input_level(&mut self, clouds: &[&PointCloud]) -> Result<Level, NetworkError> {
        let c = clouds.first().map(|c| c.channels()).unwrap_or(0);
        let mut feats = Vec::new();
        let mut coords = Vec::new();
        for cl in clouds {
            if cl.is_empty() {
                return Err(NetworkError::EmptyCloud);
            }
            if cl.channels() != c {
                return Err(NetworkError::ShapeMismatch(
                    "clouds differ in feature width".into(),
                ));
            }
            feats.extend(cl.features().iter().map(|&v| S::of(v)));
            coords.push(cl.xyz().to_vec());
        }
        let n = coords.iter().map(|c| c.len()).sum();
        let features = self.tape.constant(Tensor::new(vec![n, c], feats)?)?;
        Ok(Level { coords, features })
    }

    /// Full model on a batch of `(p, q)` pairs; returns a `[B, 6]` output.
    pub fn model(
        &mut self,
        pairs: &[(&PointCloud, &PointCloud)],
        config: &ModelConfig,
    ) -> Result<Var, NetworkError> {
        if pairs.is_empty() {
            return Err(NetworkError::ShapeMismatch("empty batch".into()));
        }
        let mut prepared = Vec::with_capacity(2 * pairs.len());
        for slot in 0..2u64 {
            for (p, q) in pairs {
                let cloud = if slot == 0 { *p } else { *q };
                if cloud.is_empty() {
                    return Err(NetworkError::EmptyCloud);
                }
                if cloud.channels() != config.feature_channels {
                    return Err(NetworkError::ShapeMismatch(format!(
                        "expected {} feature channels, got {}",
                        config.feature_channels,
                        cloud.channels()
                    )));
                }
                prepared.push(match config.pre_subsample {
                    Some(n_max) if cloud.len() > n_max => {
                        random_subsample(cloud, n_max, config.subsample_seed.wrapping_add(slot))
                    }
                    _ => cloud.clone(),
                });
            }
        }
        let refs: Vec<&PointCloud> = prepared.iter().collect();
        let b = pairs.len();
        let level0 = self.input_level(&refs)?;
        let level1 = self.set_abstraction("sa1", &level0, &config.sa1)?;
        let first: Vec<usize> = (0..b).collect();
        let second: Vec<usize> = (b..2 * b).collect();
        let fe = self.flow_embedding("fe", &level1, &first, &second, &config.fe)?;
        let level2 = self.set_abstraction("sa2", &fe, &config.sa2)?;
        let level3 = self.set_abstraction("sa3", &level2, &config.sa3)?;
        let global = self.mini_pointnet("mpn", level3.features, b, &config.mpn)?;
        self.mlp("head", global, &config.head, true)
    }

    pub fn into_parts(self) -> (BTreeMap<String, Var>, Vec<(String, BatchStats<S>)>) {
        (self.leaves, self.stats)
    }
}

/// Graph of one batch forward pass.
pub struct BatchForward<S> {
    pub tape: Tape<S>,
    pub output: Var,
    pub leaves: BTreeMap<String, Var>,
    pub stats: Vec<(String, BatchStats<S>)>,
}

impl<S: Scalar> BatchForward<S> {
    pub fn predictions(&self) -> Vec<PoseDelta> {
        self.tape
            .value(self.output)
            .data()
            .chunks_exact(6)
            .map(|r| PoseDelta::from_array([0, 1, 2, 3, 4, 5].map(|i| r[i].f64())))
            .collect()
    }

    /// Parameter gradients by name.
    pub fn named_grads(&self, grads: &mut Gradients<S>) -> BTreeMap<String, Tensor<S>> {
        self.leaves
            .iter()
            .filter_map(|(k, &v)| grads.take(v).map(|g| (k.clone(), g)))
            .collect()
    }
}

pub fn forward_batch<S: Scalar>(
    pairs: &[(&PointCloud, &PointCloud)],
    params: &ModelParams<S>,
    config: &ModelConfig,
    mode: Mode,
) -> Result<BatchForward<S>, NetworkError> {
    let mut tape = Tape::new();
    let mut g = GraphBuilder::new(&mut tape, params, mode, config.fps_start);
    let output = g.model(pairs, config)?;
    let (leaves, stats) = g.into_parts();
    Ok(BatchForward {
        tape,
        output,
        leaves,
        stats,
    })
}

/// Predicted motion from `p` (time t) to `q` (time t+1).
///
/// Training mode on a single pair fails with `DegenerateBatch`: the head's
/// batch norm sees one row.
pub fn model_forward<S: Scalar>(
    p: &PointCloud,
    q: &PointCloud,
    params: &ModelParams<S>,
    config: &ModelConfig,
    mode: Mode,
) -> Result<PoseDelta, NetworkError> {
    Ok(forward_batch(&[(p, q)], params, config, mode)?.predictions()[0])
}

/// One set-abstraction layer on a standalone cloud. Returns centroid
/// coordinates and their pooled features.
pub fn set_abstraction<S: Scalar>(
    cloud: &PointCloud,
    prefix: &str,
    cfg: &SaConfig,
    params: &ModelParams<S>,
    mode: Mode,
    fps_start: FpsStart,
) -> Result<(Vec<[f64; 3]>, Tensor<S>), NetworkError> {
    let mut tape = Tape::new();
    let mut g = GraphBuilder::new(&mut tape, params, mode, fps_start);
    let level = g.input_level(&[cloud])?;
    let out = g.set_abstraction(prefix, &level, cfg)?;
    let Level {
        mut coords,
        features,
    } = out;
    Ok((coords.remove(0), tape.value(features).clone()))
}

/// One flow-embedding layer: an embedding for every point of `p`.
pub fn flow_embedding<S: Scalar>(
    p: &PointCloud,
    q: &PointCloud,
    prefix: &str,
    cfg: &FeConfig,
    params: &ModelParams<S>,
    mode: Mode,
) -> Result<(Vec<[f64; 3]>, Tensor<S>), NetworkError> {
    if p.channels() != q.channels() {
        return Err(NetworkError::ShapeMismatch(
            "p and q differ in feature width".into(),
        ));
    }
    let mut tape = Tape::new();
    let mut g = GraphBuilder::new(&mut tape, params, mode, FpsStart::First);
    let level = g.input_level(&[p, q])?;
    let out = g.flow_embedding(prefix, &level, &[0], &[1], cfg)?;
    let Level {
        mut coords,
        features,
    } = out;
    Ok((coords.remove(0), tape.value(features).clone()))
}

/// Shared MLP over `n` feature vectors followed by channelwise max.
pub fn mini_pointnet<S: Scalar>(
    features: &Tensor<S>,
    prefix: &str,
    spec: &MlpSpec,
    params: &ModelParams<S>,
    mode: Mode,
) -> Result<Vec<S>, NetworkError> {
    if features.shape().len() != 2 || features.rows() == 0 {
        return Err(NetworkError::ShapeMismatch(format!(
            "mini-PointNet expects [n >= 1, c], got {:?}",
            features.shape()
        )));
    }
    let mut tape = Tape::new();
    let mut g = GraphBuilder::new(&mut tape, params, mode, FpsStart::First);
    let x = g.tape.constant(features.clone())?;
    let out = g.mini_pointnet(prefix, x, 1, spec)?;
    Ok(tape.value(out).data().to_vec())
}

/// Trainable scalar count of a configuration.
pub fn count_parameters(config: &ModelConfig) -> usize {
    ModelParams::<f32>::init(config, 0).count_parameters()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Independent per-layer count: `in·out + out` per linear layer plus
    /// `2·out` for each batch-normalized layer.
    fn hand_count(input_widths: &[(usize, &[usize], bool)]) -> usize {
        let mut total = 0;
        for &(input, widths, bare_last) in input_widths {
            let mut w_in = input;
            for (i, &w) in widths.iter().enumerate() {
                total += w_in * w + w;
                if !(bare_last && i + 1 == widths.len()) {
                    total += 2 * w;
                }
                w_in = w;
            }
        }
        total
    }

    fn hand_count_config(c: &ModelConfig) -> usize {
        let ch = c.feature_channels;
        hand_count(&[
            (3 + ch, &c.sa1.mlp.0, false),
            (3 + 2 * c.sa1.mlp.out_width(), &c.fe.mlp.0, false),
            (3 + c.fe.mlp.out_width(), &c.sa2.mlp.0, false),
            (3 + c.sa2.mlp.out_width(), &c.sa3.mlp.0, false),
            (c.sa3.mlp.out_width(), &c.mpn.0, false),
            (c.mpn.out_width(), &c.head.0, true),
        ])
    }

    #[test]
    fn table1_has_61290_parameters() {
        let c = ModelConfig::table1();
        assert_eq!(hand_count_config(&c), 61_290);
        assert_eq!(count_parameters(&c), 61_290);
    }

    #[test]
    fn counting_matches_hand_count_on_other_configs() {
        let mut a = ModelConfig::reduced();
        assert_eq!(count_parameters(&a), hand_count_config(&a));
        a.feature_channels = 2;
        a.head = MlpSpec(vec![6]);
        assert_eq!(count_parameters(&a), hand_count_config(&a));
        let mut b = ModelConfig::table1();
        b.sa1.mlp = MlpSpec(vec![3, 5]);
        b.mpn = MlpSpec(vec![7]);
        assert_eq!(count_parameters(&b), hand_count_config(&b));
    }

    #[test]
    fn single_layer_counts() {
        assert_eq!(hand_count(&[(2, &[3], true)]), 9);
        assert_eq!(hand_count(&[(2, &[3], false)]), 15);
    }

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        let xyz = (0..n)
            .map(|_| [0, 1, 2].map(|_| rng.gen_range(-1024i32..1024) as f64 / 64.0))
            .collect();
        let f = (0..n)
            .map(|_| rng.gen_range(0i32..256) as f64 / 256.0)
            .collect();
        PointCloud::with_intensity(xyz, f).unwrap()
    }

    fn random_params(config: &ModelConfig, seed: u64) -> ModelParams<f64> {
        let mut p = ModelParams::init(config, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let names: Vec<String> = p.names().map(String::from).collect();
        for n in names {
            let role = p.role(&n).unwrap();
            for v in p.get_mut(&n).unwrap().data_mut() {
                match role {
                    TensorRole::BnRunningVar => *v = rng.gen_range(0.5..2.0),
                    TensorRole::Weight => {}
                    _ => *v += rng.gen_range(-0.3..0.3),
                }
            }
        }
        p
    }

    #[test]
    fn forward_shapes_and_finiteness() {
        let config = ModelConfig::reduced();
        let params = random_params(&config, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (p, q) = (cloud(&mut rng, 200), cloud(&mut rng, 150));
        let out = model_forward(&p, &q, &params, &config, Mode::Infer).unwrap();
        assert!(out.is_finite());
        assert_eq!(
            out,
            model_forward(&p, &q, &params, &config, Mode::Infer).unwrap()
        );
        let err = model_forward(&p, &q, &params, &config, Mode::Train).unwrap_err();
        assert_eq!(
            err,
            NetworkError::Autodiff(AutodiffError::DegenerateBatch(1))
        );
        let batch = forward_batch(&[(&p, &q), (&q, &p)], &params, &config, Mode::Train).unwrap();
        assert_eq!(batch.tape.value(batch.output).shape(), &[2, 6]);
        let empty = PointCloud::empty(1);
        assert_eq!(
            model_forward(&empty, &q, &params, &config, Mode::Infer).unwrap_err(),
            NetworkError::EmptyCloud
        );
    }

    #[test]
    fn table1_pipeline_shapes() {
        let config = ModelConfig::table1();
        let params = ModelParams::<f32>::init(&config, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = cloud(&mut rng, 1500);
        let (c1, f1) = set_abstraction(
            &p,
            "sa1",
            &config.sa1,
            &params,
            Mode::Infer,
            FpsStart::First,
        )
        .unwrap();
        assert_eq!((c1.len(), f1.shape()), (1024, &[1024usize, 32][..]));
        let out = model_forward(&p, &cloud(&mut rng, 1200), &params, &config, Mode::Infer).unwrap();
        assert!(out.is_finite());
    }

    #[test]
    fn set_abstraction_translation_and_singletons() {
        let config = ModelConfig::reduced();
        let params = random_params(&config, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = cloud(&mut rng, 120);
        let v = [37.0, -12.0, 5.0];
        let (c_a, f_a) = set_abstraction(
            &p,
            "sa1",
            &config.sa1,
            &params,
            Mode::Train,
            FpsStart::First,
        )
        .unwrap();
        let (c_b, f_b) = set_abstraction(
            &p.translated(v),
            "sa1",
            &config.sa1,
            &params,
            Mode::Train,
            FpsStart::First,
        )
        .unwrap();
        assert_eq!(c_a.len(), config.sa1.n_fps);
        assert_eq!(f_a, f_b);
        for (a, b) in c_a.iter().zip(&c_b) {
            assert_eq!([a[0] + v[0], a[1] + v[1], a[2] + v[2]], *b);
        }
        let single = PointCloud::with_intensity(vec![[1.0, 2.0, 3.0]], vec![0.5]).unwrap();
        let (c, f) = set_abstraction(
            &single,
            "sa1",
            &config.sa1,
            &params,
            Mode::Infer,
            FpsStart::First,
        )
        .unwrap();
        assert!(c.iter().all(|p| *p == [1.0, 2.0, 3.0]));
        assert!(f.all_finite());
    }

    #[test]
    fn flow_embedding_shape_and_translation() {
        let config = ModelConfig::reduced();
        let params = random_params(&config, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // FE reads SA₁-width features; build clouds with that many channels.
        let c1 = config.sa1.mlp.out_width();
        let mk = |rng: &mut ChaCha8Rng, n: usize| {
            let base = cloud(rng, n);
            let f = (0..n * c1).map(|_| rng.gen_range(-1.0..1.0)).collect();
            PointCloud::new(base.xyz().to_vec(), f, c1).unwrap()
        };
        let (p, q) = (mk(&mut rng, 40), mk(&mut rng, 5));
        let (coords, e) = flow_embedding(&p, &q, "fe", &config.fe, &params, Mode::Train).unwrap();
        assert_eq!(coords, p.xyz());
        assert_eq!(e.shape(), &[40, config.fe.mlp.out_width()]);
        let v = [-8.0, 3.0, 100.0];
        let (_, e2) = flow_embedding(
            &p.translated(v),
            &q.translated(v),
            "fe",
            &config.fe,
            &params,
            Mode::Train,
        )
        .unwrap();
        assert_eq!(e, e2);
    }

    #[test]
    fn mini_pointnet_symmetries() {
        let config = ModelConfig::reduced();
        let params = random_params(&config, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = config.sa3.mlp.out_width();
        let rows: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..c).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let t =
            |rows: &[Vec<f64>]| Tensor::<f64>::from_f64(&[rows.len(), c], &rows.concat()).unwrap();
        let base = mini_pointnet(&t(&rows), "mpn", &config.mpn, &params, Mode::Infer).unwrap();
        let mut perm = rows.clone();
        perm.reverse();
        perm.swap(0, 3);
        assert_eq!(
            mini_pointnet(&t(&perm), "mpn", &config.mpn, &params, Mode::Infer).unwrap(),
            base
        );
        let mut dup = rows.clone();
        dup.push(rows[2].clone());
        assert_eq!(
            mini_pointnet(&t(&dup), "mpn", &config.mpn, &params, Mode::Infer).unwrap(),
            base
        );

        // n = 1 is just the MLP image of that vector.
        let one = mini_pointnet(&t(&rows[..1]), "mpn", &config.mpn, &params, Mode::Infer).unwrap();
        let mut tape = Tape::new();
        let mut g = GraphBuilder::new(&mut tape, &params, Mode::Infer, FpsStart::First);
        let x = g.tape.constant(t(&rows[..1])).unwrap();
        let h = g.mlp("mpn", x, &config.mpn, false).unwrap();
        assert_eq!(tape.value(h).data(), &one[..]);
    }

    #[test]
    fn joint_translation_invariance_of_model() {
        let config = ModelConfig::reduced();
        let params = random_params(&config, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (p, q) = (cloud(&mut rng, 300), cloud(&mut rng, 280));
        let v = [64.0, -32.0, 8.0];
        let a = model_forward(&p, &q, &params, &config, Mode::Infer).unwrap();
        let b = model_forward(
            &p.translated(v),
            &q.translated(v),
            &params,
            &config,
            Mode::Infer,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn canonical_start_gives_permutation_invariance() {
        let mut config = ModelConfig::reduced();
        config.fps_start = FpsStart::Canonical;
        config.pre_subsample = None;
        let params = random_params(&config, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (p, q) = (cloud(&mut rng, 150), cloud(&mut rng, 150));
        let mut order: Vec<usize> = (0..150).collect();
        order.reverse();
        order.swap(3, 77);
        let a = model_forward(&p, &q, &params, &config, Mode::Infer).unwrap();
        let b = model_forward(
            &p.select(&order),
            &q.select(&order),
            &params,
            &config,
            Mode::Infer,
        )
        .unwrap();
        for (x, y) in a.to_array().iter().zip(b.to_array()) {
            assert!((x - y).abs() < 1e-9, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn checkpoint_round_trip_and_validation() {
        let config = ModelConfig::reduced();
        let params = random_params(&config, 16);
        let mut adam = AdamState::default();
        adam.step = 7;
        adam.m
            .insert("head.1.bias".into(), Tensor::filled(&[6], 0.5));
        adam.v
            .insert("head.1.bias".into(), Tensor::filled(&[6], 0.25));
        let bytes = params.to_checkpoint(Some(&adam)).to_bytes();
        let (p2, a2) = ModelParams::from_checkpoint(Checkpoint::<f64>::from_bytes(&bytes).unwrap());
        assert_eq!(p2, params);
        assert_eq!(a2, adam);
        p2.check_against(&config).unwrap();
        assert!(p2.check_against(&ModelConfig::table1()).is_err());
    }
}
