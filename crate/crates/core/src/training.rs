//! Losses, swap augmentation, step schedule and the Adam training loop.
//!
//! A batch of `batch_pairs` pairs is evaluated jointly on one tape, so
//! training-mode batch norm (the head included) sees every pair in the batch.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::checkpoint::CheckpointError;
use crate::autodiff::{adam_step, AdamState, AutodiffError, Mode, Precision, Scalar};
use crate::dataio::{DataError, FramePair, SequencePairs};
use crate::geometry::{delta_to_transform, invert, transform_to_delta_canonical, PoseDelta};
use crate::network::{forward_batch, ModelConfig, ModelParams, NetworkError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("DivergedLoss: non-finite loss at epoch {epoch}, step {step}")]
    DivergedLoss { epoch: usize, step: u64 },
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
}

/// Which components enter the cosine-distance regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CosVariant {
    Full,
    Translation,
}

impl CosVariant {
    fn cols(self) -> std::ops::Range<usize> {
        match self {
            CosVariant::Full => 0..6,
            CosVariant::Translation => 0..3,
        }
    }
}

impl std::str::FromStr for CosVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(CosVariant::Full),
            "translation" => Ok(CosVariant::Translation),
            other => Err(format!(
                "unknown cosine variant '{other}' (expected full or translation)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_base: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub batch_pairs: usize,
    pub swap_probability: f64,
    /// Weight of the cosine regularizer; 0 disables it.
    pub cos_reg_weight: f64,
    pub cos_variant: CosVariant,
    pub seed: u64,
    pub precision: Precision,
    /// Save a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr_base: 1e-3,
            lr_decay_epochs: vec![300, 400],
            lr_decay_factor: 0.1,
            batch_pairs: 8,
            swap_probability: 0.5,
            cos_reg_weight: 0.0,
            cos_variant: CosVariant::Translation,
            seed: 0,
            precision: Precision::F32,
            checkpoint_every: 50,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !self.lr_decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            return bad("lr_decay_epochs must be strictly ascending");
        }
        if !(0.0..=1.0).contains(&self.swap_probability) {
            return bad("swap_probability must lie in [0, 1]");
        }
        if self.batch_pairs < 2 {
            return bad("batch_pairs must be >= 2 (batch norm needs two rows)");
        }
        if !(self.lr_base > 0.0) || !(self.lr_decay_factor > 0.0) {
            return bad("learning rate and decay factor must be positive");
        }
        if !(self.cos_reg_weight >= 0.0) {
            return bad("cos_reg_weight must be >= 0");
        }
        Ok(())
    }
}

/// Step schedule: `lr_base · factor^k`, `k` the number of decay epochs reached.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let k = cfg.lr_decay_epochs.iter().filter(|&&e| epoch >= e).count();
    cfg.lr_base * cfg.lr_decay_factor.powi(k as i32)
}

/// Mean absolute error over the six components.
pub fn mae_loss(y: &PoseDelta, yhat: &PoseDelta) -> f64 {
    let (a, b) = (y.to_array(), yhat.to_array());
    a.iter().zip(&b).map(|(u, v)| (u - v).abs()).sum::<f64>() / 6.0
}

/// `1 − cos(y, ŷ)`; `None` when either vector has zero norm.
pub fn cos_dist(y: &[f64], yhat: &[f64]) -> Option<f64> {
    let dot: f64 = y.iter().zip(yhat).map(|(a, b)| a * b).sum();
    let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nh = yhat.iter().map(|a| a * a).sum::<f64>().sqrt();
    (ny > 0.0 && nh > 0.0).then(|| 1.0 - dot / (ny * nh))
}

/// `mae + weight · cos_dist`, the zero-norm case contributing nothing.
pub fn combined_loss(y: &PoseDelta, yhat: &PoseDelta, weight: f64, variant: CosVariant) -> f64 {
    let cols = variant.cols();
    let reg = cos_dist(&y.to_array()[cols.clone()], &yhat.to_array()[cols]).unwrap_or(0.0);
    mae_loss(y, yhat) + weight * reg
}

/// `(q, p)` with the inverse motion.
pub fn swap_pair(pair: FramePair) -> FramePair {
    let inv = invert(&delta_to_transform(&pair.target));
    FramePair {
        p: pair.q,
        q: pair.p,
        target: transform_to_delta_canonical(&inv),
    }
}

/// Swaps the pair's order with probability `swap_probability`.
pub fn augment_swap<R: Rng>(pair: FramePair, rng: &mut R, swap_probability: f64) -> FramePair {
    if rng.gen_bool(swap_probability) {
        swap_pair(pair)
    } else {
        pair
    }
}

/// Indexed supply of training pairs.
pub trait PairSource {
    fn len(&self) -> usize;
    fn pair(&self, i: usize) -> Result<FramePair, TrainError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PairSource for [FramePair] {
    fn len(&self) -> usize {
        <[FramePair]>::len(self)
    }

    fn pair(&self, i: usize) -> Result<FramePair, TrainError> {
        Ok(self[i].clone())
    }
}

impl PairSource for Vec<FramePair> {
    fn len(&self) -> usize {
        <[FramePair]>::len(self)
    }

    fn pair(&self, i: usize) -> Result<FramePair, TrainError> {
        Ok(self[i].clone())
    }
}

impl PairSource for SequencePairs {
    fn len(&self) -> usize {
        SequencePairs::len(self)
    }

    fn pair(&self, i: usize) -> Result<FramePair, TrainError> {
        Ok(self.load(i)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-mode MAE over the epoch's pairs.
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_loss,lr,seconds\n");
        for r in &self.records {
            let test = r.test_loss.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{:.3}",
                r.epoch, r.train_loss, test, r.lr, r.seconds
            );
        }
        out
    }
}

/// Batches of the shuffled order; a trailing single pair joins the previous batch.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() >= 2 && out.last().unwrap().len() == 1 {
        let n = order.len();
        out.pop();
        let start = n - 1 - out.last().unwrap().len();
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// Mean inference-mode MAE over a pair source.
pub fn evaluate_mae<S: Scalar>(
    source: &dyn PairSource,
    params: &ModelParams<S>,
    model: &ModelConfig,
    batch_pairs: usize,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let idx: Vec<usize> = (0..source.len()).collect();
    for chunk in idx.chunks(batch_pairs.max(1)) {
        let pairs = chunk
            .iter()
            .map(|&i| source.pair(i))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<_> = pairs.iter().map(|p| (&p.p, &p.q)).collect();
        let fwd = forward_batch(&refs, params, model, Mode::Infer)?;
        for (pred, pair) in fwd.predictions().iter().zip(&pairs) {
            total += mae_loss(&pair.target, pred);
        }
    }
    Ok(total / source.len().max(1) as f64)
}

/// Final state of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    pub params: ModelParams<S>,
    pub adam: AdamState<S>,
    pub history: TrainHistory,
}

/// Where and how often to persist checkpoints.
#[derive(Debug, Clone)]
pub struct CheckpointSink {
    pub dir: PathBuf,
}

impl CheckpointSink {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.ckpt"))
    }

    fn save<S: Scalar>(
        &self,
        name: &str,
        params: &ModelParams<S>,
        adam: &AdamState<S>,
    ) -> Result<(), TrainError> {
        std::fs::create_dir_all(&self.dir)?;
        params.to_checkpoint(Some(adam)).save(&self.path(name))?;
        Ok(())
    }
}

/// Runs the epoch loop from `ModelParams::init(model, cfg.seed)`.
pub fn train<S: Scalar>(
    train_set: &dyn PairSource,
    test_set: Option<&dyn PairSource>,
    model: &ModelConfig,
    cfg: &TrainConfig,
    checkpoints: Option<&CheckpointSink>,
) -> Result<TrainOutcome<S>, TrainError> {
    let params = ModelParams::init(model, cfg.seed);
    train_from(
        params,
        AdamState::default(),
        train_set,
        test_set,
        model,
        cfg,
        checkpoints,
    )
}

/// Continues training from given parameters and optimizer state.
pub fn train_from<S: Scalar>(
    mut params: ModelParams<S>,
    mut adam: AdamState<S>,
    train_set: &dyn PairSource,
    test_set: Option<&dyn PairSource>,
    model: &ModelConfig,
    cfg: &TrainConfig,
    checkpoints: Option<&CheckpointSink>,
) -> Result<TrainOutcome<S>, TrainError> {
    cfg.validate()?;
    model.validate()?;
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            params,
            adam,
            history,
        });
    }
    let n = train_set.len();
    if n < 2 {
        return Err(TrainError::InvalidConfig(format!(
            "need at least 2 training pairs, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut steps = 0u64;
    'epochs: for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for batch in batches(&order, cfg.batch_pairs) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let pairs = batch
                .iter()
                .map(|&i| {
                    Ok(augment_swap(
                        train_set.pair(i)?,
                        &mut rng,
                        cfg.swap_probability,
                    ))
                })
                .collect::<Result<Vec<_>, TrainError>>()?;
            let refs: Vec<_> = pairs.iter().map(|p| (&p.p, &p.q)).collect();
            let targets: Vec<S> = pairs
                .iter()
                .flat_map(|p| p.target.to_array())
                .map(S::of)
                .collect();
            let diverged = || TrainError::DivergedLoss { epoch, step: steps };
            let step = (|| -> Result<_, TrainError> {
                let mut fwd = forward_batch(&refs, &params, model, Mode::Train)?;
                let mae = fwd
                    .tape
                    .mae(fwd.output, &targets)
                    .map_err(NetworkError::from)?;
                let mut loss = mae;
                if cfg.cos_reg_weight > 0.0 {
                    let c = fwd
                        .tape
                        .cos_dist(fwd.output, &targets, cfg.cos_variant.cols())
                        .map_err(NetworkError::from)?;
                    let c = fwd
                        .tape
                        .scale(c, S::of(cfg.cos_reg_weight))
                        .map_err(NetworkError::from)?;
                    loss = fwd.tape.add(mae, c).map_err(NetworkError::from)?;
                }
                let mut grads = fwd.tape.backward(loss).map_err(NetworkError::from)?;
                let named = fwd.named_grads(&mut grads);
                Ok((fwd.tape.value(mae).data()[0].f64(), named, fwd.stats))
            })();
            let (mae, grads, stats) = match step {
                Ok(s) => s,
                Err(TrainError::Network(NetworkError::Autodiff(AutodiffError::NonFinite(_)))) => {
                    if let Some(sink) = checkpoints {
                        sink.save("last_good", &params, &adam)?;
                    }
                    return Err(diverged());
                }
                Err(e) => return Err(e),
            };
            if !mae.is_finite() || !grads.values().all(|g| g.all_finite()) {
                if let Some(sink) = checkpoints {
                    sink.save("last_good", &params, &adam)?;
                }
                return Err(diverged());
            }
            adam_step(params.trainable_mut(), &grads, &mut adam, lr).map_err(NetworkError::from)?;
            params.apply_batch_stats(&stats)?;
            steps += 1;
            loss_sum += mae * pairs.len() as f64;
            seen += pairs.len();
        }
        if seen == 0 {
            break 'epochs;
        }
        let test_loss = match test_set {
            Some(t) if !t.is_empty() => Some(evaluate_mae(t, &params, model, cfg.batch_pairs)?),
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            test_loss,
            lr,
            seconds: started.elapsed().as_secs_f64(),
            steps,
        };
        log::info!(
            "epoch {} train {:.6} test {} lr {:e} steps {}",
            record.epoch,
            record.train_loss,
            record
                .test_loss
                .map(|v| format!("{v:.6}"))
                .unwrap_or_else(|| "-".into()),
            record.lr,
            steps
        );
        history.records.push(record);
        if let Some(sink) = checkpoints {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                sink.save(&format!("epoch_{:04}", epoch + 1), &params, &adam)?;
            }
        }
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
    }
    if let Some(sink) = checkpoints {
        sink.save("final", &params, &adam)?;
    }
    Ok(TrainOutcome {
        params,
        adam,
        history,
    })
}

/// Reads a checkpoint written by [`train`] for continued training or inference.
pub fn load_checkpoint<S: Scalar>(
    path: &Path,
    model: &ModelConfig,
) -> Result<(ModelParams<S>, AdamState<S>), TrainError> {
    let ck = crate::autodiff::checkpoint::Checkpoint::<S>::load(path)?;
    let (params, adam) = ModelParams::from_checkpoint(ck);
    params.check_against(model)?;
    Ok((params, adam))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{make_synthetic_pair, SyntheticConfig};
    use crate::evaluation::accumulate;
    use crate::geometry::{compose, transform_to_delta};
    use crate::network::MlpSpec;

    #[test]
    fn schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 1e-3);
        assert_eq!(lr_at(299, &cfg), 1e-3);
        assert!((lr_at(300, &cfg) - 1e-4).abs() < 1e-18);
        assert!((lr_at(499, &cfg) - 1e-5).abs() < 1e-18);
        assert!((0..499).all(|e| lr_at(e + 1, &cfg) <= lr_at(e, &cfg)));
    }

    #[test]
    fn loss_examples() {
        let y = PoseDelta::new([1.0, 2.0, 3.0], [4.0, 5.0, 6.0]);
        assert_eq!(mae_loss(&y, &y), 0.0);
        let mut z = y;
        z.r[1] += 6.0;
        assert_eq!(mae_loss(&y, &z), 1.0);
        let v = [1.0, -2.0, 0.5];
        assert_eq!(cos_dist(&v, &v.map(|a| 2.0 * a)), Some(0.0));
        assert_eq!(cos_dist(&[1.0, 0.0], &[0.0, 3.0]), Some(1.0));
        assert_eq!(cos_dist(&v, &v.map(|a| -a)), Some(2.0));
        assert_eq!(cos_dist(&[0.0; 3], &v), None);
        assert_eq!(
            combined_loss(&PoseDelta::zero(), &y, 1.0, CosVariant::Full),
            mae_loss(&PoseDelta::zero(), &y)
        );
        assert!(combined_loss(&y, &z, 0.5, CosVariant::Translation) >= 0.0);
    }

    #[test]
    fn tape_mae_gradient_is_sign_over_six() {
        use crate::autodiff::{Tape, Tensor};
        let y = [0.5, -1.0, 2.0, 0.0, 3.0, -4.0];
        let yhat = [1.0, -2.0, 2.5, 0.25, 1.0, -3.0];
        let mut tape = Tape::<f64>::new();
        let p = tape
            .leaf(Tensor::from_f64(&[1, 6], &yhat).unwrap())
            .unwrap();
        let l = tape.mae(p, &y).unwrap();
        let g = tape.backward(l).unwrap();
        for k in 0..6 {
            let expected = -(y[k] - yhat[k]).signum() / 6.0;
            assert_eq!(g.get(p).unwrap().data()[k], expected);
        }
    }

    fn pair() -> FramePair {
        make_synthetic_pair(
            1,
            &SyntheticConfig {
                n_points: 32,
                max_t: 2.0,
                max_r: 30.0,
                ..SyntheticConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn swap_examples() {
        let mut p = pair();
        p.target = PoseDelta::new([1.0, -2.0, 0.5], [0.0; 3]);
        let s = swap_pair(p.clone());
        assert_eq!(s.target.t, [-1.0, 2.0, -0.5]);
        assert_eq!((s.p.clone(), s.q.clone()), (p.q.clone(), p.p.clone()));

        let p = pair();
        let back = swap_pair(swap_pair(p.clone()));
        assert_eq!((back.p.clone(), back.q.clone()), (p.p.clone(), p.q.clone()));
        for (a, b) in back.target.to_array().iter().zip(p.target.to_array()) {
            assert!((a - b).abs() < 1e-9);
        }
        let mut z = pair();
        z.target = PoseDelta::zero();
        assert!(swap_pair(z).target.to_array().iter().all(|v| *v == 0.0));

        // Forward accumulation of the target undone by the swapped target.
        let s = swap_pair(p.clone());
        let round = compose(
            &accumulate(&[p.target]).poses()[1],
            &delta_to_transform(&s.target),
        );
        let d = transform_to_delta(&round).unwrap();
        assert!(d.to_array().iter().all(|v| v.abs() < 1e-9));

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment_swap(p.clone(), &mut rng, 0.0), p);
        assert_eq!(augment_swap(p.clone(), &mut rng, 1.0).p, p.q);
    }

    #[test]
    fn batching_never_leaves_a_single_pair() {
        let order: Vec<usize> = (0..17).collect();
        let b = batches(&order, 8);
        assert_eq!(b.iter().map(|c| c.len()).collect::<Vec<_>>(), vec![8, 9]);
        assert_eq!(b.concat(), order);
        assert_eq!(batches(&order[..16], 8).len(), 2);
    }

    fn tiny_model() -> ModelConfig {
        let mut m = ModelConfig::reduced();
        m.sa1.n_fps = 16;
        m.sa2.n_fps = 8;
        m.sa3.n_fps = 4;
        m.mpn = MlpSpec(vec![16, 32]);
        m
    }

    fn dataset(n: usize) -> Vec<FramePair> {
        let cfg = SyntheticConfig {
            n_points: 48,
            max_t: 0.5,
            max_r: 2.0,
            ..SyntheticConfig::default()
        };
        (0..n as u64)
            .map(|s| make_synthetic_pair(s, &cfg).unwrap())
            .collect()
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let model = tiny_model();
        let out = train::<f64>(&dataset(4), None, &model, &cfg, None).unwrap();
        assert!(out.history.records.is_empty());
        assert_eq!(out.params, ModelParams::init(&model, cfg.seed));
    }

    #[test]
    fn training_is_reproducible_and_learns() {
        let cfg = TrainConfig {
            epochs: 40,
            batch_pairs: 4,
            lr_base: 3e-3,
            swap_probability: 0.5,
            cos_reg_weight: 0.1,
            checkpoint_every: 0,
            seed: 9,
            ..TrainConfig::default()
        };
        let model = tiny_model();
        let data = dataset(8);
        let test = dataset(2);
        let a = train::<f64>(&data, Some(&test), &model, &cfg, None).unwrap();
        let b = train::<f64>(&data, Some(&test), &model, &cfg, None).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.adam, b.adam);
        assert_eq!(a.history.records.len(), 40);
        assert!(a.history.records.iter().all(|r| r.test_loss.is_some()));
        let first = a.history.records[0].train_loss;
        let last = a.history.records.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
        assert!(a
            .history
            .to_csv()
            .starts_with("epoch,train_loss,test_loss,lr,seconds\n0,"));
    }

    #[test]
    fn checkpoints_are_written_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let sink = CheckpointSink {
            dir: dir.path().join("checkpoints"),
        };
        let cfg = TrainConfig {
            epochs: 4,
            batch_pairs: 2,
            checkpoint_every: 2,
            ..TrainConfig::default()
        };
        let model = tiny_model();
        let out = train::<f32>(&dataset(4), None, &model, &cfg, Some(&sink)).unwrap();
        for name in ["epoch_0002", "epoch_0004", "final"] {
            assert!(sink.path(name).exists(), "{name}");
        }
        let (p, a) = load_checkpoint::<f32>(&sink.path("final"), &model).unwrap();
        assert_eq!(p, out.params);
        assert_eq!(a.step, out.adam.step);
        assert!(load_checkpoint::<f64>(&sink.path("final"), &model).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut data = dataset(2);
        data[0].target = PoseDelta::new([f64::MAX, 0.0, 0.0], [0.0; 3]);
        data[1].target = PoseDelta::new([f64::MAX, 0.0, 0.0], [0.0; 3]);
        let cfg = TrainConfig {
            epochs: 1,
            batch_pairs: 2,
            swap_probability: 0.0,
            ..TrainConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let sink = CheckpointSink {
            dir: dir.path().into(),
        };
        let err = train::<f32>(&data, None, &tiny_model(), &cfg, Some(&sink)).unwrap_err();
        assert!(
            matches!(err, TrainError::DivergedLoss { epoch: 0, step: 0 }),
            "{err}"
        );
        assert!(sink.path("last_good").exists());
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig {
                lr_decay_epochs: vec![400, 300],
                ..TrainConfig::default()
            },
            TrainConfig {
                swap_probability: 1.5,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_pairs: 1,
                ..TrainConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
        assert!(train::<f32>(
            &dataset(1),
            None,
            &tiny_model(),
            &TrainConfig::default(),
            None
        )
        .is_err());
    }
}
