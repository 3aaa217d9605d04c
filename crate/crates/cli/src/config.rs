//! Flat `key = value` run configuration shared by `train` and `infer`.
//!
//! Lines starting with `#` and blank lines are skipped. Unknown keys are
//! rejected. Command-line flags are applied on top of the file through the
//! same [`RunConfig::set`] path.

use std::fmt::Write as _;
use std::path::PathBuf;

use lodo::autodiff::Precision;
use lodo::dataio::PoseFrame;
use lodo::neighbors::FpsStart;
use lodo::network::ModelConfig;
use lodo::training::{CosVariant, TrainConfig};

use crate::CliError;

pub const KEYS: &[&str] = &[
    "data",
    "preset",
    "precision",
    "frame",
    "train_sequences",
    "test_sequences",
    "full_cloud",
    "subsample",
    "fps_start",
    "deterministic",
    "epochs",
    "lr_base",
    "lr_decay_epochs",
    "lr_decay_factor",
    "batch_pairs",
    "swap_probability",
    "cos_reg_weight",
    "cos_variant",
    "seed",
    "checkpoint_every",
    "max_steps",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub preset: String,
    pub frame: PoseFrame,
    pub train_sequences: Vec<u32>,
    pub test_sequences: Vec<u32>,
    /// Feed whole scans to the network instead of a random subsample.
    pub full_cloud: bool,
    pub subsample: Option<usize>,
    pub fps_start: FpsStart,
    /// No effect: runs are always single-threaded.
    pub deterministic: bool,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            preset: "table1".into(),
            frame: PoseFrame::Camera,
            train_sequences: vec![0, 1, 2, 8, 9],
            test_sequences: vec![3, 4, 5, 6, 10],
            full_cloud: false,
            subsample: None,
            fps_start: FpsStart::First,
            deterministic: false,
            train: TrainConfig::default(),
        }
    }
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("invalid value '{value}' for '{key}': {why}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| bad(key, value, e))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_precision(value: &str) -> Result<Precision, String> {
    match value {
        "32" | "f32" => Ok(Precision::F32),
        "64" | "f64" => Ok(Precision::F64),
        other => Err(format!("unknown precision '{other}' (expected 32 or 64)")),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        let t = &mut self.train;
        match key {
            "data" => self.data = (!value.is_empty()).then(|| PathBuf::from(value)),
            "preset" => {
                ModelConfig::preset(value).map_err(|e| bad(key, value, e))?;
                self.preset = value.into();
            }
            "precision" => t.precision = parse_precision(value).map_err(|e| bad(key, value, e))?,
            "frame" => self.frame = value.parse().map_err(|e: String| bad(key, value, e))?,
            "train_sequences" => self.train_sequences = list(key, value)?,
            "test_sequences" => self.test_sequences = list(key, value)?,
            "full_cloud" => self.full_cloud = num(key, value)?,
            "subsample" => {
                self.subsample = match value {
                    "preset" => None,
                    v => Some(num(key, v)?),
                }
            }
            "fps_start" => {
                self.fps_start = match value {
                    "first" => FpsStart::First,
                    "canonical" => FpsStart::Canonical,
                    v => return Err(bad(key, v, "expected first or canonical")),
                }
            }
            "deterministic" => self.deterministic = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "lr_base" => t.lr_base = num(key, value)?,
            "lr_decay_epochs" => t.lr_decay_epochs = list(key, value)?,
            "lr_decay_factor" => t.lr_decay_factor = num(key, value)?,
            "batch_pairs" => t.batch_pairs = num(key, value)?,
            "swap_probability" => t.swap_probability = num(key, value)?,
            "cos_reg_weight" => t.cos_reg_weight = num(key, value)?,
            "cos_variant" => {
                t.cos_variant = value.parse().map_err(|e: String| bad(key, value, e))?
            }
            "seed" => t.seed = num(key, value)?,
            "checkpoint_every" => t.checkpoint_every = num(key, value)?,
            "max_steps" => {
                t.max_steps = match value {
                    "none" => None,
                    v => Some(num(key, v)?),
                }
            }
            other => return Err(CliError::Usage(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: expected key = value", n + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        let t = &self.train;
        match key {
            "data" => self
                .data
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            "preset" => self.preset.clone(),
            "precision" => match t.precision {
                Precision::F32 => "32".into(),
                Precision::F64 => "64".into(),
            },
            "frame" => match self.frame {
                PoseFrame::Camera => "camera".into(),
                PoseFrame::Lidar => "lidar".into(),
            },
            "train_sequences" => join(&self.train_sequences),
            "test_sequences" => join(&self.test_sequences),
            "full_cloud" => self.full_cloud.to_string(),
            "subsample" => self.subsample.map_or("preset".into(), |n| n.to_string()),
            "fps_start" => match self.fps_start {
                FpsStart::Canonical => "canonical".into(),
                _ => "first".into(),
            },
            "deterministic" => self.deterministic.to_string(),
            "epochs" => t.epochs.to_string(),
            "lr_base" => format!("{:e}", t.lr_base),
            "lr_decay_epochs" => join(&t.lr_decay_epochs),
            "lr_decay_factor" => format!("{:e}", t.lr_decay_factor),
            "batch_pairs" => t.batch_pairs.to_string(),
            "swap_probability" => t.swap_probability.to_string(),
            "cos_reg_weight" => t.cos_reg_weight.to_string(),
            "cos_variant" => match t.cos_variant {
                CosVariant::Full => "full".into(),
                CosVariant::Translation => "translation".into(),
            },
            "seed" => t.seed.to_string(),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            "max_steps" => t.max_steps.map_or("none".into(), |n| n.to_string()),
            other => unreachable!("key {other} missing from KEYS"),
        }
    }

    /// Every key with its resolved value, in a form [`RunConfig::apply_text`] reads back.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# resolved run configuration\n");
        for k in KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k));
        }
        out
    }

    pub fn model(&self) -> Result<ModelConfig, CliError> {
        let mut m = ModelConfig::preset(&self.preset)?;
        if let Some(n) = self.subsample {
            m.pre_subsample = Some(n);
        }
        if self.full_cloud {
            m.pre_subsample = None;
        }
        m.fps_start = self.fps_start;
        Ok(m)
    }
}
