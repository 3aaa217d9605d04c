//! `lodo`: plane removal, training, inference and KITTI-style evaluation.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use lodo::autodiff::checkpoint::{peek_precision, CheckpointError};
use lodo::autodiff::{Mode, Precision, Scalar};
use lodo::dataio::{
    write_poses, write_scan, CalibTr, DataError, KittiLayout, PoseFrame, SequencePairs,
    SyntheticConfig,
};
use lodo::evaluation::{accumulate, odometry_errors, subsequence_set, EvalError, DEFAULT_LENGTHS};
use lodo::geometry::{compose, invert, PoseDelta};
use lodo::network::{count_parameters, forward_batch, ModelConfig, NetworkError};
use lodo::pointcloud::{remove_dominant_plane, CloudError, RansacParams};
use lodo::training::{load_checkpoint, train, CheckpointSink, PairSource, TrainError};
use lodo::Trajectory;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("GradientCheckFailed: {0}")]
    GradientCheck(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("Io: {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(path, contents).map_err(io(path))
}

#[derive(Parser)]
#[command(
    name = "lodo",
    version,
    about = "Lightweight end-to-end LiDAR odometry"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the trainable parameter count of a preset.
    Params {
        #[arg(long, default_value = "table1")]
        preset: String,
    },
    /// Finite-difference check of every primitive and the reduced model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write synthetic sequences in the KITTI layout.
    Synth(SynthArgs),
    /// Remove the dominant plane from every scan of a sequence.
    Preprocess(PreprocessArgs),
    /// Train on KITTI-layout sequences.
    Train(TrainArgs),
    /// Predict per-pair motion and the accumulated trajectory of a sequence.
    Infer(InferArgs),
    /// Sub-sequence translation and rotation errors of a predicted trajectory.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    sequences: Vec<u32>,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    #[arg(long, default_value_t = 256)]
    points: usize,
    #[arg(long, default_value_t = 1.0)]
    max_t: f64,
    #[arg(long, default_value_t = 5.0)]
    max_r: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    sequence: u32,
    /// Root of the KITTI-layout tree receiving the reduced scans.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = RansacParams::default().threshold)]
    threshold: f64,
    #[arg(long, default_value_t = RansacParams::default().iterations)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Flags shared by `train` and `infer`; each overrides the config file key
/// of the same name.
#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_parser = ["camera", "lidar"])]
    frame: Option<String>,
    /// Skip the random pre-subsample and feed whole scans.
    #[arg(long)]
    full_cloud: bool,
    #[arg(long)]
    deterministic: bool,
    #[arg(long, value_parser = ["32", "64"])]
    precision: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_pairs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    train_sequences: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    test_sequences: Option<Vec<u32>>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long)]
    sequence: u32,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, required_unless_present = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Use ground-truth deltas in place of the network.
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value_t = 8)]
    batch_pairs: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Start-frame stride; 10 matches the common KITTI devkit setting.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, value_delimiter = ',')]
    lengths: Option<Vec<f64>>,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunFlags {
    fn resolve(&self, extra: &[(&str, String)]) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_text(&fs::read_to_string(path).map_err(io(path))?)?;
        }
        let mut set = |k: &str, v: String| cfg.set(k, &v);
        if let Some(v) = &self.data {
            set("data", v.display().to_string())?;
        }
        if let Some(v) = &self.preset {
            set("preset", v.clone())?;
        }
        if let Some(v) = &self.frame {
            set("frame", v.clone())?;
        }
        if self.full_cloud {
            set("full_cloud", "true".into())?;
        }
        if self.deterministic {
            set("deterministic", "true".into())?;
        }
        if let Some(v) = &self.precision {
            set("precision", v.clone())?;
        }
        if let Some(v) = self.seed {
            set("seed", v.to_string())?;
        }
        for (k, v) in extra {
            set(k, v.clone())?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            set(k.trim(), v.to_string())?;
        }
        Ok(cfg)
    }
}

fn data_root(cfg: &RunConfig) -> Result<KittiLayout, CliError> {
    cfg.data.clone().map(KittiLayout::new).ok_or_else(|| {
        CliError::Usage("no data root: pass --data or set 'data' in the config".into())
    })
}

fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let cfg = SyntheticConfig {
        n_points: a.points,
        max_t: a.max_t,
        max_r: a.max_r,
        noise_sigma: a.noise,
        ..SyntheticConfig::default()
    };
    let layout = KittiLayout::new(&a.out);
    for &seq in &a.sequences {
        let (scans, traj) =
            lodo::dataio::make_synthetic_sequence(a.seed + seq as u64, a.frames, &cfg)?;
        lodo::dataio::write_sequence(&layout, seq, &scans, &traj)?;
        println!("sequence {seq:02}: {} frames", scans.len());
    }
    Ok(())
}

fn preprocess(a: &PreprocessArgs) -> Result<(), CliError> {
    let input = KittiLayout::new(&a.data);
    let output = KittiLayout::new(&a.out);
    let files = input.scan_files(a.sequence)?;
    if files.is_empty() {
        return Err(DataError::MissingData(format!(
            "no scans in {}",
            input.velodyne_dir(a.sequence).display()
        ))
        .into());
    }
    let mut report = String::from("frame,points,removed,removal_fraction\n");
    println!("frame,points,removed,removal_fraction");
    for (frame, path) in files.iter().enumerate() {
        let cloud = lodo::dataio::load_scan_file(path)?;
        let params = RansacParams {
            threshold: a.threshold,
            iterations: a.iterations,
            seed: a.seed.wrapping_add(frame as u64),
        };
        let r = remove_dominant_plane(&cloud, &params)?;
        let line = format!(
            "{frame},{},{},{:.6}",
            cloud.len(),
            r.plane.inlier_count,
            r.removal_fraction()
        );
        println!("{line}");
        report.push_str(&line);
        report.push('\n');
        write_file(&output.scan_path(a.sequence, frame), write_scan(&r.cloud)?)?;
    }
    for (src, dst) in [
        (input.poses_path(a.sequence), output.poses_path(a.sequence)),
        (input.calib_path(a.sequence), output.calib_path(a.sequence)),
    ] {
        if src.exists() {
            write_file(&dst, fs::read(&src).map_err(io(&src))?)?;
        }
    }
    write_file(
        &output.sequence_dir(a.sequence).join("plane_removal.csv"),
        report,
    )
}

fn run_train(a: &TrainArgs) -> Result<(), CliError> {
    let mut extra = Vec::new();
    if let Some(v) = a.epochs {
        extra.push(("epochs", v.to_string()));
    }
    if let Some(v) = a.batch_pairs {
        extra.push(("batch_pairs", v.to_string()));
    }
    if let Some(v) = a.lr {
        extra.push(("lr_base", v.to_string()));
    }
    if let Some(v) = a.max_steps {
        extra.push(("max_steps", v.to_string()));
    }
    if let Some(v) = &a.train_sequences {
        extra.push(("train_sequences", join(v)));
    }
    if let Some(v) = &a.test_sequences {
        extra.push(("test_sequences", join(v)));
    }
    let cfg = a.run.resolve(&extra)?;
    let layout = data_root(&cfg)?;
    let model = cfg.model()?;
    write_file(&a.out.join("config.txt"), cfg.to_text())?;
    log::info!("resolved configuration:\n{}", cfg.to_text());
    let train_set = SequencePairs::open(layout.clone(), &cfg.train_sequences, cfg.frame)?;
    let test_set = SequencePairs::open(layout, &cfg.test_sequences, cfg.frame)?;
    let test: Option<&dyn PairSource> =
        (!test_set.is_empty()).then_some(&test_set as &dyn PairSource);
    let sink = CheckpointSink {
        dir: a.out.join("checkpoints"),
    };
    let history = match cfg.train.precision {
        Precision::F32 => train::<f32>(&train_set, test, &model, &cfg.train, Some(&sink))?.history,
        Precision::F64 => train::<f64>(&train_set, test, &model, &cfg.train, Some(&sink))?.history,
    };
    write_file(&a.out.join("history.csv"), history.to_csv())?;
    if let Some(last) = history.records.last() {
        println!(
            "epochs {} steps {} train_loss {:.6} test_loss {}",
            history.records.len(),
            last.steps,
            last.train_loss,
            last.test_loss.map_or("-".into(), |v| format!("{v:.6}"))
        );
    }
    Ok(())
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn predict<S: Scalar>(
    pairs: &SequencePairs,
    checkpoint: &Path,
    model: &ModelConfig,
    batch: usize,
) -> Result<Vec<PoseDelta>, CliError> {
    let (params, _) = load_checkpoint::<S>(checkpoint, model)?;
    let mut out = Vec::with_capacity(pairs.len());
    let idx: Vec<usize> = (0..pairs.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let loaded = chunk
            .iter()
            .map(|&i| pairs.load(i))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<_> = loaded.iter().map(|p| (&p.p, &p.q)).collect();
        out.extend(forward_batch(&refs, &params, model, Mode::Infer)?.predictions());
    }
    Ok(out)
}

fn infer(a: &InferArgs) -> Result<(), CliError> {
    let cfg = a.run.resolve(&[])?;
    let layout = data_root(&cfg)?;
    let pairs = SequencePairs::open(layout.clone(), &[a.sequence], cfg.frame)?;
    let deltas = match (&a.checkpoint, a.oracle) {
        (_, true) => layout.ground_truth_deltas(a.sequence, cfg.frame)?,
        (Some(ck), false) => {
            let model = cfg.model()?;
            let bytes = fs::read(ck).map_err(io(ck))?;
            match peek_precision(&bytes)? {
                Some(Precision::F64) => predict::<f64>(&pairs, ck, &model, a.batch_pairs)?,
                _ => predict::<f32>(&pairs, ck, &model, a.batch_pairs)?,
            }
        }
        (None, false) => {
            return Err(CliError::Usage(
                "infer needs --checkpoint or --oracle".into(),
            ))
        }
    };
    let lidar = accumulate(&deltas);
    let traj = match cfg.frame {
        PoseFrame::Lidar => lidar,
        PoseFrame::Camera => to_camera(&lidar, &layout.load_calib(a.sequence)?),
    };
    let dir = a.out.join("predictions");
    let mut text = String::new();
    for d in &deltas {
        let v: Vec<String> = d.to_array().iter().map(|x| format!("{x:e}")).collect();
        let _ = writeln!(text, "{}", v.join(" "));
    }
    write_file(&dir.join(format!("{:02}_deltas.txt", a.sequence)), text)?;
    let path = dir.join(format!("{:02}.txt", a.sequence));
    write_file(&path, write_poses(&traj))?;
    println!("{}", path.display());
    Ok(())
}

/// Re-expresses a LiDAR-frame trajectory in the camera frame, `Tr · P · Tr⁻¹`.
fn to_camera(lidar: &Trajectory, calib: &CalibTr) -> Trajectory {
    let inv = invert(&calib.tr);
    let poses = lidar
        .poses()
        .iter()
        .map(|p| compose(&compose(&calib.tr, p), &inv))
        .collect();
    Trajectory::new(poses).expect("non-empty trajectory")
}

fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let read = |p: &Path| -> Result<Trajectory, CliError> {
        Ok(lodo::dataio::read_poses(
            &fs::read_to_string(p).map_err(io(p))?,
        )?)
    };
    let gt = read(&a.gt)?;
    let pred = read(&a.pred)?;
    let lengths = a
        .lengths
        .clone()
        .unwrap_or_else(|| DEFAULT_LENGTHS.to_vec());
    let set = subsequence_set(&gt, &lengths, a.stride)?;
    let errors = odometry_errors(&gt, &pred, &set)?;
    let csv = errors.to_csv();
    print!("{csv}");
    if let Some(out) = &a.out {
        write_file(out, csv)?;
    }
    Ok(())
}

fn gradcheck(seed: u64) -> Result<(), CliError> {
    let outcomes = lodo::verify::gradient_suite(seed).map_err(NetworkError::from)?;
    let mut failed = Vec::new();
    println!("check,coordinates,max_rel_error,tolerance,result");
    for c in &outcomes {
        let ok = c.passed();
        println!(
            "{},{},{:e},{:e},{}",
            c.name,
            c.coordinates,
            c.max_rel_error,
            c.tolerance,
            if ok { "pass" } else { "fail" }
        );
        if !ok {
            failed.push(c.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradientCheck(failed.join(", ")))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Params { preset } => {
            let model = ModelConfig::preset(preset).map_err(|e| CliError::Usage(e.to_string()))?;
            println!("{}", count_parameters(&model));
            Ok(())
        }
        Command::Gradcheck { seed } => gradcheck(*seed),
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => run_train(a),
        Command::Infer(a) => infer(a),
        Command::Evaluate(a) => evaluate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
