//! Command-line driver behind the `spectrakan` binary.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 missing file or
//! bad usage, 3 malformed configuration, 4 incompatible shapes, 5 anything else.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::{ConfigError, DataKind, RunConfig};
use crate::data::{gen_diffusion_reaction, gen_shallow_water, split_dataset, DataError, TrajectorySet};
use crate::metrics::{evaluate, MetricError, MetricReport};
use crate::model::{ModelError, SpectraKan};
use crate::plot;
use crate::skds::SkdsError;
use crate::tensor::TensorError;
use crate::train::{one_step_pairs, rollout_set, train, Persistence, TrainError};
use crate::verify::{verify_edge_lipschitz, verify_modulation_lipschitz, verify_quadrature, VerifyError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("check failed: {0}")]
    Check(String),
    #[error("file not found: {0}")]
    Missing(PathBuf),
    #[error("{0}")]
    Usage(String),
    #[error("malformed configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Missing(_) | CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Shape(_) => 4,
            CliError::Other(_) => 5,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { path, .. } => CliError::Missing(path),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<SkdsError> for CliError {
    fn from(e: SkdsError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Parameter(m) => CliError::Config(m),
            DataError::EmptySplit { .. } => CliError::Config(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => CliError::Config(m),
            ModelError::Tensor(TensorError::ShapeMismatch { .. }) => CliError::Shape(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::TooFewFrames { .. } | TrainError::Incompatible { .. } => CliError::Shape(e.to_string()),
            TrainError::NonFinite { .. } => CliError::Other(e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Shape { .. } => CliError::Shape(e.to_string()),
            MetricError::Empty => CliError::Other(e.to_string()),
        }
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::Model(m) => m.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "spectrakan", version, about = "Neural operator data generation, training, evaluation and checks")]
pub struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the configuration.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Configuration override, repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate trajectories and write train/valid/test splits.
    GenData,
    /// Train a model on `train.skds` (validated on `valid.skds` when present).
    Train {
        /// Directory holding the split files; defaults to the output directory.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Compute metrics for a checkpoint on a dataset, or for a prediction file against a reference.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "PATH", requires = "truth")]
        pred: Option<PathBuf>,
        #[arg(long, value_name = "PATH", requires = "pred")]
        truth: Option<PathBuf>,
    },
    /// Autoregressive rollout from the first frames of every sample.
    Rollout {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// Steps to predict; defaults to `eval.horizon`.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run the Lipschitz and quadrature checks.
    Verify {
        /// Checkpoint to check; a freshly initialized model otherwise.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Write heatmaps and error curves as PNG with their CSV data.
    ExportPlots {
        #[arg(long, value_name = "PATH")]
        truth: PathBuf,
        #[arg(long, value_name = "PATH")]
        pred: Option<PathBuf>,
        /// Loss CSV written by `train`.
        #[arg(long, value_name = "PATH")]
        loss: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long, default_value_t = 0)]
        channel: usize,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    fs::create_dir_all(&cli.out)?;
    fs::write(cli.out.join("resolved_config.ini"), cfg.to_text())?;
    pool.install(|| match &cli.command {
        Command::GenData => gen_data(&cfg, &cli.out),
        Command::Train { data } => train_cmd(&cfg, data.as_deref().unwrap_or(&cli.out), &cli.out),
        Command::Eval {
            checkpoint,
            data,
            pred,
            truth,
        } => match (pred, truth) {
            (Some(p), Some(t)) => eval_files(p, t, &cli.out),
            _ => eval_model(&cfg, &cli.out, checkpoint.as_deref(), data.as_deref()),
        },
        Command::Rollout { checkpoint, data, steps } => rollout_cmd(&cfg, &cli.out, checkpoint.as_deref(), data.as_deref(), *steps),
        Command::Verify { checkpoint } => verify_cmd(&cfg, &cli.out, checkpoint.as_deref()),
        Command::ExportPlots {
            truth,
            pred,
            loss,
            sample,
            channel,
        } => export_plots(&cli.out, truth, pred.as_deref(), loss.as_deref(), *sample, *channel),
    })
}

/// Built-in defaults, then the config file, then `--seed`, then `--set`.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Missing(path.clone()));
            }
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    cfg.model.validate()?;
    Ok(cfg)
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(path.to_path_buf()))
    }
}

fn load_set(path: &Path) -> Result<TrajectorySet, CliError> {
    require(path)?;
    Ok(TrajectorySet::load(path)?)
}

fn load_model(path: &Path) -> Result<SpectraKan, CliError> {
    require(path)?;
    Ok(SpectraKan::load(path)?)
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let set = match cfg.data.kind {
        DataKind::DiffusionReaction => gen_diffusion_reaction(&cfg.data.diffusion_reaction(cfg.data_seed()))?,
        DataKind::ShallowWater => gen_shallow_water(&cfg.data.shallow_water(cfg.data_seed()))?,
    };
    let (tr, va, te) = split_dataset(&set, cfg.data.split, cfg.split_seed())?;
    for (name, part) in [("train", tr), ("valid", va), ("test", te)] {
        if part.samples() > 0 {
            part.save(&out.join(format!("{name}.skds")), cfg.data.dtype)?;
        }
        println!("{name}: {:?}", part.shape());
    }
    Ok(())
}

fn check_channels(cfg_channels: usize, data: &TrajectorySet) -> Result<(), CliError> {
    if data.channels() != cfg_channels {
        return Err(CliError::Shape(format!(
            "dataset has {} channels but the model expects {cfg_channels} (set model.channels)",
            data.channels()
        )));
    }
    Ok(())
}

fn check_compatible(model: &SpectraKan, data: &TrajectorySet) -> Result<(), CliError> {
    check_channels(model.config.channels, data)?;
    let (x, y) = data.grid();
    model.trunk.check_grid(x, y).map_err(|e| CliError::Shape(e.to_string()))?;
    if data.frames() <= model.config.history {
        return Err(CliError::Shape(format!(
            "{} frames leave nothing to predict with history {}",
            data.frames(),
            model.config.history
        )));
    }
    Ok(())
}

fn train_cmd(cfg: &RunConfig, data_dir: &Path, out: &Path) -> Result<(), CliError> {
    let train_set = load_set(&data_dir.join("train.skds"))?;
    check_channels(cfg.model.channels, &train_set)?;
    let valid_path = data_dir.join("valid.skds");
    let valid = if valid_path.exists() { Some(TrajectorySet::load(&valid_path)?) } else { None };
    let mut model = SpectraKan::new(cfg.model.clone(), cfg.model_seed())?;
    model.fit_normalization(&train_set);
    let outcome = match train(model, &train_set, valid.as_ref(), &cfg.train_config()) {
        Ok(o) => o,
        Err(TrainError::NonFinite { epoch, last_good }) => {
            last_good.save(&out.join("model.skds"))?;
            return Err(CliError::Other(format!(
                "non-finite loss at epoch {epoch}; last finite parameters written to model.skds"
            )));
        }
        Err(e) => return Err(e.into()),
    };
    let mut csv = String::from("epoch,learning_rate,train_loss,valid_loss\n");
    for r in &outcome.curve {
        let v = r.valid_loss.map_or(String::new(), |v| format!("{v:.12e}"));
        csv.push_str(&format!("{},{:.6e},{:.12e},{v}\n", r.epoch, r.learning_rate, r.train_loss));
    }
    fs::write(out.join("loss.csv"), csv)?;
    outcome.model.save(&out.join("model.skds"))?;
    if let Some(last) = outcome.curve.last() {
        println!(
            "trained {} epochs{}; final train loss {:.6e}",
            outcome.curve.len(),
            if outcome.stopped_early { " (early stop)" } else { "" },
            last.train_loss
        );
    } else {
        println!("0 epochs: checkpoint holds the initialization");
    }
    Ok(())
}

fn write_report(out: &Path, stem: &str, report: &MetricReport) -> Result<(), CliError> {
    fs::write(out.join(format!("{stem}.csv")), report.to_csv())?;
    fs::write(out.join(format!("{stem}.txt")), report.summary())?;
    Ok(())
}

fn grid_spacing(set: &TrajectorySet) -> f64 {
    let (x, y) = set.grid();
    1.0 / x.max(y) as f64
}

fn eval_files(pred: &Path, truth: &Path, out: &Path) -> Result<(), CliError> {
    let (p, t) = (load_set(pred)?, load_set(truth)?);
    let report = evaluate(&p, &t, grid_spacing(&t))?;
    write_report(out, "metrics", &report)?;
    print!("{}", report.summary());
    Ok(())
}

fn eval_model(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>, data: Option<&Path>) -> Result<(), CliError> {
    let model = load_model(&checkpoint.map_or_else(|| out.join("model.skds"), Path::to_path_buf))?;
    let set = load_set(&data.map_or_else(|| out.join("test.skds"), Path::to_path_buf))?;
    check_compatible(&model, &set)?;
    let dx = grid_spacing(&set);
    let (pred, truth) = one_step_pairs(&model, &set)?;
    let one_step = evaluate(&pred, &truth, dx)?;
    let persistence = Persistence {
        history: model.config.history,
        channels: model.config.channels,
    };
    let (base, _) = one_step_pairs(&persistence, &set)?;
    let baseline = evaluate(&base, &truth, dx)?;
    write_report(out, "metrics_one_step", &one_step)?;
    write_report(out, "metrics_persistence", &baseline)?;
    let roll = rollout_set(&model, &set, cfg.eval.horizon)?;
    for (s, why) in &roll.truncated {
        println!("sample {s}: rollout truncated ({why})");
    }
    if roll.prediction.frames() > 0 {
        let report = evaluate(&roll.prediction, &roll.truth, dx)?;
        write_report(out, "metrics_rollout", &report)?;
        let mut csv = String::from("step,rms_error\n");
        for (i, v) in report.rms_by_step().iter().enumerate() {
            csv.push_str(&format!("{},{v:.12e}\n", i + 1));
        }
        fs::write(out.join("rollout_error.csv"), csv)?;
    }
    println!(
        "one-step nrmse {:.6e} (persistence {:.6e})",
        one_step.aggregate.nrmse, baseline.aggregate.nrmse
    );
    Ok(())
}

fn rollout_cmd(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>, data: Option<&Path>, steps: Option<usize>) -> Result<(), CliError> {
    let model = load_model(&checkpoint.map_or_else(|| out.join("model.skds"), Path::to_path_buf))?;
    let set = load_set(&data.map_or_else(|| out.join("test.skds"), Path::to_path_buf))?;
    check_compatible(&model, &set)?;
    let roll = rollout_set(&model, &set, steps.unwrap_or(cfg.eval.horizon))?;
    for (s, why) in &roll.truncated {
        println!("sample {s}: rollout truncated ({why})");
    }
    let mut pred = roll.prediction;
    pred.meta.insert("warmup_frames".into(), model.config.history.to_string());
    pred.save(&out.join("rollout.skds"), cfg.data.dtype)?;
    roll.truth.save(&out.join("rollout_truth.skds"), cfg.data.dtype)?;
    println!("rollout: {:?}", pred.shape());
    Ok(())
}

fn verify_cmd(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let model = match checkpoint {
        Some(p) => load_model(p)?,
        None => SpectraKan::new(cfg.model.clone(), cfg.model_seed())?,
    };
    let settings = cfg.verify_settings();
    let reports = [
        ("verify_edge_lipschitz", verify_edge_lipschitz(settings.lemma_trials, settings.lemma_samples, settings.seed)?),
        ("verify_modulation", verify_modulation_lipschitz(&model, &settings)?),
        ("verify_quadrature", verify_quadrature(settings.quadrature_reference, settings.seed)?),
    ];
    let mut failed = Vec::new();
    for (stem, report) in &reports {
        fs::write(out.join(format!("{stem}.csv")), report.to_csv())?;
        fs::write(out.join(format!("{stem}.txt")), report.to_table())?;
        print!("{}", report.to_table());
        if !report.passed() || !report.audit() {
            failed.push(*stem);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failed.join(", ")))
    }
}

fn matrix_csv(values: &[f64], cols: usize) -> String {
    values
        .chunks(cols)
        .map(|row| row.iter().map(|v| format!("{v:.9e}")).collect::<Vec<_>>().join(",") + "\n")
        .collect()
}

fn channel_slice(set: &TrajectorySet, sample: usize, channel: usize) -> (Vec<f64>, usize, usize) {
    let [_, t, x, y, c] = set.shape();
    let values: Vec<f64> = (0..t)
        .flat_map(|ti| set.frame(sample, ti).iter().skip(channel).step_by(c).copied().collect::<Vec<_>>())
        .collect();
    if y == 1 {
        // space-time picture: one row per frame
        (values, t, x)
    } else {
        let last = values[(t - 1) * x * y..].to_vec();
        (last, x, y)
    }
}

fn export_plots(out: &Path, truth: &Path, pred: Option<&Path>, loss: Option<&Path>, sample: usize, channel: usize) -> Result<(), CliError> {
    let t = load_set(truth)?;
    if sample >= t.samples() || channel >= t.channels() {
        return Err(CliError::Usage(format!(
            "sample {sample} / channel {channel} out of range for {:?}",
            t.shape()
        )));
    }
    let mut fields = vec![("truth", channel_slice(&t, sample, channel))];
    if let Some(p) = pred {
        let p = load_set(p)?;
        if p.shape() != t.shape() {
            return Err(CliError::Shape(format!("prediction {:?} vs reference {:?}", p.shape(), t.shape())));
        }
        let (pv, rows, cols) = channel_slice(&p, sample, channel);
        let err: Vec<f64> = pv.iter().zip(&fields[0].1 .0).map(|(a, b)| (a - b).abs()).collect();
        fields.push(("pred", (pv, rows, cols)));
        fields.push(("abs_error", (err, rows, cols)));
        let report = evaluate(&p, &t, grid_spacing(&t))?;
        let curve = report.rms_by_step();
        let mut csv = String::from("step,rms_error\n");
        for (i, v) in curve.iter().enumerate() {
            csv.push_str(&format!("{},{v:.12e}\n", i + 1));
        }
        fs::write(out.join("error_curve.csv"), csv)?;
        plot::save_png(&plot::line_plot(&[&curve], 480, 320, true), &out.join("error_curve.png"))
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    for (name, (values, rows, cols)) in &fields {
        let cell = (512 / rows.max(cols)).clamp(1, 16);
        fs::write(out.join(format!("{name}_field.csv")), matrix_csv(values, *cols))?;
        plot::save_png(&plot::heatmap(values, *rows, *cols, cell), &out.join(format!("{name}_field.png")))
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    if let Some(l) = loss {
        require(l)?;
        let text = fs::read_to_string(l)?;
        let mut train_curve = Vec::new();
        let mut valid_curve = Vec::new();
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            let parse = |i: usize| cols.get(i).and_then(|v| v.parse::<f64>().ok());
            train_curve.push(parse(2).unwrap_or(f64::NAN));
            valid_curve.push(parse(3).unwrap_or(f64::NAN));
        }
        plot::save_png(&plot::line_plot(&[&train_curve, &valid_curve], 480, 320, true), &out.join("loss_curve.png"))
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    Ok(())
}
