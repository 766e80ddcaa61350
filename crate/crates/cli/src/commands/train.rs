//! `layerflow train`: fit the decomposition model on a stored dataset.
//!
//! Writes the checkpoint to `--out` and, next to it, `loss.csv` (one
//! `step,loss` row per step; byte-stable across reruns with equal seed and
//! thread count), `timing.csv` (wall-clock per step; never byte-stable), and
//! `effective_config.toml`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use serde::Serialize;

use layerflow_imaging::load_dataset;
use layerflow_model::{
    init_params, prepare_sample, ModelConfig, PreparedSample, TrainConfig, Trainer,
};
use layerflow_tensor::{read_checkpoint_info, Element};

use crate::config::{
    build_model_config, build_train_config, echo_effective, load_file_config, TrainSection,
};
use crate::error::{CliError, Result};

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory (as written by gen-data)
    #[arg(long)]
    pub data: PathBuf,

    /// Checkpoint output path; logs are written into its directory
    #[arg(long)]
    pub out: PathBuf,

    /// TOML config file with [model]/[train] sections
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Total training steps (flag overrides config file)
    #[arg(long)]
    pub steps: Option<u64>,

    /// Adam learning rate
    #[arg(long)]
    pub lr: Option<f64>,

    /// Samples per optimization step
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,

    /// Training seed (also seeds weight initialization)
    #[arg(long)]
    pub seed: Option<u64>,

    /// Worker threads for the batch gradient passes
    #[arg(long)]
    pub threads: Option<usize>,

    /// Probability of dropping the text condition per sample
    #[arg(long = "text-drop")]
    pub text_drop: Option<f64>,

    /// Loss weight on the reconstructed-composite tokens (0 disables the
    /// auxiliary composite target)
    #[arg(long = "weight-composite")]
    pub weight_composite: Option<f64>,

    /// Loss weight on background and foreground tokens
    #[arg(long = "weight-layers")]
    pub weight_layers: Option<f64>,

    /// Floating-point width for weights and training
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    pub precision: PrecisionArg,

    /// Continue from the checkpoint at --out; hyperparameters then come from
    /// the checkpoint, while --steps sets the new total and --threads the
    /// worker count
    #[arg(long)]
    pub resume: bool,

    /// Progress line cadence on stderr
    #[arg(long = "log-every", default_value_t = 100)]
    pub log_every: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Serialize)]
struct EffectiveTrain<'a> {
    precision: &'a str,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let file = load_file_config(args.config.as_deref())?;
    let mut train_section = file.train;
    train_section.overlay(TrainSection {
        steps: args.steps,
        batch_size: args.batch_size,
        lr: args.lr,
        seed: args.seed,
        text_drop: args.text_drop,
        weight_layers: args.weight_layers,
        weight_composite: args.weight_composite,
        threads: args.threads,
    });
    let model_config = build_model_config(&file.model)?;
    let train_config = build_train_config(&train_section);
    train_config.validate()?;
    match args.precision {
        PrecisionArg::F32 => run_typed::<f32>(args, model_config, train_config),
        PrecisionArg::F64 => run_typed::<f64>(args, model_config, train_config),
    }
}

fn out_dir(out: &Path) -> PathBuf {
    match out.parent() {
        Some(p) if p.as_os_str().is_empty() => PathBuf::from("."),
        Some(p) => p.to_path_buf(),
        None => PathBuf::from("."),
    }
}

fn run_typed<E: Element>(
    args: &TrainArgs,
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> Result<()> {
    let target_steps = train_config.steps;
    let mut trainer: Trainer<E> = if args.resume {
        if !args.out.exists() {
            return Err(CliError::Validation(format!(
                "--resume given but {} does not exist",
                args.out.display()
            )));
        }
        let (dtype, _) = read_checkpoint_info(&args.out)?;
        if dtype != E::DTYPE {
            return Err(CliError::Validation(format!(
                "checkpoint is {dtype} but --precision asked for {}",
                E::DTYPE
            )));
        }
        let mut trainer = Trainer::resume(&args.out)?;
        trainer.train.steps = target_steps;
        trainer.train.threads = train_config.threads;
        trainer
    } else {
        let params = init_params::<E>(&model_config, train_config.seed)?;
        Trainer::new(params, train_config)?
    };

    if trainer.completed() > target_steps {
        return Err(CliError::Validation(format!(
            "checkpoint already at step {} past the requested total {target_steps}",
            trainer.completed()
        )));
    }

    let dir = out_dir(&args.out);
    fs::create_dir_all(&dir)?;
    echo_effective(
        &EffectiveTrain {
            precision: E::DTYPE.name(),
            model: &trainer.params.config,
            train: &trainer.train,
        },
        Some(&dir),
    )?;

    let dataset = load_dataset(&args.data)?;
    if dataset.is_empty() {
        return Err(CliError::Validation(format!(
            "dataset {} lists no stacks",
            args.data.display()
        )));
    }
    let prepared: Vec<PreparedSample<E>> = dataset
        .iter()
        .map(|stack| prepare_sample(stack, &trainer.params.config))
        .collect::<layerflow_model::Result<_>>()?;

    // Fresh runs truncate the logs; resumed runs append so that the
    // concatenation matches an uninterrupted run's trace byte for byte.
    let resuming = trainer.completed() > 0;
    let mut loss_log = open_log(&dir.join("loss.csv"), "step,loss\n", resuming)?;
    let mut timing_log = open_log(&dir.join("timing.csv"), "step,wall_ms\n", resuming)?;

    let mut last_loss = f64::NAN;
    for step in trainer.completed() + 1..=target_steps {
        let started = Instant::now();
        let loss = trainer.step(&prepared)?;
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        last_loss = loss;
        writeln!(loss_log, "{step},{loss}")?;
        writeln!(timing_log, "{step},{wall_ms:.3}")?;
        if step % args.log_every == 0 || step == target_steps {
            eprintln!("step {step}/{target_steps}: loss {loss:.6}");
        }
    }
    loss_log.flush()?;
    timing_log.flush()?;

    trainer.save(&args.out)?;
    if last_loss.is_nan() {
        println!("no steps to run; checkpoint rewritten at {}", args.out.display());
    } else {
        println!("final loss: {last_loss}");
        println!("checkpoint: {}", args.out.display());
    }
    Ok(())
}

fn open_log(path: &Path, header: &str, append: bool) -> Result<std::io::BufWriter<fs::File>> {
    let mut options = fs::OpenOptions::new();
    if append && path.exists() {
        options.append(true);
    } else {
        options.write(true).create(true).truncate(true);
    }
    let mut file = options.open(path).map(std::io::BufWriter::new)?;
    if !(append && is_nonempty(path)) {
        file.write_all(header.as_bytes())?;
    }
    Ok(file)
}

fn is_nonempty(path: &Path) -> bool {
    fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false)
}
