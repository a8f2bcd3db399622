//! `d2s`: dataset generation, training, evaluation, profiling and gradient
//! checks from the command line.
//!
//! Exit status: 0 on success, 1 on runtime failure, 2 on invalid usage.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use d2s_core::data::{make_dataset, DatasetManifest, Split};
use d2s_core::gradcheck::{run_suite, Fault};
use d2s_core::model::build;
use d2s_core::profiler::{compare_models, count_macs};
use d2s_core::train::{evaluate, train, TrainConfig};
use d2s_core::{ModelConfig, ModelGraph, ModelKind, Shape};

use config::ConfigFile;

#[derive(Parser)]
#[command(name = "d2s", version, about = "Decoder-free road segmentation toolkit")]
struct Cli {
    /// Config file with `key value` lines; keys are long flag names.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic road dataset.
    GenData(GenDataArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Pixel IoU of a checkpoint on one split.
    Eval(EvalArgs),
    /// Per-layer multiply-accumulate counts.
    Profile(ProfileArgs),
    /// Finite-difference check of every backward pass.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    val: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// vgg_d2s, resnet_d2s or segnet.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// History file; defaults to the checkpoint path with `.history` appended.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    fg_weight: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// train or val.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Require the checkpoint to hold this architecture.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    model: Option<String>,
    /// Input as CxHxW, e.g. 3x64x64.
    #[arg(long)]
    input: Option<String>,
    /// Second model for a side-by-side ratio report.
    #[arg(long)]
    compare: Option<String>,
    /// Print `layer …` / `total …` lines instead of the table.
    #[arg(long)]
    lines: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Use a deliberately broken conv backward (suite sensitivity check).
    #[arg(long, hide = true)]
    inject_fault: bool,
}

/// Failure classes that map to distinct exit codes.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<d2s_core::Error> for Failure {
    fn from(e: d2s_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn config(path: Option<&Path>, allowed: &[&str]) -> Result<ConfigFile, Failure> {
    match path {
        Some(p) => ConfigFile::load(p, allowed).map_err(usage),
        None => Ok(ConfigFile::default()),
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, Failure> {
    value.ok_or_else(|| usage(anyhow!("missing --{flag} (flag or config key)")))
}

fn parse_model(name: &str) -> Result<ModelKind, Failure> {
    name.parse().map_err(usage)
}

fn gen_data(a: GenDataArgs, cfg: &ConfigFile) -> CmdResult {
    let out: PathBuf = required(cfg.pick("out", a.out).map_err(usage)?, "out")?;
    let n_train = cfg.pick("train", a.train).map_err(usage)?.unwrap_or(500);
    let n_val = cfg.pick("val", a.val).map_err(usage)?.unwrap_or(100);
    let size = cfg.pick("size", a.size).map_err(usage)?.unwrap_or(64);
    let seed = cfg.pick("seed", a.seed).map_err(usage)?.unwrap_or(0);
    if size < 32 || size % 8 != 0 {
        return Err(usage(anyhow!("--size {size} must be at least 32 and divisible by 8")));
    }
    let m = make_dataset(n_train, n_val, size, seed, &out)
        .with_context(|| format!("generating dataset in {}", out.display()))?;
    println!("manifest {}", out.join(d2s_core::data::MANIFEST_FILE).display());
    println!("train {}", m.train.len());
    println!("val {}", m.val.len());
    Ok(())
}

fn train_cmd(a: TrainArgs, cfg: &ConfigFile) -> CmdResult {
    let model = parse_model(&required(cfg.pick("model", a.model).map_err(usage)?, "model")?)?;
    let mut tc = TrainConfig::new(model);
    tc.data = required(cfg.pick("data", a.data).map_err(usage)?, "data")?;
    let ckpt: PathBuf = required(cfg.pick("ckpt", a.ckpt).map_err(usage)?, "ckpt")?;
    let history = cfg.pick("history", a.history).map_err(usage)?.unwrap_or_else(|| {
        let mut s = ckpt.clone().into_os_string();
        s.push(".history");
        s.into()
    });
    tc.checkpoint = Some(ckpt.clone());
    tc.history = Some(history.clone());
    macro_rules! set {
        ($field:expr, $key:literal, $flag:expr) => {
            if let Some(v) = cfg.pick($key, $flag).map_err(usage)? {
                $field = v;
            }
        };
    }
    set!(tc.epochs, "epochs", a.epochs);
    set!(tc.seed, "seed", a.seed);
    set!(tc.base_lr, "lr", a.lr);
    set!(tc.batch_size, "batch", a.batch);
    set!(tc.dropout, "dropout", a.dropout);
    set!(tc.warmup_epochs, "warmup", a.warmup);
    set!(tc.patience, "patience", a.patience);
    set!(tc.class_weights[1], "fg_weight", a.fg_weight);
    tc.validate().map_err(usage)?;
    let out = train(&tc, |r| println!("{}", r.line())).context("training failed")?;
    println!("best_epoch {} best_iou {:.6}", out.best_epoch, out.best_iou);
    println!("checkpoint {}", ckpt.display());
    println!("history {}", history.display());
    Ok(())
}

fn eval_cmd(a: EvalArgs, cfg: &ConfigFile) -> CmdResult {
    let data: PathBuf = required(cfg.pick("data", a.data).map_err(usage)?, "data")?;
    let ckpt: PathBuf = required(cfg.pick("ckpt", a.ckpt).map_err(usage)?, "ckpt")?;
    let split: Split = cfg
        .pick::<String>("split", a.split)
        .map_err(usage)?
        .unwrap_or_else(|| "val".into())
        .parse()
        .map_err(usage)?;
    let kind = cfg
        .pick::<String>("model", a.model)
        .map_err(usage)?
        .map(|m| parse_model(&m))
        .transpose()?;
    let manifest = DatasetManifest::load(&data)?;
    let report = evaluate(&ckpt, &manifest, split, kind)?;
    print!("{}", report.to_lines());
    Ok(())
}

fn parse_input(s: &str) -> Result<Shape, Failure> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|d| d.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(anyhow!("--input {s:?} is not CxHxW")))?;
    match dims[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok(Shape([1, c, h, w])),
        _ => Err(usage(anyhow!("--input {s:?} is not CxHxW with positive dims"))),
    }
}

fn model_for(kind: ModelKind, input: Shape) -> Result<ModelGraph, Failure> {
    let m: ModelGraph = build(&ModelConfig::new(kind))?;
    let r = m.downsample_factor();
    if input.c() != 3 || !input.h().is_multiple_of(r) || !input.w().is_multiple_of(r) {
        return Err(usage(anyhow!(
            "{kind} expects 3 input channels and spatial dims divisible by {r}, got {}x{}x{}",
            input.c(),
            input.h(),
            input.w()
        )));
    }
    Ok(m)
}

fn profile_cmd(a: ProfileArgs, cfg: &ConfigFile) -> CmdResult {
    let kind = parse_model(&required(cfg.pick("model", a.model).map_err(usage)?, "model")?)?;
    let input = parse_input(
        &cfg.pick("input", a.input)
            .map_err(usage)?
            .unwrap_or_else(|| "3x64x64".into()),
    )?;
    let other = cfg
        .pick::<String>("compare", a.compare)
        .map_err(usage)?
        .map(|m| parse_model(&m))
        .transpose()?;
    let model = model_for(kind, input)?;
    let report = count_macs(&model, input)?;
    if a.lines {
        print!("{}", report.to_lines());
    } else {
        print!("{}", report.to_table());
    }
    if let Some(other) = other {
        let b = model_for(other, input)?;
        println!();
        print!("{}", compare_models(&model, &b, input)?.to_lines());
    }
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs, cfg: &ConfigFile) -> CmdResult {
    let seed = cfg.pick("seed", a.seed).map_err(usage)?.unwrap_or(0);
    let fault = if a.inject_fault {
        Fault::FlippedConvWeightGrad
    } else {
        Fault::None
    };
    let report = run_suite(seed, fault)?;
    print!("{}", report.to_lines());
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow!(
            "gradient check failed: max relative error {:.3e}",
            report.max_rel_err()
        )))
    }
}

fn run(cli: Cli) -> CmdResult {
    let path = cli.config.as_deref();
    match cli.command {
        Command::GenData(a) => gen_data(a, &config(path, &["out", "train", "val", "size", "seed"])?),
        Command::Train(a) => train_cmd(
            a,
            &config(
                path,
                &[
                    "data",
                    "model",
                    "epochs",
                    "seed",
                    "ckpt",
                    "history",
                    "lr",
                    "batch",
                    "dropout",
                    "warmup",
                    "patience",
                    "fg_weight",
                ],
            )?,
        ),
        Command::Eval(a) => eval_cmd(a, &config(path, &["data", "split", "ckpt", "model"])?),
        Command::Profile(a) => profile_cmd(a, &config(path, &["model", "input", "compare"])?),
        Command::Gradcheck(a) => gradcheck_cmd(a, &config(path, &["seed"])?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
