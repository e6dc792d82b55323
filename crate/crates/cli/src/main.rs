//! `repulse`: run particle-ensemble experiments from a TOML config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use repulse::checkpoint::load_checkpoint;
use repulse::io::config::{ExperimentConfig, TaskName};
use repulse::io::runner::{checkpoint_info, run_experiment, RunOptions};
use repulse::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "repulse", version, about = "Repulsive particle ensembles: training, uncertainty and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// 1-D regression: writes bands.svg, particles.csv and trainlog.csv.
    ToyRegression(Common),
    /// Train on a synthetic classification set and evaluate OOD detection.
    ToyClassification(Common),
    /// Optionally pretrain and freeze a base, then train the particle set.
    Train(Common),
    /// Per-input total/aleatoric/epistemic uncertainty of a checkpoint.
    Decompose(Common),
    /// Test metrics and OOD AUROC of a checkpoint.
    OodEval(Common),
    /// Pool-based active learning with several acquisition scores.
    ActiveLearn(Common),
    /// Describe a checkpoint.
    Info {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's out_dir, else ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint to read (decompose, ood-eval) or write (training tasks).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Report NLL and ECE multiplied by 100.
    #[arg(long)]
    percent: bool,
    /// Worker threads; REPULSE_THREADS takes precedence.
    #[arg(long)]
    threads: Option<usize>,
}

struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        // problems with the inputs the user handed us, as opposed to the run itself
        let config = matches!(
            e,
            Error::ConfigParse(_)
                | Error::InvalidConfig(_)
                | Error::MissingPath(_)
                | Error::InvalidSpec(_)
                | Error::InvalidBandwidth(_)
                | Error::PatchTooLarge { .. }
                | Error::MalformedHeader(_)
                | Error::RowLengthMismatch { .. }
                | Error::NonFiniteValue { .. }
                | Error::InvalidLabel { .. }
                | Error::MalformedDataset(_)
                | Error::BadMagic
                | Error::VersionMismatch { .. }
                | Error::TruncatedCheckpoint
                | Error::SpecDigestMismatch { .. }
                | Error::TrailingBytes(_)
                | Error::MalformedCheckpoint(_)
        );
        let (code, kind) = if config { (EXIT_CONFIG, "config") } else { (EXIT_RUNTIME, "runtime") };
        Failure {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

fn configure_threads(flag: Option<usize>) -> Result<(), Failure> {
    let env = match std::env::var("REPULSE_THREADS") {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| Failure {
            code: EXIT_CONFIG,
            kind: "config",
            message: format!("REPULSE_THREADS must be a positive integer, got {v:?}"),
        })?),
        Err(_) => None,
    };
    if let Some(n) = env.or(flag) {
        if n == 0 {
            return Err(Failure {
                code: EXIT_CONFIG,
                kind: "config",
                message: "thread count must be at least 1".into(),
            });
        }
        // a pool that is already built (e.g. in tests) is fine to keep
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn run_task(task: TaskName, c: Common) -> Result<(), Failure> {
    configure_threads(c.threads)?;
    let cfg = ExperimentConfig::load(&c.config)?;
    let reuses_model = matches!(task, TaskName::Decompose | TaskName::OodEval);
    if cfg.task != task && !reuses_model {
        return Err(Error::InvalidConfig(format!(
            "config is for task {}, not {}",
            cfg.task.as_str(),
            task.as_str()
        ))
        .into());
    }
    let out_dir = c
        .out
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| Path::new("out").to_path_buf());
    let opts = RunOptions {
        out_dir,
        seed: c.seed,
        percent: c.percent,
        checkpoint: c.checkpoint,
    };
    let out = run_experiment(task, &cfg, &opts)?;
    for line in &out.summary {
        println!("{line}");
    }
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::ToyRegression(c) => run_task(TaskName::ToyRegression, c),
        Command::ToyClassification(c) => run_task(TaskName::ToyClassification, c),
        Command::Train(c) => run_task(TaskName::Train, c),
        Command::Decompose(c) => run_task(TaskName::Decompose, c),
        Command::OodEval(c) => run_task(TaskName::OodEval, c),
        Command::ActiveLearn(c) => run_task(TaskName::ActiveLearn, c),
        Command::Info { checkpoint } => {
            let ps = load_checkpoint(&checkpoint)?;
            println!("{}", checkpoint_info(&ps));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let message = f.message.replace(['\n', '\r'], " ");
            eprintln!("error[{}]: {message}", f.kind);
            ExitCode::from(f.code)
        }
    }
}
