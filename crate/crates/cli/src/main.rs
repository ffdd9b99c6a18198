use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use prbnn::experiment::{
    self, load_config, ConfigBase, DataSource, ExperimentConfig, GradcheckOptions, Preset,
    ReproSuite, Stream,
};
use prbnn::Error;

#[derive(Parser)]
#[command(
    name = "prbnn",
    version,
    about = "Constrained Bayesian neural network experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Built-in configuration (sim1 or sim2) used when --config is absent.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `out`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override a config key by dotted path, e.g. train.lambda=50. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulation's train/test CSVs and constraint file.
    Simulate(Common),
    /// Train and write a checkpoint plus per-epoch history.
    Train(Common),
    /// Predict on the test split and write metrics and predictions.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load (default: <out>/checkpoint.json).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Compare reverse-mode gradients with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Add this offset to every analytic gradient (checks the checker).
        #[arg(long, hide = true)]
        corrupt_gradient: Option<f64>,
    },
    /// Run the simulation comparison tables.
    Repro(Common),
}

/// Failure that maps to a specific exit code.
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn config(common: &Common) -> Result<ExperimentConfig> {
    let preset: Option<Preset> = common.preset.as_deref().map(str::parse).transpose()?;
    let base = match (&common.config, preset) {
        (Some(p), _) => ConfigBase::File(p),
        (None, Some(p)) => ConfigBase::Preset(p),
        (None, None) => ConfigBase::Preset(Preset::Sim2),
    };
    let cfg = load_config(base, &common.set, common.seed, common.out.as_deref())?;
    Ok(cfg)
}

fn threads() -> Result<usize> {
    match std::env::var("CBNN_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| {
                Error::Config(format!("CBNN_THREADS={v:?} is not a positive integer"))
            })?;
            if n == 0 {
                return Err(Error::Config("CBNN_THREADS must be >= 1".into()).into());
            }
            Ok(n)
        }
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn cmd_simulate(common: &Common) -> Result<()> {
    let cfg = config(common)?;
    let out = experiment::simulate(&cfg)?;
    println!("{}", out.summary);
    Ok(())
}

fn cmd_train(common: &Common) -> Result<()> {
    let cfg = config(common)?;
    let run = experiment::train(&cfg)?;
    let last = run.outcome.history.last().context("empty history")?;
    println!(
        "trained {} epochs ({:?}, {:?}): final loss {:.6e}, nll {:.6e}; checkpoint {}; history {}",
        run.outcome.history.len(),
        cfg.train.backend,
        cfg.train.mode,
        last.loss,
        last.nll,
        run.checkpoint_path.display(),
        run.history_path.display()
    );
    Ok(())
}

fn cmd_evaluate(common: &Common, checkpoint: Option<&Path>) -> Result<()> {
    let cfg = config(common)?;
    let out = experiment::evaluate(&cfg, checkpoint)?;
    println!("{}", out.row);
    Ok(())
}

fn cmd_gradcheck(common: &Common, corrupt: Option<f64>) -> Result<()> {
    let cfg = config(common)?;
    let report = experiment::gradcheck(&GradcheckOptions {
        seed: cfg.derived_seed(Stream::Gradcheck),
        corrupt,
    })?;
    for e in &report.entries {
        println!("{}", e.line());
    }
    std::fs::create_dir_all(&cfg.out)?;
    let doc = serde_json::json!({
        "config_hash": cfg.hash(),
        "passed": report.passed(),
        "entries": report.entries,
    });
    std::fs::write(
        cfg.out.join("gradcheck.json"),
        serde_json::to_string_pretty(&doc)? + "\n",
    )?;
    if !report.passed() {
        let w = report.worst().context("no gradient checks ran")?;
        return Err(CheckFailed(format!(
            "gradient check failed; worst offender: {}",
            w.line()
        ))
        .into());
    }
    println!("gradient check passed");
    Ok(())
}

fn cmd_repro(common: &Common) -> Result<()> {
    let threads = threads()?;
    let (sim1, sim2) = if common.config.is_some() || common.preset.is_some() {
        let cfg = config(common)?;
        let DataSource::Sim(spec) = &cfg.data else {
            bail!(Error::Config("repro needs a simulation data source".into()));
        };
        match spec.resolve()?.sim {
            prbnn::data::SimId::Sim1 => (Some(cfg), None),
            prbnn::data::SimId::Sim2 => (None, Some(cfg)),
        }
    } else {
        let with = |p: &str| {
            let c = Common {
                preset: Some(p.into()),
                ..common.clone()
            };
            config(&c)
        };
        (Some(with("sim1")?), Some(with("sim2")?))
    };
    let out_dir = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out/repro"));
    let start = std::time::Instant::now();
    let report = experiment::repro(sim1.as_ref(), sim2.as_ref(), threads, |suite, row, secs| {
        let tag = match suite {
            ReproSuite::Sim1 => "sim1",
            ReproSuite::Sim2 => "sim2",
        };
        eprintln!(
            "[{tag}] {:<22} {:>7.1}s  {}",
            row.label,
            secs,
            experiment::metrics_row(&row.metrics)
        );
    })?;
    std::fs::create_dir_all(&out_dir)?;
    let md = report.to_markdown();
    std::fs::write(out_dir.join("repro.md"), &md)?;
    std::fs::write(
        out_dir.join("repro.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    print!("{md}");
    eprintln!("repro finished in {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<CheckFailed>().is_some() {
        return 1;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::NumericalAbort { .. } | Error::NonFinite(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => cmd_simulate(c),
        Command::Train(c) => cmd_train(c),
        Command::Evaluate { common, checkpoint } => cmd_evaluate(common, checkpoint.as_deref()),
        Command::Gradcheck {
            common,
            corrupt_gradient,
        } => cmd_gradcheck(common, *corrupt_gradient),
        Command::Repro(c) => cmd_repro(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
