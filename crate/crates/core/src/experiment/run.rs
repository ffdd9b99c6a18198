use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataSource, ExperimentConfig, Stream};
use crate::bayes::{predict, NetworkSpec, Posterior, PredictiveSummary};
use crate::data::{format_f64, generate, load_csv, save_csv, SimData, Split};
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::trainers::{self, DualState, EpochRecord, TrainOutcome};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const DUMP_FILE: &str = "abort_dump.json";

/// Training and test sets plus the constraint pack of a simulation. CSV
/// sources carry no constraints of their own.
pub fn load_data(cfg: &ExperimentConfig) -> Result<SimData> {
    match &cfg.data {
        DataSource::Sim(spec) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.derived_seed(Stream::Data));
            generate(spec, &mut rng)
        }
        DataSource::Csv(src) => {
            let mut train = load_csv(&src.train, &src.schema, Split::Train)?;
            let mut test = load_csv(&src.test, &src.schema, Split::Test)?;
            if src.scale {
                let scalers = train.fit_scalers()?;
                train = train.scaled(&scalers)?;
                test = test.scaled(&scalers)?;
            }
            Ok(SimData {
                train,
                test,
                constraints: Vec::new(),
            })
        }
    }
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.out)?;
    Ok(&cfg.out)
}

fn hash_comment(hash: &str) -> Vec<String> {
    vec![format!("config_hash={hash}")]
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub constraints_path: PathBuf,
    pub summary: String,
}

/// Writes `train.csv`, `test.csv` and `constraints.json` for a simulation.
pub fn simulate(cfg: &ExperimentConfig) -> Result<SimulateOutcome> {
    let DataSource::Sim(spec) = &cfg.data else {
        return Err(Error::Config(
            "simulate needs a simulation data source".into(),
        ));
    };
    let data = load_data(cfg)?;
    let constraints = cfg.constraints_for(&data);
    let hash = cfg.hash();
    let dir = prepare_out(cfg)?;
    let train_path = dir.join("train.csv");
    let test_path = dir.join("test.csv");
    let constraints_path = dir.join("constraints.json");
    save_csv(&data.train, &train_path, &hash_comment(&hash))?;
    save_csv(&data.test, &test_path, &hash_comment(&hash))?;
    let doc = serde_json::json!({ "config_hash": hash, "constraints": constraints });
    std::fs::write(
        &constraints_path,
        serde_json::to_string_pretty(&doc)? + "\n",
    )?;
    let sim = spec.resolve()?.sim;
    let summary = format!(
        "{sim:?}: {} train rows, {} test rows, {} constraints, config_hash={hash}",
        data.train.len(),
        data.test.len(),
        constraints.len()
    )
    .to_lowercase();
    Ok(SimulateOutcome {
        train_path,
        test_path,
        constraints_path,
        summary,
    })
}

/// Trained posterior plus what is needed to check it against a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub config_hash: String,
    pub network: NetworkSpec,
    pub posterior: Posterior,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual: Option<DualState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_ef: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complementarity: Option<Vec<bool>>,
}

/// One line of `history.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryLine {
    pub config_hash: String,
    #[serde(flatten)]
    pub record: EpochRecord,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub outcome: TrainOutcome,
    pub data: SimData,
    pub checkpoint_path: PathBuf,
    pub history_path: PathBuf,
}

/// Trains without touching the filesystem.
pub(crate) fn train_in_memory(cfg: &ExperimentConfig, data: &SimData) -> Result<TrainOutcome> {
    let mut tc = cfg.train.clone();
    tc.seed = cfg.derived_seed(Stream::Train);
    let constraints = cfg.constraints_for(data);
    trainers::train(&tc, &cfg.network, &data.train, &constraints)
}

/// Trains and writes `checkpoint.json` and `history.jsonl`. A numerical abort
/// writes the trainer state to `abort_dump.json` and names it in the error.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainRun> {
    let data = load_data(cfg)?;
    let dir = prepare_out(cfg)?;
    let outcome = match train_in_memory(cfg, &data) {
        Ok(o) => o,
        Err(Error::NumericalAbort {
            epoch,
            message,
            dump,
        }) => {
            let path = dir.join(DUMP_FILE);
            std::fs::write(&path, format!("{dump}\n"))?;
            return Err(Error::NumericalAbort {
                epoch,
                message: format!("{message}; diagnostic dump at {}", path.display()),
                dump,
            });
        }
        Err(e) => return Err(e),
    };
    let hash = cfg.hash();
    let ckpt = Checkpoint {
        config_hash: hash.clone(),
        network: cfg.network.clone(),
        posterior: outcome.posterior.clone(),
        dual: outcome.dual.clone(),
        final_ef: outcome.final_ef.clone(),
        complementarity: outcome.complementarity.clone(),
    };
    let checkpoint_path = dir.join(CHECKPOINT_FILE);
    std::fs::write(
        &checkpoint_path,
        serde_json::to_string_pretty(&ckpt)? + "\n",
    )?;
    let mut lines = String::new();
    for r in &outcome.history {
        let line = HistoryLine {
            config_hash: hash.clone(),
            record: r.clone(),
        };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    let history_path = dir.join(HISTORY_FILE);
    std::fs::write(&history_path, lines)?;
    Ok(TrainRun {
        outcome,
        data,
        checkpoint_path,
        history_path,
    })
}

#[derive(Debug, Clone)]
pub struct EvaluateOutcome {
    pub metrics: MetricsRecord,
    pub summary: PredictiveSummary,
    pub metrics_path: PathBuf,
    pub predictions_path: PathBuf,
    pub row: String,
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Checks that a checkpoint belongs to the configured network.
pub fn check_compatible(ckpt: &Checkpoint, net: &NetworkSpec) -> Result<()> {
    if &ckpt.network != net {
        return Err(Error::Config(
            "checkpoint was trained for a different network".into(),
        ));
    }
    ckpt.posterior
        .validate(net)
        .map_err(|e| Error::Config(format!("checkpoint does not fit the network: {e}")))
}

/// Posterior predictive metrics on the test split.
pub(crate) fn metrics_for(
    cfg: &ExperimentConfig,
    posterior: &Posterior,
    data: &SimData,
) -> Result<(MetricsRecord, PredictiveSummary)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.derived_seed(Stream::Predict));
    let summary = predict(
        posterior,
        &cfg.network,
        &data.test.x,
        cfg.eval.samples,
        &mut rng,
    )?;
    let constraints = if cfg.network.input_dim() == 1 {
        metric_constraints(cfg, data)
    } else {
        Vec::new()
    };
    let xs = data.test.column(0);
    let mut m = MetricsRecord::compute(&summary, data.test.y.data(), &constraints, &xs)?;
    m.config_hash = Some(cfg.hash());
    Ok((m, summary))
}

/// Violation metrics always read the constraints with first differences on
/// the test points, whatever form training used.
fn metric_constraints(
    cfg: &ExperimentConfig,
    data: &SimData,
) -> Vec<crate::constraints::ConstraintSpec> {
    let mut cs = cfg.constraints_for(data);
    for c in &mut cs {
        c.derivative = crate::constraints::DerivativeMode::FiniteDifference;
    }
    cs
}

/// `MSE STD CRPS v n` on one line.
pub fn metrics_row(m: &MetricsRecord) -> String {
    let mut s = format!("MSE {:.4e}  STD {:.4e}  CRPS {:.4e}", m.mse, m.std, m.crps);
    if !m.v.is_empty() {
        let v: Vec<String> = m.v.iter().map(|v| format!("{v:.3e}")).collect();
        let n: Vec<String> = m.n.iter().map(|n| n.to_string()).collect();
        let _ = write!(
            s,
            "  v [{}]  n [{}]/{}",
            v.join(", "),
            n.join(", "),
            m.n_test
        );
    }
    s
}

fn write_predictions(
    path: &Path,
    hash: &str,
    data: &SimData,
    summary: &PredictiveSummary,
    raw: usize,
) -> Result<()> {
    let mut out = format!("# config_hash={hash}\n");
    let mut header = data.test.inputs.clone();
    header.extend(["mean".to_string(), "std".to_string()]);
    header.extend((0..raw).map(|k| format!("sample_{k}")));
    out.push_str(&header.join(","));
    out.push('\n');
    let d = data.test.x.cols();
    for i in 0..summary.points() {
        let mut row: Vec<String> = data.test.x.data()[i * d..(i + 1) * d]
            .iter()
            .map(|&v| format_f64(v))
            .collect();
        row.push(format_f64(summary.mean[i]));
        row.push(format_f64(summary.std[i]));
        row.extend(summary.samples[..raw].iter().map(|s| format_f64(s[i])));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Loads a checkpoint (default `<out>/checkpoint.json`), predicts on the test
/// split and writes `metrics.json` and `predictions.csv`.
pub fn evaluate(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<EvaluateOutcome> {
    let default_path = cfg.out.join(CHECKPOINT_FILE);
    let ckpt = read_checkpoint(checkpoint.unwrap_or(&default_path))?;
    check_compatible(&ckpt, &cfg.network)?;
    let data = load_data(cfg)?;
    let (metrics, summary) = metrics_for(cfg, &ckpt.posterior, &data)?;
    let dir = prepare_out(cfg)?;
    let metrics_path = dir.join(METRICS_FILE);
    std::fs::write(
        &metrics_path,
        serde_json::to_string_pretty(&metrics)? + "\n",
    )?;
    let predictions_path = dir.join(PREDICTIONS_FILE);
    let hash = metrics.config_hash.clone().unwrap_or_default();
    let raw = cfg.eval.raw_samples.min(summary.ensemble_size());
    write_predictions(&predictions_path, &hash, &data, &summary, raw)?;
    let row = metrics_row(&metrics);
    Ok(EvaluateOutcome {
        metrics,
        summary,
        metrics_path,
        predictions_path,
        row,
    })
}
