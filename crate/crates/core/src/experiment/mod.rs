//! End-to-end experiment configuration and the pipelines behind the CLI.

mod gradcheck;
mod repro;
mod run;

pub use gradcheck::{gradcheck, GradcheckEntry, GradcheckOptions, GradcheckReport};
pub use repro::{repro, sim1_rows, sim2_rows, ReproReport, ReproRow, ReproSuite, RowSpec};
pub use run::{
    check_compatible, evaluate, load_data, metrics_row, read_checkpoint, simulate, train,
    Checkpoint, EvaluateOutcome, HistoryLine, SimulateOutcome, TrainRun, CHECKPOINT_FILE,
    DUMP_FILE, HISTORY_FILE, METRICS_FILE, PREDICTIONS_FILE,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bayes::{Activation, NetworkMode, NetworkSpec};
use crate::constraints::{ConstraintSpec, DerivativeMode};
use crate::data::{CsvSchema, SimData, SimSpec};
use crate::error::{Error, Result};
use crate::trainers::{Backend, Mode, TrainConfig};

/// Where the training and test sets come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Sim(SimSpec),
    Csv(CsvSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub train: PathBuf,
    pub test: PathBuf,
    #[serde(default)]
    pub schema: CsvSchema,
    /// Min-max scale every column with scalers fitted on the training split.
    /// Constraints are then read on the scaled axis.
    #[serde(default)]
    pub scale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Posterior draws per prediction.
    pub samples: usize,
    /// Raw draws written to the prediction CSV next to mean and std.
    pub raw_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 500,
            raw_samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed. Data, training and prediction draw from streams derived
    /// from it; `train.seed` is overwritten with the derived training seed.
    #[serde(default)]
    pub seed: u64,
    pub network: NetworkSpec,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataSource,
    /// Replaces the simulation's constraint pack when set. Required for CSV data
    /// unless training is unconstrained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<Vec<ConstraintSpec>>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Sim1,
    Sim2,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim1" => Ok(Preset::Sim1),
            "sim2" => Ok(Preset::Sim2),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected sim1 or sim2)"
            ))),
        }
    }
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Sim1 => Self::sim1(),
            Preset::Sim2 => Self::sim2(),
        }
    }

    /// Band knowledge on a 1-10-1 RBF network, soft mode with lambda 10.
    pub fn sim1() -> Self {
        Self {
            seed: 0,
            network: NetworkSpec::mlp(&[1, 10, 1], Activation::rbf_unit()),
            train: TrainConfig {
                mode: Mode::Soft,
                lambda: 10.0,
                epochs: 2000,
                mc_samples: 8,
                learning_rate: 1e-2,
                ..TrainConfig::default()
            },
            data: DataSource::Sim(SimSpec::sim1()),
            constraints: None,
            eval: EvalConfig::default(),
            out: PathBuf::from("out/sim1"),
        }
    }

    /// Bounds plus monotonicity on a 1-100-1 ReLU network, hard mode.
    pub fn sim2() -> Self {
        let mut network = NetworkSpec::mlp(&[1, 100, 1], Activation::Relu);
        network.learn_obs_noise = false;
        network.obs_log_var_init = 0.01f64.ln();
        let mut train = TrainConfig {
            mode: Mode::Hard,
            epochs: 1200,
            mc_samples: 8,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        train.alm.rho_init = 5.0;
        Self {
            seed: 0,
            network,
            train,
            data: DataSource::Sim(SimSpec::sim2()),
            constraints: None,
            eval: EvalConfig::default(),
            out: PathBuf::from("out/sim2"),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        if self.eval.samples < 2 {
            return Err(Error::Config("eval.samples must be >= 2".into()));
        }
        if self.eval.raw_samples > self.eval.samples {
            return Err(Error::Config(
                "eval.raw_samples exceeds eval.samples".into(),
            ));
        }
        let dropout_net = self.network.mode == NetworkMode::Dropout;
        if dropout_net != (self.train.backend == Backend::Dropout) {
            return Err(Error::Config(
                "network.mode dropout and train.backend dropout go together".into(),
            ));
        }
        match &self.data {
            DataSource::Sim(s) => {
                s.resolve()?;
            }
            DataSource::Csv(_) => {
                if self.constraints.is_none() && self.train.mode != Mode::Unconstrained {
                    return Err(Error::Config(format!(
                        "mode {:?} on CSV data needs a constraints list",
                        self.train.mode
                    )));
                }
            }
        }
        if let Some(cs) = &self.constraints {
            for c in cs {
                c.validate()?;
            }
        }
        Ok(())
    }

    /// Constraints used for training and for the violation metrics.
    pub fn constraints_for(&self, data: &SimData) -> Vec<ConstraintSpec> {
        self.constraints
            .clone()
            .unwrap_or_else(|| data.constraints.clone())
    }

    /// 16 hex digits of FNV-1a over the canonical JSON form, `out` excluded.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("out");
        }
        format!("{:016x}", fnv1a(v.to_string().as_bytes()))
    }

    pub fn derived_seed(&self, stream: Stream) -> u64 {
        derive_seed(self.seed, stream)
    }

    /// Switches every derivative-type constraint to the input-gradient form.
    pub fn use_input_gradient(&mut self, data: &SimData) {
        let mut cs = self.constraints_for(data);
        for c in &mut cs {
            if c.kind.is_derivative() {
                c.derivative = DerivativeMode::InputGradient;
            }
        }
        self.constraints = Some(cs);
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Independent random streams of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Train = 2,
    Predict = 3,
    Gradcheck = 4,
}

/// SplitMix64 finalizer of `master` offset by the stream tag.
pub fn derive_seed(master: u64, stream: Stream) -> u64 {
    let mut z = master.wrapping_add((stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sets `key` (dotted path, numeric segments index arrays) to `raw`, parsed
/// as JSON when possible and as a bare string otherwise.
pub fn apply_override(doc: &mut Value, key: &str, raw: &str) -> Result<()> {
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = doc;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Object(m) => {
                if last {
                    m.insert(part.to_string(), value);
                    return Ok(());
                }
                m.entry(part.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(a) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: {part:?} is not an array index")))?;
                let len = a.len();
                let slot = a.get_mut(idx).ok_or_else(|| {
                    Error::Config(format!("{key}: index {idx} out of range ({len})"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(Error::Config(format!(
                    "{key}: {:?} is not an object or array",
                    parts[..i].join(".")
                )))
            }
        };
    }
    unreachable!("loop returns on the last segment")
}

/// Splits `key=value`.
pub fn parse_assignment(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v))
        .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))
}

/// Where a configuration comes from before overrides.
#[derive(Debug, Clone)]
pub enum ConfigBase<'a> {
    File(&'a Path),
    Preset(Preset),
}

/// Loads a base document, applies `key=value` overrides in order, then the
/// explicit seed and output directory, and validates the result.
pub fn load_config(
    base: ConfigBase<'_>,
    sets: &[String],
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<ExperimentConfig> {
    let mut doc: Value = match base {
        ConfigBase::File(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        ConfigBase::Preset(p) => serde_json::to_value(ExperimentConfig::preset(p))?,
    };
    for s in sets {
        let (k, v) = parse_assignment(s)?;
        apply_override(&mut doc, k, v)?;
    }
    if let Some(seed) = seed {
        apply_override(&mut doc, "seed", &seed.to_string())?;
    }
    if let Some(out) = out {
        doc["out"] = Value::String(out.to_string_lossy().into_owned());
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
