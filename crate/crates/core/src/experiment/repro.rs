use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::run::{load_data, metrics_for, train_in_memory};
use super::{ExperimentConfig, Stream};
use crate::autodiff::Tensor;
use crate::bayes::predict;
use crate::constraints::ConstraintKind;
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::trainers::Mode;

/// One table row: a label and the full configuration it runs.
#[derive(Debug, Clone)]
pub struct RowSpec {
    pub label: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReproRow {
    pub label: String,
    pub config_hash: String,
    pub metrics: MetricsRecord,
    /// Final ALM multipliers (hard mode only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<f64>>,
    /// Share of posterior-mean predictions on each band grid that fall within
    /// the band widened by 0.05 on either side.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_band: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReproSuite {
    Sim1,
    Sim2,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReproReport {
    pub sim1: Vec<ReproRow>,
    pub sim2: Vec<ReproRow>,
}

fn with_mode(base: &ExperimentConfig, mode: Mode) -> ExperimentConfig {
    let mut c = base.clone();
    c.train.mode = mode;
    c
}

/// Unconstrained baseline, then soft-constrained training.
pub fn sim1_rows(base: &ExperimentConfig) -> Vec<RowSpec> {
    vec![
        RowSpec {
            label: "BNN".into(),
            config: with_mode(base, Mode::Unconstrained),
        },
        RowSpec {
            label: format!("PR-BNN soft (lambda={})", base.train.lambda),
            config: with_mode(base, Mode::Soft),
        },
    ]
}

/// Baseline, six OC-BNN weightings, then hard-constrained training. The
/// OC-BNN rows use the input-gradient form of derivative constraints.
pub fn sim2_rows(base: &ExperimentConfig) -> Result<Vec<RowSpec>> {
    let data = load_data(base)?;
    let mut rows = vec![RowSpec {
        label: "BNN".into(),
        config: with_mode(base, Mode::Unconstrained),
    }];
    for c in [
        [1, 1, 1],
        [1, 1, 2],
        [1, 2, 1],
        [2, 1, 1],
        [1, 1, 4],
        [1, 1, 8],
    ] {
        let mut cfg = with_mode(base, Mode::Cocp);
        cfg.train.c_weights = c.iter().map(|&v| f64::from(v)).collect();
        cfg.use_input_gradient(&data);
        rows.push(RowSpec {
            label: format!("OC-BNN c=[{},{},{}]", c[0], c[1], c[2]),
            config: cfg,
        });
    }
    rows.push(RowSpec {
        label: "PR-BNN".into(),
        config: with_mode(base, Mode::Hard),
    });
    Ok(rows)
}

/// Trains and evaluates one row in memory.
pub fn run_row(spec: &RowSpec) -> Result<ReproRow> {
    let cfg = &spec.config;
    let data = load_data(cfg)?;
    let outcome = train_in_memory(cfg, &data)?;
    let (metrics, _) = metrics_for(cfg, &outcome.posterior, &data)?;
    let mut fractions = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.derived_seed(Stream::Predict));
    for c in cfg.constraints_for(&data) {
        let ConstraintKind::Band { lower, upper, .. } = &c.kind else {
            continue;
        };
        let xs: Vec<f64> = c
            .grid_points()
            .into_iter()
            .filter(|&x| c.in_region(x))
            .collect();
        let grid = Tensor::column(xs.clone())?;
        let s = predict(
            &outcome.posterior,
            &cfg.network,
            &grid,
            cfg.eval.samples,
            &mut rng,
        )?;
        let mut inside = 0usize;
        for (x, m) in xs.iter().zip(&s.mean) {
            if (lower.eval(*x)? - 0.05..=upper.eval(*x)? + 0.05).contains(m) {
                inside += 1;
            }
        }
        fractions.push(inside as f64 / xs.len() as f64);
    }
    let in_band =
        (!fractions.is_empty()).then(|| fractions.iter().sum::<f64>() / fractions.len() as f64);
    Ok(ReproRow {
        label: spec.label.clone(),
        config_hash: cfg.hash(),
        s: outcome.dual.map(|d| d.s),
        in_band,
        metrics,
    })
}

/// Runs rows on up to `threads` workers. Results come back in row order, with
/// the wall time of each row.
pub fn run_rows(rows: &[RowSpec], threads: usize) -> Result<Vec<(ReproRow, f64)>> {
    type Slot = Option<Result<(ReproRow, f64)>>;
    let slots: Mutex<Vec<Slot>> = Mutex::new((0..rows.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = threads.clamp(1, rows.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= rows.len() {
                    break;
                }
                let t = Instant::now();
                let r = run_row(&rows[i]).map(|row| (row, t.elapsed().as_secs_f64()));
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|s| s.ok_or_else(|| Error::Contract("repro row did not run".into()))?)
        .collect()
}

/// Runs the given suites. `on_row` sees each finished row with its time.
pub fn repro(
    sim1: Option<&ExperimentConfig>,
    sim2: Option<&ExperimentConfig>,
    threads: usize,
    mut on_row: impl FnMut(ReproSuite, &ReproRow, f64),
) -> Result<ReproReport> {
    let mut report = ReproReport {
        sim1: Vec::new(),
        sim2: Vec::new(),
    };
    if let Some(base) = sim1 {
        for (row, secs) in run_rows(&sim1_rows(base), threads)? {
            on_row(ReproSuite::Sim1, &row, secs);
            report.sim1.push(row);
        }
    }
    if let Some(base) = sim2 {
        for (row, secs) in run_rows(&sim2_rows(base)?, threads)? {
            on_row(ReproSuite::Sim2, &row, secs);
            report.sim2.push(row);
        }
    }
    Ok(report)
}

fn list<T>(xs: &[T], f: impl Fn(&T) -> String) -> String {
    xs.iter().map(f).collect::<Vec<_>>().join(", ")
}

impl ReproReport {
    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        if !self.sim1.is_empty() {
            md.push_str("## Sim 1\n\n| Method | In band | MSE | STD | CRPS | v | n |\n|---|---|---|---|---|---|---|\n");
            for r in &self.sim1 {
                let m = &r.metrics;
                let _ = writeln!(
                    md,
                    "| {} | {} | {:.4e} | {:.4e} | {:.4e} | {} | {} |",
                    r.label,
                    r.in_band
                        .map_or("-".into(), |f| format!("{:.1}%", 100.0 * f)),
                    m.mse,
                    m.std,
                    m.crps,
                    list(&m.v, |v| format!("{v:.3e}")),
                    list(&m.n, |n| n.to_string()),
                );
            }
            md.push('\n');
        }
        if !self.sim2.is_empty() {
            md.push_str(
                "## Sim 2\n\n| Method | MSE | STD | CRPS | v1 | v2 | v3 | n1 | n2 | n3 | s |\n|---|---|---|---|---|---|---|---|---|---|---|\n",
            );
            for r in &self.sim2 {
                let m = &r.metrics;
                let cell = |i: usize| m.v.get(i).map_or("-".into(), |v| format!("{v:.3e}"));
                let count = |i: usize| m.n.get(i).map_or("-".into(), |n| n.to_string());
                let _ = writeln!(
                    md,
                    "| {} | {:.4e} | {:.4e} | {:.4e} | {} | {} | {} | {} | {} | {} | {} |",
                    r.label,
                    m.mse,
                    m.std,
                    m.crps,
                    cell(0),
                    cell(1),
                    cell(2),
                    count(0),
                    count(1),
                    count(2),
                    r.s.as_ref()
                        .map_or("-".into(), |s| list(s, |v| format!("{v:.3}"))),
                );
            }
            md.push('\n');
        }
        md
    }
}
