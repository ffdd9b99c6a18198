//! Accuracy, spread, CRPS and constraint-violation statistics.

use serde::{Deserialize, Serialize};

use crate::bayes::PredictiveSummary;
use crate::constraints::{active_scores, ConstraintSpec, TOL_VIOLATION};
use crate::error::{shape_err, Error, Result};

pub fn mse(pred_mean: &[f64], target: &[f64]) -> Result<f64> {
    if pred_mean.len() != target.len() {
        return shape_err(format!(
            "{} predictions vs {} targets",
            pred_mean.len(),
            target.len()
        ));
    }
    if target.is_empty() {
        return Err(Error::Contract("mse of an empty set".into()));
    }
    let sum: f64 = pred_mean
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / target.len() as f64)
}

/// Mean over points of the per-point population standard deviation.
pub fn epistemic_std(summary: &PredictiveSummary) -> Result<f64> {
    if summary.ensemble_size() < 2 {
        return Err(Error::Contract("ensemble needs >= 2 members".into()));
    }
    if summary.points() == 0 {
        return Err(Error::Contract("no prediction points".into()));
    }
    Ok(summary.std.iter().sum::<f64>() / summary.points() as f64)
}

/// Energy-form CRPS of one ensemble against one observation, in
/// `O(N log N)` via sorting.
pub fn crps_point(members: &[f64], y: f64) -> f64 {
    let n = members.len() as f64;
    let spread: f64 = members.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
    let mut s = members.to_vec();
    s.sort_by(f64::total_cmp);
    // sum_{i,j} |x_i - x_j| = 2 sum_i (2i - n + 1) x_(i) over sorted values
    let pair: f64 = s
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - n + 1.0) * x)
        .sum::<f64>()
        * 2.0;
    spread - pair / (2.0 * n * n)
}

/// Mean CRPS over points. `samples[k][i]` is member `k` at point `i`.
pub fn crps_ensemble(samples: &[Vec<f64>], target: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Contract(format!(
            "CRPS needs an ensemble of >= 2, got {}",
            samples.len()
        )));
    }
    if target.is_empty() {
        return Err(Error::Contract("CRPS of an empty set".into()));
    }
    if samples.iter().any(|s| s.len() != target.len()) {
        return shape_err("ensemble members do not match the targets");
    }
    let mut total = 0.0;
    let mut column = vec![0.0; samples.len()];
    for (i, &y) in target.iter().enumerate() {
        for (c, s) in column.iter_mut().zip(samples) {
            *c = s[i];
        }
        total += crps_point(&column, y);
    }
    Ok(total / target.len() as f64)
}

/// `v_i` and `n_i` for one constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// `-E_w[f_i]`: mean over draws and active grid positions of the negated score.
    pub value: f64,
    /// Active positions whose posterior-mean prediction violates the rule.
    pub count: usize,
    /// Active positions checked.
    pub positions: usize,
}

/// Violation statistics of `spec` from an ensemble evaluated on `xs`.
pub fn violation_stats(
    spec: &ConstraintSpec,
    summary: &PredictiveSummary,
    xs: &[f64],
) -> Result<Violation> {
    if summary.points() != xs.len() {
        return shape_err(format!(
            "summary has {} points, grid {}",
            summary.points(),
            xs.len()
        ));
    }
    let mut total = 0.0;
    let mut positions = 0;
    for s in &summary.samples {
        let scores = active_scores(spec, xs, s)?;
        positions = scores.len();
        total += scores.iter().sum::<f64>();
    }
    let value = if positions == 0 {
        0.0
    } else {
        -total / (positions * summary.ensemble_size()) as f64
    };
    let count = active_scores(spec, xs, &summary.mean)?
        .iter()
        .filter(|&&s| s < -TOL_VIOLATION)
        .count();
    Ok(Violation {
        value: value.max(0.0),
        count,
        positions,
    })
}

/// Per-sample variant: number of ensemble members violating anywhere.
pub fn violating_members(
    spec: &ConstraintSpec,
    summary: &PredictiveSummary,
    xs: &[f64],
) -> Result<usize> {
    let mut n = 0;
    for s in &summary.samples {
        if active_scores(spec, xs, s)?
            .iter()
            .any(|&v| v < -TOL_VIOLATION)
        {
            n += 1;
        }
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub mse: f64,
    pub std: f64,
    pub crps: f64,
    pub v: Vec<f64>,
    pub n: Vec<usize>,
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl MetricsRecord {
    /// Metrics of `summary` against `target`; constraint statistics use the
    /// same points `xs`.
    pub fn compute(
        summary: &PredictiveSummary,
        target: &[f64],
        constraints: &[ConstraintSpec],
        xs: &[f64],
    ) -> Result<Self> {
        let mut v = Vec::with_capacity(constraints.len());
        let mut n = Vec::with_capacity(constraints.len());
        for c in constraints {
            let s = violation_stats(c, summary, xs)?;
            v.push(s.value);
            n.push(s.count);
        }
        Ok(Self {
            mse: mse(&summary.mean, target)?,
            std: epistemic_std(summary)?,
            crps: crps_ensemble(&summary.samples, target)?,
            v,
            n,
            n_test: target.len(),
            config_hash: None,
        })
    }
}
