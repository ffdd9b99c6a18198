//! Central finite-difference comparison against reverse-mode gradients.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Worst disagreement found by [`gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate that produced `max_rel_error`.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Coordinates whose probes changed a kink branch and were skipped.
    pub skipped_kinks: usize,
}

/// Relative error with a small absolute floor so near-zero components do
/// not blow up on round-off.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `d f / d x` from the tape against central differences with step
/// `h`. `f` must build its graph on the supplied tape from the supplied leaf.
///
/// `corrupt` perturbs the analytic gradient before comparison; it exists so
/// that callers can confirm the check actually fails on a wrong gradient.
pub fn gradient_check<F>(
    x: &Tensor,
    h: f64,
    floor: f64,
    corrupt: Option<f64>,
    f: F,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let root = f(&tape, leaf)?;
    let base_signature = tape.branch_signature();
    let grads = tape.backward(root)?;
    let mut analytic = grads
        .get(&leaf)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));
    if let Some(delta) = corrupt {
        for v in analytic.data_mut() {
            *v += delta;
        }
    }

    let eval = |probe: &Tensor| -> Result<(f64, u64)> {
        let tape = Tape::new();
        let leaf = tape.leaf(probe.clone());
        let out = f(&tape, leaf)?;
        let value = out.item();
        Ok((value, tape.branch_signature()))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let (fp, sp) = eval(&plus)?;
        let (fm, sm) = eval(&minus)?;
        if sp != base_signature || sm != base_signature {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.data()[i];
        let err = relative_error(a, numeric, floor);
        report.checked += 1;
        if report.checked == 1 || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}
