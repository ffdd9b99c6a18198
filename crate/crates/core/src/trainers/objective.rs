use crate::autodiff::{Tensor, Var};
use crate::bayes::{
    forward, kl_closed_form, kl_monte_carlo, log_prior, nll_gaussian, reparameterize, DropoutMasks,
    GaussianPrior, KlMethod, NetworkSpec,
};
use crate::constraints::{constraints_for_weights, ConstraintSpec};
use crate::error::{Error, Result};

use super::alm::DualState;

/// Everything an objective needs besides the parameters.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub net: &'a NetworkSpec,
    /// `n x d` training inputs.
    pub x: &'a Tensor,
    /// `n x 1` training targets.
    pub y: &'a Tensor,
    pub constraints: &'a [ConstraintSpec],
    pub prior: &'a GaussianPrior,
}

/// How constraint expectations enter the loss.
#[derive(Debug, Clone, Copy)]
pub enum Penalty<'a> {
    None,
    /// `- lambda sum_i w_i Ef_i` with the specs' composite weights.
    Soft {
        lambda: f64,
    },
    /// `sum_i phi(Ef_i, s_i, rho_i)`.
    Hard(&'a DualState),
    /// `- sum_i c_i Ef_i` with Monte Carlo KL on the same draws.
    Cocp(&'a [f64]),
}

/// Loss and its parts for one step.
pub struct Terms<'t> {
    pub loss: Var<'t>,
    pub nll: Var<'t>,
    pub kl: Option<Var<'t>>,
    /// MC estimate of `E[f_i]` per constraint.
    pub ef: Vec<Var<'t>>,
}

impl Terms<'_> {
    pub fn ef_values(&self) -> Vec<f64> {
        self.ef.iter().map(|v| v.item()).collect()
    }
}

fn mean_of<'t>(vars: &[Var<'t>]) -> Result<Var<'t>> {
    let mut acc = vars[0];
    for v in &vars[1..] {
        acc = acc.add(v)?;
    }
    Ok(acc.scale(1.0 / vars.len() as f64))
}

/// Per-constraint means over draws: `per_draw[k][i]` -> `ef[i]`.
fn average_constraints<'t>(per_draw: &[Vec<Var<'t>>], m: usize) -> Result<Vec<Var<'t>>> {
    (0..m)
        .map(|i| {
            let col: Vec<Var<'t>> = per_draw.iter().map(|d| d[i]).collect();
            mean_of(&col)
        })
        .collect()
}

fn apply_penalty<'t>(
    base: Var<'t>,
    ef: &[Var<'t>],
    p: &Problem<'_>,
    penalty: Penalty<'_>,
) -> Result<Var<'t>> {
    match penalty {
        Penalty::None => Ok(base),
        Penalty::Soft { lambda } => {
            let mut loss = base;
            for (e, spec) in ef.iter().zip(p.constraints) {
                loss = loss.sub(&e.scale(lambda * spec.weight))?;
            }
            Ok(loss)
        }
        Penalty::Hard(dual) => match dual.penalty(ef)? {
            Some(phi) => base.add(&phi),
            None => Ok(base),
        },
        Penalty::Cocp(c) => {
            if c.len() != ef.len() {
                return Err(Error::Shape(format!(
                    "{} COCP weights for {} constraints",
                    c.len(),
                    ef.len()
                )));
            }
            let mut loss = base;
            for (e, &ci) in ef.iter().zip(c) {
                loss = loss.sub(&e.scale(ci))?;
            }
            Ok(loss)
        }
    }
}

/// Variational objective `KL + NLL + penalty` estimated with the given
/// standard-normal draws (one per weight sample).
///
/// The NLL and constraint expectations average over the draws. Monte Carlo
/// KL (always used for COCP) reuses the same draws.
#[allow(clippy::too_many_arguments)]
pub fn bbb_objective<'t>(
    p: &Problem<'_>,
    mu: Var<'t>,
    log_var: Var<'t>,
    obs_log_var: Var<'t>,
    eps: &[Tensor],
    penalty: Penalty<'_>,
    kl: KlMethod,
) -> Result<Terms<'t>> {
    if eps.is_empty() {
        return Err(Error::Contract("objective needs K >= 1 draws".into()));
    }
    let tape = mu.tape();
    let x = tape.constant(p.x.clone());
    let y = tape.constant(p.y.clone());
    let mut nlls = Vec::with_capacity(eps.len());
    let mut fs = Vec::with_capacity(eps.len());
    for e in eps {
        let w = reparameterize(mu, log_var, e)?;
        let pred = forward(p.net, w, x, None)?;
        nlls.push(nll_gaussian(pred, y, obs_log_var)?);
        fs.push(constraints_for_weights(p.constraints, p.net, w, None)?);
    }
    let nll = mean_of(&nlls)?;
    let ef = average_constraints(&fs, p.constraints.len())?;
    let kl_term = match (penalty, kl) {
        (Penalty::Cocp(_), _) | (_, KlMethod::Mc { .. }) => {
            kl_monte_carlo(mu, log_var, p.prior, eps)?
        }
        (_, KlMethod::ClosedForm) => kl_closed_form(mu, log_var, p.prior)?,
    };
    let base = kl_term.add(&nll)?;
    let loss = apply_penalty(base, &ef, p, penalty)?;
    Ok(Terms {
        loss,
        nll,
        kl: Some(kl_term),
        ef,
    })
}

/// MC-dropout loss: mean NLL over masks, L2 decay and the soft penalty.
pub fn dropout_objective<'t>(
    p: &Problem<'_>,
    weights: Var<'t>,
    obs_log_var: Var<'t>,
    masks: &[DropoutMasks],
    lambda: f64,
    weight_decay: f64,
) -> Result<Terms<'t>> {
    if masks.is_empty() {
        return Err(Error::Contract("objective needs K >= 1 masks".into()));
    }
    let tape = weights.tape();
    let x = tape.constant(p.x.clone());
    let y = tape.constant(p.y.clone());
    let mut nlls = Vec::with_capacity(masks.len());
    let mut fs = Vec::with_capacity(masks.len());
    for m in masks {
        let pred = forward(p.net, weights, x, Some(m))?;
        nlls.push(nll_gaussian(pred, y, obs_log_var)?);
        fs.push(constraints_for_weights(
            p.constraints,
            p.net,
            weights,
            Some(m),
        )?);
    }
    let nll = mean_of(&nlls)?;
    let ef = average_constraints(&fs, p.constraints.len())?;
    let base = nll.add(&weights.square().sum().scale(weight_decay))?;
    let loss = apply_penalty(base, &ef, p, Penalty::Soft { lambda })?;
    Ok(Terms {
        loss,
        nll,
        kl: None,
        ef,
    })
}

/// Negative unnormalized log posterior for one particle:
/// `NLL - log P(w) - lambda sum_i w_i f_i`.
pub fn particle_objective<'t>(
    p: &Problem<'_>,
    weights: Var<'t>,
    obs_log_var: Var<'t>,
    lambda: f64,
) -> Result<Terms<'t>> {
    let tape = weights.tape();
    let x = tape.constant(p.x.clone());
    let y = tape.constant(p.y.clone());
    let pred = forward(p.net, weights, x, None)?;
    let nll = nll_gaussian(pred, y, obs_log_var)?;
    let ef = constraints_for_weights(p.constraints, p.net, weights, None)?;
    let base = nll.sub(&log_prior(weights, p.prior))?;
    let loss = apply_penalty(base, &ef, p, Penalty::Soft { lambda })?;
    Ok(Terms {
        loss,
        nll,
        kl: None,
        ef,
    })
}
