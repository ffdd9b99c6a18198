use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::network::NetworkSpec;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};

/// Log-variance every weight starts from (sigma ~ 0.05).
pub const INIT_LOG_VAR: f64 = -6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPrior {
    pub mean: f64,
    pub variance: f64,
}

impl Default for GaussianPrior {
    fn default() -> Self {
        Self {
            mean: 0.0,
            variance: 1.0,
        }
    }
}

impl GaussianPrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0) || !self.mean.is_finite() || !self.variance.is_finite() {
            return Err(Error::Config(format!(
                "prior variance must be positive and finite, got {}",
                self.variance
            )));
        }
        Ok(())
    }
}

/// Mean-field Gaussian posterior over the flat weight vector, plus the shared
/// observation log-variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub mu: Tensor,
    pub log_var: Tensor,
    pub obs_log_var: f64,
}

impl VariationalParams {
    /// `mu ~ N(0, 1/fan_in)` per layer, `log_var = INIT_LOG_VAR`.
    pub fn init<R: Rng + ?Sized>(net: &NetworkSpec, rng: &mut R) -> Self {
        let mu = init_weights(net, rng);
        let n = mu.len();
        Self {
            mu,
            log_var: Tensor::filled(&[n], INIT_LOG_VAR),
            obs_log_var: net.obs_log_var_init,
        }
    }

    pub fn validate(&self, net: &NetworkSpec) -> Result<()> {
        let p = net.num_params();
        if self.mu.shape() != [p] || self.log_var.shape() != [p] {
            return shape_err(format!(
                "variational parameters {:?}/{:?} do not fit a network with {p} weights",
                self.mu.shape(),
                self.log_var.shape()
            ));
        }
        if !self.mu.all_finite() || !self.log_var.all_finite() || !self.obs_log_var.is_finite() {
            return Err(Error::NonFinite("variational parameters".into()));
        }
        Ok(())
    }

    pub fn sigma(&self) -> Tensor {
        self.log_var.map(|lv| (0.5 * lv).exp())
    }
}

/// `N(0, 1/fan_in)` draws laid out like [`NetworkSpec::slots`].
pub fn init_weights<R: Rng + ?Sized>(net: &NetworkSpec, rng: &mut R) -> Tensor {
    let mut w = Vec::with_capacity(net.num_params());
    for layer in &net.layers {
        let normal = Normal::new(0.0, (1.0 / layer.fan_in as f64).sqrt()).expect("positive std");
        for _ in 0..layer.fan_in * layer.fan_out + layer.fan_out {
            w.push(normal.sample(rng));
        }
    }
    Tensor::from_raw(vec![w.len()], w)
}

/// A reparameterized draw `w = mu + sigma * eps` with its noise.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSample {
    pub weights: Tensor,
    pub eps: Tensor,
}

pub fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor {
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_raw(vec![n], v)
}

pub fn sample_weights<R: Rng + ?Sized>(params: &VariationalParams, rng: &mut R) -> WeightSample {
    let eps = standard_normal(params.mu.len(), rng);
    weights_from_eps(params, eps)
}

pub fn weights_from_eps(params: &VariationalParams, eps: Tensor) -> WeightSample {
    let w = params
        .mu
        .data()
        .iter()
        .zip(params.log_var.data())
        .zip(eps.data())
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();
    WeightSample {
        weights: Tensor::from_raw(params.mu.shape().to_vec(), w),
        eps,
    }
}

/// Tape version of the reparameterization; gradients reach `mu` and `log_var`.
pub fn reparameterize<'t>(mu: Var<'t>, log_var: Var<'t>, eps: &Tensor) -> Result<Var<'t>> {
    let e = mu.tape().constant(eps.clone());
    mu.add(&log_var.scale(0.5).exp().mul(&e)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KlMethod {
    #[default]
    ClosedForm,
    Mc {
        samples: usize,
    },
}

/// `sum 0.5 (s2/sp2 + (mu - mp)^2/sp2 - 1 - ln(s2/sp2))` over all weights.
pub fn kl_closed_form<'t>(mu: Var<'t>, log_var: Var<'t>, prior: &GaussianPrior) -> Result<Var<'t>> {
    let vp = prior.variance;
    let var_term = log_var.exp().scale(1.0 / vp);
    let mean_term = mu.add_scalar(-prior.mean).square().scale(1.0 / vp);
    let log_term = log_var.add_scalar(-vp.ln());
    Ok(var_term
        .add(&mean_term)?
        .sub(&log_term)?
        .add_scalar(-1.0)
        .sum()
        .scale(0.5))
}

/// `sum log q(w | mu, log_var)` for one weight draw.
pub fn log_q<'t>(w: Var<'t>, mu: Var<'t>, log_var: Var<'t>) -> Result<Var<'t>> {
    let quad = w.sub(&mu)?.square().mul(&log_var.neg().exp())?;
    let per = log_var.add(&quad)?.add_scalar((2.0 * PI).ln()).scale(-0.5);
    Ok(per.sum())
}

/// `sum log N(w; mean, variance)`.
pub fn log_prior<'t>(w: Var<'t>, prior: &GaussianPrior) -> Var<'t> {
    let vp = prior.variance;
    w.add_scalar(-prior.mean)
        .square()
        .scale(-0.5 / vp)
        .add_scalar(-0.5 * (2.0 * PI * vp).ln())
        .sum()
}

/// Monte-Carlo KL: mean over the supplied draws of `log q(w_k) - log p(w_k)`,
/// with `w_k` reparameterized from `eps_draws`.
pub fn kl_monte_carlo<'t>(
    mu: Var<'t>,
    log_var: Var<'t>,
    prior: &GaussianPrior,
    eps_draws: &[Tensor],
) -> Result<Var<'t>> {
    if eps_draws.is_empty() {
        return Err(Error::Contract("mc KL needs at least one sample".into()));
    }
    let mut acc: Option<Var<'t>> = None;
    for eps in eps_draws {
        let w = reparameterize(mu, log_var, eps)?;
        let term = log_q(w, mu, log_var)?.sub(&log_prior(w, prior))?;
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term)?,
        });
    }
    Ok(acc.expect("non-empty").scale(1.0 / eps_draws.len() as f64))
}

/// Scalar KL(q || prior) by the requested method.
pub fn kl_divergence<R: Rng + ?Sized>(
    params: &VariationalParams,
    prior: &GaussianPrior,
    method: KlMethod,
    rng: &mut R,
) -> Result<f64> {
    let tape = Tape::new();
    let mu = tape.constant(params.mu.clone());
    let lv = tape.constant(params.log_var.clone());
    let kl = match method {
        KlMethod::ClosedForm => kl_closed_form(mu, lv, prior)?,
        KlMethod::Mc { samples } => {
            if samples < 1 {
                return Err(Error::Contract("mc KL needs K >= 1".into()));
            }
            let draws: Vec<Tensor> = (0..samples)
                .map(|_| standard_normal(params.mu.len(), rng))
                .collect();
            kl_monte_carlo(mu, lv, prior, &draws)?
        }
    };
    Ok(kl.item())
}

/// Gaussian negative log-likelihood summed over points:
/// `0.5 ln(2 pi s2) + (y - yhat)^2 / (2 s2)`.
pub fn nll_gaussian<'t>(pred: Var<'t>, target: Var<'t>, obs_log_var: Var<'t>) -> Result<Var<'t>> {
    if pred.shape() != target.shape() {
        return shape_err(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        ));
    }
    let n = pred.value().len() as f64;
    let quad = pred
        .sub(&target)?
        .square()
        .sum()
        .mul(&obs_log_var.neg().exp())?
        .scale(0.5);
    let norm = obs_log_var.add_scalar((2.0 * PI).ln()).scale(0.5 * n);
    quad.add(&norm)
}
