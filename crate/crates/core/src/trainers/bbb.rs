use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::alm::{complementarity, dual_update, DualState};
use super::config::{Backend, Mode, TrainConfig};
use super::history::{EpochRecord, TrainOutcome};
use super::objective::{bbb_objective, Penalty, Problem};
use super::optim::Optimizer;
use super::{check_inputs, gradient_or_zero, numerical_abort};
use crate::autodiff::{Tape, Tensor};
use crate::bayes::{standard_normal, NetworkSpec, Posterior, VariationalParams};
use crate::constraints::{constraint_values, ConstraintSpec, TOL_VIOLATION};
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Plain-number `E_q[f_i]` for every constraint from `k` fresh draws.
pub fn expected_constraints<R: rand::Rng + ?Sized>(
    params: &VariationalParams,
    net: &NetworkSpec,
    constraints: &[ConstraintSpec],
    k: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; constraints.len()];
    for _ in 0..k {
        let eps = standard_normal(params.mu.len(), rng);
        let w = crate::bayes::weights_from_eps(params, eps).weights;
        for (a, f) in acc
            .iter_mut()
            .zip(constraint_values(constraints, net, &w, None)?)
        {
            *a += f;
        }
    }
    Ok(acc.into_iter().map(|a| a / k as f64).collect())
}

/// Bayes-by-backprop training in unconstrained, soft, hard or COCP mode.
pub fn train_bbb(
    config: &TrainConfig,
    net: &NetworkSpec,
    data: &Dataset,
    constraints: &[ConstraintSpec],
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.backend != Backend::Bbb {
        return Err(Error::Config(format!(
            "train_bbb called with backend {:?}",
            config.backend
        )));
    }
    check_inputs(net, data, constraints)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = VariationalParams::init(net, &mut rng);
    train_bbb_from(config, net, data, constraints, &mut params, &mut rng)
}

/// [`train_bbb`] starting from given parameters and rng state.
pub fn train_bbb_from(
    config: &TrainConfig,
    net: &NetworkSpec,
    data: &Dataset,
    constraints: &[ConstraintSpec],
    params: &mut VariationalParams,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    params.validate(net)?;
    let m = constraints.len();
    let n = net.num_params();
    let cocp = config.cocp_weights(m)?;
    let mut dual = match config.mode {
        Mode::Hard => Some(DualState::new(m, config.alm.s_init, config.alm.rho_init)?),
        _ => None,
    };
    let problem = Problem {
        net,
        x: &data.x,
        y: &data.y,
        constraints,
        prior: &config.prior,
    };
    let lr = config.learning_rate;
    let mut opt_mu = Optimizer::new(config.optimizer, lr, n);
    let mut opt_lv = Optimizer::new(config.optimizer, lr, n);
    let mut opt_obs = Optimizer::new(config.optimizer, lr, 1);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let eps: Vec<Tensor> = (0..config.mc_samples)
            .map(|_| standard_normal(n, rng))
            .collect();
        let tape = Tape::new();
        let mu = tape.leaf(params.mu.clone());
        let lv = tape.leaf(params.log_var.clone());
        let olv = if net.learn_obs_noise {
            tape.leaf(Tensor::scalar(params.obs_log_var))
        } else {
            tape.constant(Tensor::scalar(params.obs_log_var))
        };
        let penalty = match (config.mode, &dual) {
            (Mode::Soft, _) => Penalty::Soft {
                lambda: config.lambda,
            },
            (Mode::Hard, Some(d)) => Penalty::Hard(d),
            (Mode::Cocp, _) => Penalty::Cocp(&cocp),
            _ => Penalty::None,
        };
        let terms = bbb_objective(&problem, mu, lv, olv, &eps, penalty, config.kl)?;
        let mut record = EpochRecord {
            epoch,
            loss: terms.loss.item(),
            nll: terms.nll.item(),
            kl: terms.kl.map(|k| k.item()),
            ef: terms.ef_values(),
            s: Vec::new(),
            rho: Vec::new(),
            z: Vec::new(),
        };
        let grads = tape.backward(terms.loss)?;
        let g_mu = gradient_or_zero(&grads, &mu);
        let g_lv = gradient_or_zero(&grads, &lv);
        let g_obs = gradient_or_zero(&grads, &olv);
        if !record.loss.is_finite()
            || !g_mu.all_finite()
            || !g_lv.all_finite()
            || !g_obs.all_finite()
        {
            return Err(numerical_abort(
                epoch,
                "non-finite loss or gradient",
                json!({
                    "record": record,
                    "params": &*params,
                    "dual": dual,
                }),
            ));
        }
        opt_mu.step(params.mu.data_mut(), g_mu.data());
        opt_lv.step(params.log_var.data_mut(), g_lv.data());
        if net.learn_obs_noise {
            let mut o = [params.obs_log_var];
            opt_obs.step(&mut o, g_obs.data());
            params.obs_log_var = o[0];
        }
        if let Some(d) = dual.as_mut() {
            if epoch % config.alm.dual_update_every == 0 {
                let ef =
                    expected_constraints(params, net, constraints, config.alm.dual_samples, rng)?;
                *d = dual_update(d, &ef, config.alm.growth)?;
            }
            record.s = d.s.clone();
            record.rho = d.rho.clone();
            record.z = d.z.clone();
        }
        history.push(record);
    }

    let (final_ef, kkt) = match &dual {
        Some(d) => {
            let ef = expected_constraints(params, net, constraints, config.alm.dual_samples, rng)?;
            let k = complementarity(d, &ef, TOL_VIOLATION);
            (Some(ef), Some(k))
        }
        None => (None, None),
    };
    Ok(TrainOutcome {
        posterior: Posterior::Variational(params.clone()),
        history,
        dual,
        final_ef,
        complementarity: kkt,
    })
}
