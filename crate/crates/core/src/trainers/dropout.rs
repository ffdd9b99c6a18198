use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::config::{Backend, Mode, TrainConfig};
use super::history::{EpochRecord, TrainOutcome};
use super::objective::{dropout_objective, Problem};
use super::optim::Optimizer;
use super::{check_inputs, gradient_or_zero, numerical_abort};
use crate::autodiff::{Tape, Tensor};
use crate::bayes::{
    init_weights, DropoutMasks, DropoutParams, NetworkMode, NetworkSpec, Posterior,
};
use crate::constraints::ConstraintSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Maximum-likelihood training through random dropout masks, with L2 decay
/// and an optional soft constraint penalty.
pub fn train_dropout(
    config: &TrainConfig,
    net: &NetworkSpec,
    data: &Dataset,
    constraints: &[ConstraintSpec],
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.backend != Backend::Dropout {
        return Err(Error::Config(format!(
            "train_dropout called with backend {:?}",
            config.backend
        )));
    }
    if net.mode != NetworkMode::Dropout {
        return Err(Error::Config(
            "dropout backend needs a network in dropout mode".into(),
        ));
    }
    check_inputs(net, data, constraints)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = init_weights(net, &mut rng);
    let mut obs = net.obs_log_var_init;
    let lambda = match config.mode {
        Mode::Soft => config.lambda,
        _ => 0.0,
    };
    let problem = Problem {
        net,
        x: &data.x,
        y: &data.y,
        constraints,
        prior: &config.prior,
    };
    let mut opt_w = Optimizer::new(config.optimizer, config.learning_rate, weights.len());
    let mut opt_obs = Optimizer::new(config.optimizer, config.learning_rate, 1);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let masks: Vec<DropoutMasks> = (0..config.mc_samples)
            .map(|_| DropoutMasks::draw(net, &mut rng))
            .collect();
        let tape = Tape::new();
        let w = tape.leaf(weights.clone());
        let olv = if net.learn_obs_noise {
            tape.leaf(Tensor::scalar(obs))
        } else {
            tape.constant(Tensor::scalar(obs))
        };
        let terms = dropout_objective(&problem, w, olv, &masks, lambda, config.weight_decay)?;
        let record = EpochRecord {
            epoch,
            loss: terms.loss.item(),
            nll: terms.nll.item(),
            kl: None,
            ef: terms.ef_values(),
            s: Vec::new(),
            rho: Vec::new(),
            z: Vec::new(),
        };
        let grads = tape.backward(terms.loss)?;
        let g_w = gradient_or_zero(&grads, &w);
        let g_obs = gradient_or_zero(&grads, &olv);
        if !record.loss.is_finite() || !g_w.all_finite() || !g_obs.all_finite() {
            return Err(numerical_abort(
                epoch,
                "non-finite loss or gradient",
                json!({ "record": record, "weights": weights, "obs_log_var": obs }),
            ));
        }
        opt_w.step(weights.data_mut(), g_w.data());
        if net.learn_obs_noise {
            let mut o = [obs];
            opt_obs.step(&mut o, g_obs.data());
            obs = o[0];
        }
        history.push(record);
    }
    Ok(TrainOutcome {
        posterior: Posterior::Dropout(DropoutParams {
            weights,
            obs_log_var: obs,
        }),
        history,
        dual: None,
        final_ef: None,
        complementarity: None,
    })
}
