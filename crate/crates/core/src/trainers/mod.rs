//! Soft-penalty, augmented-Lagrangian and COCP training over the
//! Bayes-by-backprop, SVGD and MC-dropout backends.

mod alm;
mod bbb;
mod config;
mod dropout;
mod history;
mod objective;
mod optim;
mod svgd;

pub use alm::{complementarity, compute_z, dual_update, phi, phi_derivative, phi_var, DualState};
pub use bbb::{expected_constraints, train_bbb, train_bbb_from};
pub use config::{AlmSchedule, Backend, Mode, TrainConfig};
pub use dropout::train_dropout;
pub use history::{EpochRecord, TrainOutcome};
pub use objective::{
    bbb_objective, dropout_objective, particle_objective, Penalty, Problem, Terms,
};
pub use optim::{Optimizer, OptimizerKind};
pub use svgd::{median_bandwidth, svgd_direction, svgd_step, train_svgd};

use crate::autodiff::{Gradients, Tensor, Var};
use crate::bayes::NetworkSpec;
use crate::constraints::ConstraintSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Dispatches on `config.backend`.
pub fn train(
    config: &TrainConfig,
    net: &NetworkSpec,
    data: &Dataset,
    constraints: &[ConstraintSpec],
) -> Result<TrainOutcome> {
    match config.backend {
        Backend::Bbb => train_bbb(config, net, data, constraints),
        Backend::Svgd => train_svgd(config, net, data, constraints),
        Backend::Dropout => train_dropout(config, net, data, constraints),
    }
}

fn check_inputs(net: &NetworkSpec, data: &Dataset, constraints: &[ConstraintSpec]) -> Result<()> {
    net.validate()?;
    if data.x.cols() != net.input_dim() {
        return Err(Error::Shape(format!(
            "data has {} inputs, network expects {}",
            data.x.cols(),
            net.input_dim()
        )));
    }
    if data.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    if net.output_dim() != 1 {
        return Err(Error::Shape(
            "training supports single-output networks".into(),
        ));
    }
    if !constraints.is_empty() && net.input_dim() != 1 {
        return Err(Error::Shape(
            "constraint grids need a single-input network".into(),
        ));
    }
    for c in constraints {
        c.validate()?;
    }
    Ok(())
}

/// Leaves the tape never reached get an explicit zero step.
fn gradient_or_zero(grads: &Gradients, var: &Var<'_>) -> Tensor {
    grads
        .get(var)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(&var.shape()))
}

fn numerical_abort(epoch: usize, message: &str, state: serde_json::Value) -> Error {
    Error::NumericalAbort {
        epoch,
        message: message.to_string(),
        dump: serde_json::to_string_pretty(&state)
            .unwrap_or_else(|e| format!("unserializable state: {e}")),
    }
}
