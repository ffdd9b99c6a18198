//! Mean-field Gaussian Bayesian networks: layer specs, reparameterized
//! sampling, KL terms, Gaussian likelihood and MC prediction.

mod network;
mod predict;
mod variational;

pub use network::{
    default_obs_log_var, dropout_forward, forward, forward_values, forward_with_input_derivative,
    Activation, DropoutMasks, LayerSlots, LayerSpec, NetworkMode, NetworkSpec,
};
pub use predict::{predict, DropoutParams, ParticleSet, Posterior, PredictiveSummary};
pub use variational::{
    init_weights, kl_closed_form, kl_divergence, kl_monte_carlo, log_prior, log_q, nll_gaussian,
    reparameterize, sample_weights, standard_normal, weights_from_eps, GaussianPrior, KlMethod,
    VariationalParams, WeightSample, INIT_LOG_VAR,
};
