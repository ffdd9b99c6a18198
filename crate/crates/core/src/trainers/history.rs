use serde::{Deserialize, Serialize};

use super::alm::DualState;
use crate::bayes::Posterior;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub nll: f64,
    /// KL to the prior; absent for backends without a variational family.
    pub kl: Option<f64>,
    pub ef: Vec<f64>,
    pub s: Vec<f64>,
    pub rho: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub posterior: Posterior,
    pub history: Vec<EpochRecord>,
    /// Final multipliers (hard mode).
    pub dual: Option<DualState>,
    /// Final `Ef` estimate used for the complementarity report (hard mode).
    pub final_ef: Option<Vec<f64>>,
    /// Per constraint: `Ef_i >= -tol` or `s_i > 0` at the last iterate.
    pub complementarity: Option<Vec<bool>>,
}
