use serde::{Deserialize, Serialize};

use super::optim::OptimizerKind;
use crate::bayes::{GaussianPrior, KlMethod};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Unconstrained,
    Soft,
    Hard,
    Cocp,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Bbb,
    Svgd,
    Dropout,
}

/// Augmented-Lagrangian schedule for hard mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlmSchedule {
    /// Steps between dual updates.
    pub dual_update_every: usize,
    /// Multiplicative growth of `rho` per update.
    pub growth: f64,
    pub s_init: f64,
    pub rho_init: f64,
    /// Fresh MC draws used to estimate `Ef` at update time.
    pub dual_samples: usize,
}

impl Default for AlmSchedule {
    fn default() -> Self {
        Self {
            dual_update_every: 1,
            growth: 1.005,
            s_init: 1.0,
            rho_init: 1.0,
            dual_samples: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub backend: Backend,
    /// Soft-mode penalty weight.
    pub lambda: f64,
    /// Per-constraint COCP weights; empty means all ones.
    pub c_weights: Vec<f64>,
    /// Full-batch passes over the training data.
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// MC samples (weight draws or dropout masks) per step.
    pub mc_samples: usize,
    pub seed: u64,
    pub alm: AlmSchedule,
    pub kl: KlMethod,
    pub prior: GaussianPrior,
    /// SVGD particle count.
    pub particles: usize,
    /// L2 weight decay for the dropout backend.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Unconstrained,
            backend: Backend::Bbb,
            lambda: 10.0,
            c_weights: Vec::new(),
            epochs: 1000,
            learning_rate: 1e-2,
            optimizer: OptimizerKind::Adam,
            mc_samples: 8,
            seed: 0,
            alm: AlmSchedule::default(),
            kl: KlMethod::ClosedForm,
            prior: GaussianPrior::default(),
            particles: 20,
            weight_decay: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be >= 0", self.lambda));
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.mc_samples < 1 {
            return bad("mc_samples must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be >= 0", self.learning_rate));
        }
        if self.c_weights.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
            return bad("c_weights must be >= 0".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0".into());
        }
        let a = &self.alm;
        if !(a.growth >= 1.0 && a.growth.is_finite()) {
            return bad(format!("alm.growth {} must be >= 1", a.growth));
        }
        if !(a.rho_init > 0.0 && a.rho_init.is_finite()) {
            return bad("alm.rho_init must be > 0".into());
        }
        if !(a.s_init >= 0.0 && a.s_init.is_finite()) {
            return bad("alm.s_init must be >= 0".into());
        }
        if a.dual_update_every < 1 || a.dual_samples < 1 {
            return bad("alm.dual_update_every and alm.dual_samples must be >= 1".into());
        }
        if let KlMethod::Mc { samples } = self.kl {
            if samples < 1 {
                return bad("kl.samples must be >= 1".into());
            }
        }
        self.prior.validate()?;
        match (self.backend, self.mode) {
            (Backend::Bbb, _) => {}
            (Backend::Svgd | Backend::Dropout, Mode::Unconstrained | Mode::Soft) => {}
            (b, m) => return bad(format!("mode {m:?} is not available with backend {b:?}")),
        }
        if self.backend == Backend::Svgd && self.particles < 2 {
            return Err(Error::Contract(format!(
                "SVGD needs at least 2 particles, got {}",
                self.particles
            )));
        }
        Ok(())
    }

    /// COCP weights padded to `m` constraints.
    pub fn cocp_weights(&self, m: usize) -> Result<Vec<f64>> {
        if self.c_weights.is_empty() {
            return Ok(vec![1.0; m]);
        }
        if self.c_weights.len() != m {
            return Err(Error::Config(format!(
                "{} c_weights for {m} constraints",
                self.c_weights.len()
            )));
        }
        Ok(self.c_weights.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_combinations() {
        let ok = TrainConfig::default();
        ok.validate().unwrap();
        let cases = [
            TrainConfig {
                lambda: -1.0,
                ..ok.clone()
            },
            TrainConfig {
                epochs: 0,
                ..ok.clone()
            },
            TrainConfig {
                mc_samples: 0,
                ..ok.clone()
            },
            TrainConfig {
                mode: Mode::Hard,
                backend: Backend::Svgd,
                ..ok.clone()
            },
            TrainConfig {
                mode: Mode::Hard,
                backend: Backend::Dropout,
                ..ok.clone()
            },
            TrainConfig {
                mode: Mode::Cocp,
                backend: Backend::Svgd,
                ..ok.clone()
            },
            TrainConfig {
                alm: AlmSchedule {
                    growth: 0.99,
                    ..Default::default()
                },
                ..ok.clone()
            },
            TrainConfig {
                backend: Backend::Svgd,
                particles: 1,
                ..ok.clone()
            },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epochz": 3}"#).is_err());
        let c: TrainConfig =
            serde_json::from_str(r#"{"mode": "hard", "alm": {"growth": 1.01}}"#).unwrap();
        assert_eq!(c.mode, Mode::Hard);
        assert_eq!(c.alm.dual_samples, 32);
    }
}
