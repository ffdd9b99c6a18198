use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{forward_values, DropoutMasks, NetworkMode, NetworkSpec};
use super::variational::{sample_weights, VariationalParams};
use crate::autodiff::Tensor;
use crate::error::{shape_err, Error, Result};

/// Particle approximation of the weight posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    /// One flat weight vector per particle.
    pub particles: Vec<Tensor>,
    /// Kernel bandwidth used by the most recent transport step.
    pub bandwidth: f64,
    pub obs_log_var: f64,
}

impl ParticleSet {
    pub fn validate(&self, net: &NetworkSpec) -> Result<()> {
        if self.particles.len() < 2 {
            return Err(Error::Contract(format!(
                "a particle set needs at least 2 particles, got {}",
                self.particles.len()
            )));
        }
        for p in &self.particles {
            if p.shape() != [net.num_params()] {
                return shape_err(format!(
                    "particle shape {:?} does not fit {} weights",
                    p.shape(),
                    net.num_params()
                ));
            }
        }
        Ok(())
    }
}

/// Point estimate of the weights used with MC dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutParams {
    pub weights: Tensor,
    pub obs_log_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Posterior {
    Variational(VariationalParams),
    Particles(ParticleSet),
    Dropout(DropoutParams),
}

impl Posterior {
    pub fn validate(&self, net: &NetworkSpec) -> Result<()> {
        match self {
            Posterior::Variational(p) => p.validate(net),
            Posterior::Particles(p) => p.validate(net),
            Posterior::Dropout(p) => {
                if net.mode != NetworkMode::Dropout {
                    return Err(Error::Config(
                        "dropout posterior needs a network in dropout mode".into(),
                    ));
                }
                if p.weights.shape() != [net.num_params()] {
                    return shape_err("dropout weights do not fit the network");
                }
                Ok(())
            }
        }
    }

    pub fn obs_log_var(&self) -> f64 {
        match self {
            Posterior::Variational(p) => p.obs_log_var,
            Posterior::Particles(p) => p.obs_log_var,
            Posterior::Dropout(p) => p.obs_log_var,
        }
    }
}

/// MC ensemble of network outputs for a batch of inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    /// `samples[k][i]`: output of draw `k` at point `i`.
    pub samples: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Per-point population standard deviation (epistemic).
    pub std: Vec<f64>,
}

impl PredictiveSummary {
    pub fn from_samples(samples: Vec<Vec<f64>>) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::Contract(format!(
                "ensemble needs >= 2 members, got {n}"
            )));
        }
        let points = samples[0].len();
        if samples.iter().any(|s| s.len() != points) {
            return shape_err("ragged ensemble");
        }
        let mut mean = vec![0.0; points];
        for s in &samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; points];
        for s in &samples {
            for ((acc, v), m) in var.iter_mut().zip(s).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n as f64).sqrt()).collect();
        Ok(Self { samples, mean, std })
    }

    pub fn ensemble_size(&self) -> usize {
        self.samples.len()
    }

    pub fn points(&self) -> usize {
        self.mean.len()
    }
}

/// `n` forward passes under posterior draws. Particle posteriors use every
/// particle once and ignore `n`.
pub fn predict<R: Rng + ?Sized>(
    posterior: &Posterior,
    net: &NetworkSpec,
    x: &Tensor,
    n: usize,
    rng: &mut R,
) -> Result<PredictiveSummary> {
    posterior.validate(net)?;
    let column = |t: Tensor| -> Result<Vec<f64>> {
        if t.cols() != 1 {
            return shape_err("predict supports single-output networks");
        }
        Ok(t.into_data())
    };
    let samples = match posterior {
        Posterior::Variational(params) => {
            if n < 2 {
                return Err(Error::Contract(format!("predict needs N >= 2, got {n}")));
            }
            (0..n)
                .map(|_| {
                    let w = sample_weights(params, rng);
                    column(forward_values(net, &w.weights, x, None)?)
                })
                .collect::<Result<Vec<_>>>()?
        }
        Posterior::Particles(set) => set
            .particles
            .iter()
            .map(|w| column(forward_values(net, w, x, None)?))
            .collect::<Result<Vec<_>>>()?,
        Posterior::Dropout(p) => {
            if n < 2 {
                return Err(Error::Contract(format!("predict needs N >= 2, got {n}")));
            }
            (0..n)
                .map(|_| {
                    let masks = DropoutMasks::draw(net, rng);
                    column(forward_values(net, &p.weights, x, Some(&masks))?)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    PredictiveSummary::from_samples(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::{Activation, VariationalParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_point_ensemble() {
        let s = PredictiveSummary::from_samples(vec![vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert_eq!(s.std, vec![1.0]);
        assert!(PredictiveSummary::from_samples(vec![vec![1.0]]).is_err());
    }

    #[test]
    fn degenerate_posterior_has_zero_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = NetworkSpec::mlp(&[1, 6, 1], Activation::Relu);
        let mut p = VariationalParams::init(&net, &mut rng);
        p.log_var = Tensor::filled(&[net.num_params()], (1e-12f64).powi(2).ln());
        let x = Tensor::column(vec![-0.5, 0.0, 0.5]).unwrap();
        let s = predict(&Posterior::Variational(p), &net, &x, 20, &mut rng).unwrap();
        assert!(s.std.iter().all(|&v| (0.0..1e-10).contains(&v)));
    }

    #[test]
    fn seeded_prediction_is_reproducible() {
        let net = NetworkSpec::mlp(&[1, 6, 1], Activation::Relu);
        let p = VariationalParams::init(&net, &mut ChaCha8Rng::seed_from_u64(4));
        let post = Posterior::Variational(p);
        let x = Tensor::column(vec![0.1, 0.2]).unwrap();
        let a = predict(&post, &net, &x, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = predict(&post, &net, &x, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn linear_gaussian_mean_matches_analytic() {
        // y = w x + b with independent Gaussian w, b: E[y] = mu_w x + mu_b,
        // Var[y] = s_w^2 x^2 + s_b^2.
        let net = NetworkSpec::mlp(&[1, 1], Activation::Identity);
        let p = VariationalParams {
            mu: Tensor::vector(vec![1.5, -0.4]).unwrap(),
            log_var: Tensor::vector(vec![(0.3f64).ln(), (0.2f64).ln()]).unwrap(),
            obs_log_var: 0.0,
        };
        let xs = vec![-1.0, 0.0, 2.0];
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = predict(
            &Posterior::Variational(p),
            &net,
            &Tensor::column(xs.clone()).unwrap(),
            n,
            &mut rng,
        )
        .unwrap();
        for (i, x) in xs.iter().enumerate() {
            let mean = 1.5 * x - 0.4;
            let sd = (0.3 * x * x + 0.2f64).sqrt();
            let se = sd / (n as f64).sqrt();
            assert!((s.mean[i] - mean).abs() <= 3.0 * se, "point {i}");
        }
    }

    #[test]
    fn particle_prediction_uses_each_particle() {
        let net = NetworkSpec::mlp(&[1, 1], Activation::Identity);
        let set = ParticleSet {
            particles: vec![
                Tensor::vector(vec![0.0, 1.0]).unwrap(),
                Tensor::vector(vec![0.0, 3.0]).unwrap(),
            ],
            bandwidth: 1.0,
            obs_log_var: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = predict(
            &Posterior::Particles(set),
            &net,
            &Tensor::column(vec![5.0]).unwrap(),
            0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert_eq!(s.std, vec![1.0]);
    }
}
