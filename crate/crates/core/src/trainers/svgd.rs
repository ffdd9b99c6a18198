use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::config::{Backend, Mode, TrainConfig};
use super::history::{EpochRecord, TrainOutcome};
use super::objective::{particle_objective, Problem};
use super::optim::Optimizer;
use super::{check_inputs, gradient_or_zero, numerical_abort};
use crate::autodiff::{Tape, Tensor};
use crate::bayes::{init_weights, NetworkSpec, ParticleSet, Posterior};
use crate::constraints::ConstraintSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median-heuristic bandwidth `med^2 / ln(n + 1)` over pairwise distances.
pub fn median_bandwidth(particles: &[Vec<f64>]) -> f64 {
    let n = particles.len();
    let mut d: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(&particles[i], &particles[j]).sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let med = if d.is_empty() {
        0.0
    } else if d.len() % 2 == 1 {
        d[d.len() / 2]
    } else {
        0.5 * (d[d.len() / 2 - 1] + d[d.len() / 2])
    };
    let h = med * med / ((n + 1) as f64).ln();
    // coincident particles: any positive bandwidth gives zero repulsion
    if h > 0.0 {
        h
    } else {
        1.0
    }
}

/// Stein direction for every particle:
/// `phi(w_i) = 1/n sum_j [k(w_j, w_i) grad_j + grad_{w_j} k(w_j, w_i)]`
/// with `k(a, b) = exp(-|a - b|^2 / h)`. Returns the directions and `h`.
pub fn svgd_direction(
    particles: &[Vec<f64>],
    grad_log_p: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, f64)> {
    let n = particles.len();
    if n < 2 {
        return Err(Error::Contract(format!(
            "SVGD needs at least 2 particles, got {n}"
        )));
    }
    if grad_log_p.len() != n {
        return Err(Error::Shape("one gradient per particle required".into()));
    }
    let dim = particles[0].len();
    let h = median_bandwidth(particles);
    let mut phi = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for j in 0..n {
            let k = (-sq_dist(&particles[j], &particles[i]) / h).exp();
            let c = 2.0 * k / h;
            for ((p, g), (wi, wj)) in phi[i]
                .iter_mut()
                .zip(&grad_log_p[j])
                .zip(particles[i].iter().zip(&particles[j]))
            {
                *p += k * g + c * (wi - wj);
            }
        }
        for p in &mut phi[i] {
            *p /= n as f64;
        }
    }
    Ok((phi, h))
}

/// Moves every particle along its Stein direction; `opt` descends, so it is
/// fed the negated direction. Returns the bandwidth used.
pub fn svgd_step(
    particles: &mut [Vec<f64>],
    grad_log_p: &[Vec<f64>],
    opt: &mut Optimizer,
) -> Result<f64> {
    let (phi, h) = svgd_direction(particles, grad_log_p)?;
    let mut flat: Vec<f64> = particles.iter().flatten().copied().collect();
    let step: Vec<f64> = phi.iter().flatten().map(|v| -v).collect();
    opt.step(&mut flat, &step);
    let dim = particles[0].len();
    for (p, chunk) in particles.iter_mut().zip(flat.chunks(dim)) {
        p.copy_from_slice(chunk);
    }
    Ok(h)
}

/// Particle training toward the (optionally constraint-penalized)
/// unnormalized posterior. The observation noise stays at its initial value.
pub fn train_svgd(
    config: &TrainConfig,
    net: &NetworkSpec,
    data: &Dataset,
    constraints: &[ConstraintSpec],
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.backend != Backend::Svgd {
        return Err(Error::Config(format!(
            "train_svgd called with backend {:?}",
            config.backend
        )));
    }
    check_inputs(net, data, constraints)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut particles: Vec<Vec<f64>> = (0..config.particles)
        .map(|_| init_weights(net, &mut rng).into_data())
        .collect();
    let lambda = match config.mode {
        Mode::Soft => config.lambda,
        _ => 0.0,
    };
    let obs = net.obs_log_var_init;
    let problem = Problem {
        net,
        x: &data.x,
        y: &data.y,
        constraints,
        prior: &config.prior,
    };
    let dim = net.num_params();
    let mut opt = Optimizer::new(
        config.optimizer,
        config.learning_rate,
        dim * particles.len(),
    );
    let mut history = Vec::with_capacity(config.epochs);
    let mut bandwidth = 1.0;
    for epoch in 1..=config.epochs {
        let mut grads = Vec::with_capacity(particles.len());
        let (mut loss, mut nll) = (0.0, 0.0);
        let mut ef = vec![0.0; constraints.len()];
        for p in &particles {
            let tape = Tape::new();
            let w = tape.leaf(Tensor::vector(p.clone())?);
            let olv = tape.constant(Tensor::scalar(obs));
            let terms = particle_objective(&problem, w, olv, lambda)?;
            loss += terms.loss.item();
            nll += terms.nll.item();
            for (a, v) in ef.iter_mut().zip(terms.ef_values()) {
                *a += v;
            }
            let g = gradient_or_zero(&tape.backward(terms.loss)?, &w);
            grads.push(g.data().iter().map(|v| -v).collect::<Vec<f64>>());
        }
        let k = particles.len() as f64;
        let record = EpochRecord {
            epoch,
            loss: loss / k,
            nll: nll / k,
            kl: None,
            ef: ef.into_iter().map(|v| v / k).collect(),
            s: Vec::new(),
            rho: Vec::new(),
            z: Vec::new(),
        };
        if !record.loss.is_finite() || grads.iter().flatten().any(|v| !v.is_finite()) {
            return Err(numerical_abort(
                epoch,
                "non-finite loss or gradient",
                json!({ "record": record, "particles": particles }),
            ));
        }
        bandwidth = svgd_step(&mut particles, &grads, &mut opt)?;
        history.push(record);
    }
    let set = ParticleSet {
        particles: particles
            .into_iter()
            .map(Tensor::vector)
            .collect::<Result<_>>()?,
        bandwidth,
        obs_log_var: obs,
    };
    Ok(TrainOutcome {
        posterior: Posterior::Particles(set),
        history,
        dual: None,
        final_ef: None,
        complementarity: None,
    })
}
