use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{gradient_check, GradCheckReport, Tape, Tensor, Var};
use crate::bayes::{
    forward, standard_normal, Activation, GaussianPrior, KlMethod, NetworkSpec, VariationalParams,
};
use crate::data::{generate, SimSpec};
use crate::error::Result;
use crate::trainers::{bbb_objective, phi_derivative, phi_var, DualState, Penalty, Problem};

/// Step for central differences.
const STEP: f64 = 1e-5;
/// Denominator floor of the relative error.
const FLOOR: f64 = 1e-8;
pub const TOL_ELEMENTARY: f64 = 1e-5;
pub const TOL_COMPOSITE: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Added to every analytic gradient; a correct checker must then fail.
    pub corrupt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckEntry {
    pub name: String,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub pass: bool,
}

impl GradcheckEntry {
    fn new(name: impl Into<String>, tolerance: f64, r: GradCheckReport) -> Self {
        Self {
            name: name.into(),
            tolerance,
            max_rel_error: r.max_rel_error,
            worst_index: r.worst_index,
            analytic: r.analytic,
            numeric: r.numeric,
            checked: r.checked,
            skipped_kinks: r.skipped_kinks,
            pass: r.checked > 0 && r.max_rel_error <= tolerance,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{:<22} {} max_rel {:.3e} (tol {:.0e}) at [{}] analytic {:.6e} numeric {:.6e}, {} checked, {} kink skips",
            self.name,
            if self.pass { "ok  " } else { "FAIL" },
            self.max_rel_error,
            self.tolerance,
            self.worst_index,
            self.analytic,
            self.numeric,
            self.checked,
            self.skipped_kinks
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    /// Entry with the largest error relative to its tolerance.
    pub fn worst(&self) -> Option<&GradcheckEntry> {
        self.entries.iter().max_by(|a, b| {
            (a.max_rel_error / a.tolerance).total_cmp(&(b.max_rel_error / b.tolerance))
        })
    }

    pub fn max_rel_error(&self, prefix: &str) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .expect("finite")
}

/// Moves values within `gap` of any kink location away from it.
fn off_kinks(t: Tensor, kinks: &[f64], gap: f64) -> Tensor {
    t.map(|v| {
        kinks
            .iter()
            .find(|&&k| (v - k).abs() < gap)
            .map_or(v, |&k| k + 2.0 * gap.copysign(v - k))
    })
}

type OpCase = for<'a> fn(&'a Tape, Var<'a>) -> Result<Var<'a>>;

fn elementary(rng: &mut ChaCha8Rng, corrupt: Option<f64>) -> Result<Vec<GradcheckEntry>> {
    let cases: Vec<(&str, OpCase, f64, f64)> = vec![
        ("exp", |_, x| Ok(x.exp().sum()), -2.0, 2.0),
        ("log", |_, x| Ok(x.log()?.sum()), 0.2, 3.0),
        ("square", |_, x| Ok(x.square().sum()), -2.0, 2.0),
        ("abs", |_, x| Ok(x.abs().sum()), -2.0, 2.0),
        ("relu", |_, x| Ok(x.relu().sum()), -2.0, 2.0),
        ("rbf", |_, x| Ok(x.rbf(&[0.3], &[0.7])?.sum()), -2.0, 2.0),
        ("min", |_, x| Ok(x.min_const(0.0).square().sum()), -2.0, 2.0),
        ("max", |_, x| Ok(x.max_const(0.0).square().sum()), -2.0, 2.0),
        (
            "clamp",
            |_, x| Ok(x.clamp(-0.5, 0.5)?.square().sum()),
            -2.0,
            2.0,
        ),
        ("mean", |_, x| x.square().mean(), -2.0, 2.0),
        (
            "mul_div",
            |t, x| {
                let c = t.constant(Tensor::filled(&[6], 1.7));
                c.div(&x.exp())?.add(&x.mul(&x.square())?).map(|v| v.sum())
            },
            -2.0,
            2.0,
        ),
        (
            "matmul",
            |t, x| {
                let b = t.constant(Tensor::new(
                    vec![3, 2],
                    vec![0.3, -0.2, 0.5, 0.9, -1.1, 0.4],
                )?);
                Ok(x.reshape(&[2, 3])?.matmul(&b)?.exp().sum())
            },
            -1.0,
            1.0,
        ),
    ];
    let mut out = Vec::new();
    for (name, f, lo, hi) in cases {
        let x = off_kinks(uniform(rng, &[6], lo, hi), &[0.0, -0.5, 0.5], 1e-3);
        let r = gradient_check(&x, STEP, FLOOR, corrupt, f)?;
        out.push(GradcheckEntry::new(format!("op:{name}"), TOL_ELEMENTARY, r));
    }
    Ok(out)
}

/// Squared error of random two-layer networks with respect to every weight.
fn networks(rng: &mut ChaCha8Rng, corrupt: Option<f64>) -> Result<Vec<GradcheckEntry>> {
    let nets = [
        ("relu", NetworkSpec::mlp(&[1, 8, 1], Activation::Relu)),
        ("relu2d", NetworkSpec::mlp(&[2, 6, 1], Activation::Relu)),
        ("rbf", NetworkSpec::mlp(&[1, 8, 1], Activation::rbf_unit())),
        (
            "rbf2d",
            NetworkSpec::mlp(
                &[2, 5, 1],
                Activation::Rbf {
                    centers: vec![-0.5, 0.0, 0.5, 1.0, 0.2],
                    widths: vec![0.8, 1.0, 1.2, 0.6, 2.0],
                },
            ),
        ),
    ];
    let mut out = Vec::new();
    for (name, net) in nets {
        let d = net.input_dim();
        let x = uniform(rng, &[10, d], -1.0, 1.0);
        let y = uniform(rng, &[10, 1], -1.0, 1.0);
        let w = uniform(rng, &[net.num_params()], -1.0, 1.0);
        let r = gradient_check(&w, STEP, FLOOR, corrupt, |t, w| {
            let pred = forward(&net, w, t.constant(x.clone()), None)?;
            Ok(pred.sub(&t.constant(y.clone()))?.square().sum())
        })?;
        out.push(GradcheckEntry::new(format!("net:{name}"), TOL_COMPOSITE, r));
    }
    Ok(out)
}

/// Full variational objective in each mode, gradient with respect to
/// `[mu, log_var, obs_log_var]`.
fn objectives(rng: &mut ChaCha8Rng, corrupt: Option<f64>) -> Result<Vec<GradcheckEntry>> {
    let sim = SimSpec {
        train_size: Some(12),
        grid_size: Some(25),
        ..SimSpec::sim2()
    };
    let data = generate(&sim, rng)?;
    let net = NetworkSpec::mlp(&[1, 8, 1], Activation::Relu);
    let mut params = VariationalParams::init(&net, rng);
    params.log_var = params.log_var.map(|v| v + 4.0);
    let np = net.num_params();
    let eps: Vec<Tensor> = (0..3).map(|_| standard_normal(np, rng)).collect();
    let prior = GaussianPrior::default();
    let mut theta = params.mu.data().to_vec();
    theta.extend_from_slice(params.log_var.data());
    theta.push(params.obs_log_var);
    let theta = Tensor::vector(theta)?;
    let dual = DualState {
        s: vec![1.0, 0.5, 2.0],
        rho: vec![5.0, 2.0, 10.0],
        z: vec![0.0; 3],
    };
    let c = [1.0, 1.0, 8.0];
    let p = Problem {
        net: &net,
        x: &data.train.x,
        y: &data.train.y,
        constraints: &data.constraints,
        prior: &prior,
    };
    let modes: [(&str, Penalty<'_>); 4] = [
        ("unconstrained", Penalty::None),
        ("soft", Penalty::Soft { lambda: 10.0 }),
        ("hard", Penalty::Hard(&dual)),
        ("cocp", Penalty::Cocp(&c)),
    ];
    let mut out = Vec::new();
    for (name, penalty) in modes {
        let r = gradient_check(&theta, STEP, FLOOR, corrupt, |_, th| {
            let mu = th.narrow(0, np)?;
            let lv = th.narrow(np, np)?;
            let olv = th.narrow(2 * np, 1)?.reshape(&[])?;
            Ok(bbb_objective(&p, mu, lv, olv, &eps, penalty, KlMethod::ClosedForm)?.loss)
        })?;
        out.push(GradcheckEntry::new(
            format!("mode:{name}"),
            TOL_COMPOSITE,
            r,
        ));
    }
    Ok(out)
}

/// `phi` just below and above its branch point `Ef = s / rho`, against both
/// central differences and the closed-form derivative.
fn phi_branches(corrupt: Option<f64>) -> Result<Vec<GradcheckEntry>> {
    let (s, rho) = (1.3, 5.0);
    let mut out = Vec::new();
    for (name, offset) in [("phi:below", -1e-6), ("phi:above", 1e-6)] {
        let ef = s / rho + offset;
        let x = Tensor::vector(vec![ef])?;
        let mut r = gradient_check(&x, 5e-7, 1e-12, corrupt, |_, v| {
            phi_var(v.reshape(&[])?, s, rho)
        })?;
        let closed = relative_error_floor(r.analytic, phi_derivative(ef, s, rho));
        r.max_rel_error = r.max_rel_error.max(closed);
        out.push(GradcheckEntry::new(name, TOL_COMPOSITE, r));
    }
    Ok(out)
}

fn relative_error_floor(a: f64, b: f64) -> f64 {
    crate::autodiff::relative_error(a, b, 1e-12)
}

/// Runs every gradient check. Deterministic in `opts.seed`.
pub fn gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut entries = elementary(&mut rng, opts.corrupt)?;
    entries.extend(networks(&mut rng, opts.corrupt)?);
    entries.extend(objectives(&mut rng, opts.corrupt)?);
    entries.extend(phi_branches(opts.corrupt)?);
    Ok(GradcheckReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass_and_corruption_fails() {
        let ok = gradcheck(&GradcheckOptions {
            seed: 3,
            corrupt: None,
        })
        .unwrap();
        for e in &ok.entries {
            println!("{}", e.line());
            assert!(e.pass, "{}", e.line());
        }
        let bad = gradcheck(&GradcheckOptions {
            seed: 3,
            corrupt: Some(1e-3),
        })
        .unwrap();
        assert!(!bad.passed());
        assert!(bad.worst().unwrap().max_rel_error > 1e-4);
    }
}
