use rand::Rng;

use super::spec::{ConstraintKind, ConstraintSpec, DerivativeMode, TOL_VIOLATION};
use crate::autodiff::{Tape, Tensor, Var};
use crate::bayes::{
    forward, forward_values, forward_with_input_derivative, predict, reparameterize,
    standard_normal, DropoutMasks, NetworkSpec, Posterior, VariationalParams,
};
use crate::error::{shape_err, Error, Result};

/// Per-position scores and which positions fall inside the constraint's
/// region. Positions are grid points for value rules, consecutive pairs for
/// monotone rules and consecutive triples for curvature rules.
pub struct PointScores<'t> {
    pub scores: Var<'t>,
    pub active: Vec<bool>,
}

fn column_const<'t>(tape: &'t Tape, v: Vec<f64>) -> Result<Var<'t>> {
    Ok(tape.constant(Tensor::column(v)?))
}

fn check_y(xs: &[f64], y: &Var<'_>) -> Result<()> {
    let shape = y.shape();
    if shape != [xs.len(), 1] {
        return shape_err(format!(
            "predictions {:?} do not match a {}-point grid",
            shape,
            xs.len()
        ));
    }
    Ok(())
}

fn first_differences<'t>(xs: &[f64], y: Var<'t>) -> Result<Var<'t>> {
    let n = xs.len();
    let inv_dx: Vec<f64> = xs.windows(2).map(|w| 1.0 / (w[1] - w[0])).collect();
    let hi = y.narrow(1, n - 1)?;
    let lo = y.narrow(0, n - 1)?;
    hi.sub(&lo)?.mul(&column_const(y.tape(), inv_dx)?)
}

/// Scores `min(0, s + m)` at every position, from predictions `y` (`n x 1`)
/// at grid `xs`.
pub fn point_scores<'t>(spec: &ConstraintSpec, xs: &[f64], y: Var<'t>) -> Result<PointScores<'t>> {
    check_y(xs, &y)?;
    let n = xs.len();
    if n < spec.kind.min_points() {
        return Err(Error::Contract(format!(
            "constraint '{}' needs >= {} grid points, got {n}",
            spec.name,
            spec.kind.min_points()
        )));
    }
    if spec.kind.is_derivative() && xs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Contract(format!(
            "constraint '{}' needs a strictly increasing grid",
            spec.name
        )));
    }
    let tape = y.tape();
    let inside = spec.active_mask(xs);
    let margin = spec.kind.margin();
    let (raw, active) = match &spec.kind {
        ConstraintKind::ConditionalValue { target, .. } => {
            (y.add_scalar(-target).abs().neg(), inside)
        }
        ConstraintKind::LowerBound { bound, .. } => {
            let a = xs
                .iter()
                .map(|&x| bound.eval(x))
                .collect::<Result<Vec<_>>>()?;
            (y.sub(&column_const(tape, a)?)?, inside)
        }
        ConstraintKind::UpperBound { bound, .. } => {
            let b = xs
                .iter()
                .map(|&x| bound.eval(x))
                .collect::<Result<Vec<_>>>()?;
            (column_const(tape, b)?.sub(&y)?, inside)
        }
        ConstraintKind::Band { lower, upper, .. } => {
            let mut mid = Vec::with_capacity(n);
            let mut half = Vec::with_capacity(n);
            for &x in xs {
                let (a, b) = (lower.eval(x)?, upper.eval(x)?);
                mid.push(0.5 * (a + b));
                half.push(0.5 * (b - a));
            }
            let dev = y.sub(&column_const(tape, mid)?)?.abs();
            (column_const(tape, half)?.sub(&dev)?, inside)
        }
        ConstraintKind::Monotone { increasing, .. } => {
            let d = first_differences(xs, y)?;
            let d = if *increasing { d } else { d.neg() };
            let active = inside.windows(2).map(|w| w[0] && w[1]).collect();
            (d, active)
        }
        ConstraintKind::Curvature { convex, .. } => {
            let d = first_differences(xs, y)?;
            let scale: Vec<f64> = xs.windows(3).map(|w| 2.0 / (w[2] - w[0])).collect();
            let dd = d
                .narrow(1, n - 2)?
                .sub(&d.narrow(0, n - 2)?)?
                .mul(&column_const(tape, scale)?)?;
            let dd = if *convex { dd } else { dd.neg() };
            let active = inside.windows(3).map(|w| w[0] && w[1] && w[2]).collect();
            (dd, active)
        }
    };
    let scores = if margin != 0.0 {
        raw.add_scalar(margin).min_const(0.0)
    } else {
        raw.min_const(0.0)
    };
    Ok(PointScores { scores, active })
}

/// Monotone scores from exact input derivatives `dy` (`n x 1`).
pub fn point_scores_from_derivative<'t>(
    spec: &ConstraintSpec,
    xs: &[f64],
    dy: Var<'t>,
) -> Result<PointScores<'t>> {
    check_y(xs, &dy)?;
    let ConstraintKind::Monotone { increasing, margin } = spec.kind else {
        return Err(Error::Config(format!(
            "constraint '{}': input derivatives only apply to monotone rules",
            spec.name
        )));
    };
    let d = if increasing { dy } else { dy.neg() };
    Ok(PointScores {
        scores: d.add_scalar(margin).min_const(0.0),
        active: spec.active_mask(xs),
    })
}

/// Mean over active positions.
pub fn reduce_scores<'t>(spec: &ConstraintSpec, ps: PointScores<'t>) -> Result<Var<'t>> {
    let count = ps.active.iter().filter(|&&a| a).count();
    if count == 0 {
        return Err(Error::Contract(format!(
            "constraint '{}' has no grid points inside its region",
            spec.name
        )));
    }
    if count == ps.active.len() {
        return ps.scores.mean();
    }
    let mask: Vec<f64> = ps
        .active
        .iter()
        .map(|&a| if a { 1.0 } else { 0.0 })
        .collect();
    let mask = column_const(ps.scores.tape(), mask)?;
    Ok(ps.scores.mul(&mask)?.sum().scale(1.0 / count as f64))
}

/// Grid-mean knowledge score (<= 0, zero iff satisfied everywhere).
pub fn eval_constraint<'t>(spec: &ConstraintSpec, xs: &[f64], y_pred: Var<'t>) -> Result<Var<'t>> {
    let ps = point_scores(spec, xs, y_pred)?;
    reduce_scores(spec, ps)
}

/// Scores of the active positions as plain numbers.
pub fn active_scores(spec: &ConstraintSpec, xs: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let yv = tape.constant(Tensor::column(y.to_vec())?);
    let ps = point_scores(spec, xs, yv)?;
    let s = ps.scores.value();
    Ok(s.data()
        .iter()
        .zip(&ps.active)
        .filter(|(_, &a)| a)
        .map(|(&v, _)| v)
        .collect())
}

/// Constraint value for one weight draw, evaluated on the spec's own grid.
pub fn constraint_for_weights<'t>(
    spec: &ConstraintSpec,
    net: &NetworkSpec,
    weights: Var<'t>,
    masks: Option<&DropoutMasks>,
) -> Result<Var<'t>> {
    let xs = spec.grid_points();
    let tape = weights.tape();
    let x = tape.constant(Tensor::column(xs.clone())?);
    match spec.derivative {
        DerivativeMode::FiniteDifference => {
            let y = forward(net, weights, x, masks)?;
            eval_constraint(spec, &xs, y)
        }
        DerivativeMode::InputGradient => {
            let (_, dy) = forward_with_input_derivative(net, weights, x, 0, masks)?;
            let ps = point_scores_from_derivative(spec, &xs, dy)?;
            reduce_scores(spec, ps)
        }
    }
}

/// `E_q[f]` estimated with the supplied noise draws; differentiable in
/// `mu` and `log_var`.
pub fn expected_constraint_var<'t>(
    spec: &ConstraintSpec,
    net: &NetworkSpec,
    mu: Var<'t>,
    log_var: Var<'t>,
    eps_draws: &[Tensor],
) -> Result<Var<'t>> {
    if eps_draws.is_empty() {
        return Err(Error::Contract("expected constraint needs K >= 1".into()));
    }
    let mut acc: Option<Var<'t>> = None;
    for eps in eps_draws {
        let w = reparameterize(mu, log_var, eps)?;
        let f = constraint_for_weights(spec, net, w, None)?;
        acc = Some(match acc {
            None => f,
            Some(a) => a.add(&f)?,
        });
    }
    Ok(acc.expect("non-empty").scale(1.0 / eps_draws.len() as f64))
}

/// Plain-number version of [`expected_constraint_var`] with `k` fresh draws.
pub fn expected_constraint<R: Rng + ?Sized>(
    spec: &ConstraintSpec,
    net: &NetworkSpec,
    params: &VariationalParams,
    k: usize,
    rng: &mut R,
) -> Result<f64> {
    if k < 1 {
        return Err(Error::Contract("expected constraint needs K >= 1".into()));
    }
    let tape = Tape::new();
    let mu = tape.constant(params.mu.clone());
    let lv = tape.constant(params.log_var.clone());
    let draws: Vec<Tensor> = (0..k)
        .map(|_| standard_normal(params.mu.len(), rng))
        .collect();
    Ok(expected_constraint_var(spec, net, mu, lv, &draws)?.item())
}

/// `sum_i w_i f_i`.
pub fn composite<'t>(values: &[Var<'t>], weights: &[f64]) -> Result<Option<Var<'t>>> {
    if values.len() != weights.len() {
        return shape_err(format!(
            "{} constraint values but {} weights",
            values.len(),
            weights.len()
        ));
    }
    if let Some(w) = weights.iter().find(|&&w| !(w >= 0.0)) {
        return Err(Error::Contract(format!("composite weight {w} is negative")));
    }
    let mut acc: Option<Var<'t>> = None;
    for (v, &w) in values.iter().zip(weights) {
        let term = v.scale(w);
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term)?,
        });
    }
    Ok(acc)
}

pub fn composite_values(values: &[f64], weights: &[f64]) -> Result<f64> {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = values.iter().map(|&v| tape.scalar(v)).collect();
    Ok(composite(&vars, weights)?.map_or(0.0, |v| v.item()))
}

/// Fraction of `k` posterior draws whose prediction violates the constraint
/// anywhere on its grid. Monitoring only.
pub fn estimate_violation_probability<R: Rng + ?Sized>(
    spec: &ConstraintSpec,
    net: &NetworkSpec,
    posterior: &Posterior,
    k: usize,
    rng: &mut R,
) -> Result<f64> {
    if k < 100 {
        return Err(Error::Contract(format!(
            "violation probability needs K >= 100, got {k}"
        )));
    }
    let xs = spec.grid_points();
    let x = Tensor::column(xs.clone())?;
    let summary = predict(posterior, net, &x, k, rng)?;
    let mut violating = 0usize;
    for sample in &summary.samples {
        let scores = active_scores(spec, &xs, sample)?;
        if scores.iter().any(|&s| s < -TOL_VIOLATION) {
            violating += 1;
        }
    }
    Ok(violating as f64 / summary.ensemble_size() as f64)
}

/// Plain-number constraint values for one weight vector, without gradients.
pub fn constraint_values(
    specs: &[ConstraintSpec],
    net: &NetworkSpec,
    weights: &Tensor,
    masks: Option<&DropoutMasks>,
) -> Result<Vec<f64>> {
    let mut cache: Vec<(Vec<f64>, Tensor)> = Vec::new();
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let xs = spec.grid_points();
        let tape = Tape::new();
        let value = match spec.derivative {
            DerivativeMode::FiniteDifference => {
                let y = match cache.iter().find(|(g, _)| *g == xs) {
                    Some((_, y)) => y.clone(),
                    None => {
                        let y = forward_values(net, weights, &Tensor::column(xs.clone())?, masks)?;
                        cache.push((xs.clone(), y.clone()));
                        y
                    }
                };
                eval_constraint(spec, &xs, tape.constant(y))?
            }
            DerivativeMode::InputGradient => {
                constraint_for_weights(spec, net, tape.constant(weights.clone()), masks)?
            }
        };
        out.push(value.item());
    }
    Ok(out)
}

/// Values of several constraints for one weight draw. Constraints that share
/// a grid and derivative mode share a single forward pass.
pub fn constraints_for_weights<'t>(
    specs: &[ConstraintSpec],
    net: &NetworkSpec,
    weights: Var<'t>,
    masks: Option<&DropoutMasks>,
) -> Result<Vec<Var<'t>>> {
    let tape = weights.tape();
    let mut cache: Vec<(Vec<f64>, DerivativeMode, Var<'t>)> = Vec::new();
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let xs = spec.grid_points();
        let hit = cache
            .iter()
            .find(|(g, d, _)| *d == spec.derivative && *g == xs)
            .map(|(_, _, v)| *v);
        let y = match hit {
            Some(v) => v,
            None => {
                let x = tape.constant(Tensor::column(xs.clone())?);
                let v = match spec.derivative {
                    DerivativeMode::FiniteDifference => forward(net, weights, x, masks)?,
                    DerivativeMode::InputGradient => {
                        forward_with_input_derivative(net, weights, x, 0, masks)?.1
                    }
                };
                cache.push((xs.clone(), spec.derivative, v));
                v
            }
        };
        let ps = match spec.derivative {
            DerivativeMode::FiniteDifference => point_scores(spec, &xs, y)?,
            DerivativeMode::InputGradient => point_scores_from_derivative(spec, &xs, y)?,
        };
        out.push(reduce_scores(spec, ps)?);
    }
    Ok(out)
}
