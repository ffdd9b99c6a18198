use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Activation {
    Identity,
    Relu,
    /// `exp(-(z - c)^2 / s^2)` with fixed per-unit centre and width.
    Rbf {
        #[serde(default = "default_rbf_param::<0>")]
        centers: Vec<f64>,
        #[serde(default = "default_rbf_param::<1>")]
        widths: Vec<f64>,
    },
}

fn default_rbf_param<const V: u8>() -> Vec<f64> {
    vec![f64::from(V)]
}

impl Activation {
    pub fn rbf_unit() -> Self {
        Activation::Rbf {
            centers: vec![0.0],
            widths: vec![1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
    /// Drop probability applied to this layer's input units in dropout mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkMode {
    #[default]
    Variational,
    Dropout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub mode: NetworkMode,
    #[serde(default = "default_true")]
    pub learn_obs_noise: bool,
    #[serde(default = "default_obs_log_var")]
    pub obs_log_var_init: f64,
}

fn default_true() -> bool {
    true
}

pub fn default_obs_log_var() -> f64 {
    0.01f64.ln()
}

/// Offsets of one layer's weight matrix and bias inside the flat parameter
/// vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlots {
    pub weight: usize,
    pub bias: usize,
}

impl NetworkSpec {
    /// Fully connected stack: `dims = [in, h1, ..., out]`, `hidden` on every
    /// layer but the last, identity output.
    pub fn mlp(dims: &[usize], hidden: Activation) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                fan_in: w[0],
                fan_out: w[1],
                activation: if i + 2 == dims.len() {
                    Activation::Identity
                } else {
                    hidden.clone()
                },
                dropout: None,
            })
            .collect();
        Self {
            layers,
            mode: NetworkMode::Variational,
            learn_obs_noise: true,
            obs_log_var_init: default_obs_log_var(),
        }
    }

    /// Switches to dropout mode with rate `p` on every hidden layer's input.
    pub fn with_dropout(mut self, p: f64) -> Self {
        self.mode = NetworkMode::Dropout;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.dropout = (i > 0).then_some(p);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].fan_out != pair[1].fan_in {
                return Err(Error::Config(format!(
                    "layer {i} emits {} units but layer {} expects {}",
                    pair[0].fan_out,
                    i + 1,
                    pair[1].fan_in
                )));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.fan_in == 0 || l.fan_out == 0 {
                return Err(Error::Config(format!("layer {i} has a zero dimension")));
            }
            if let Activation::Rbf { centers, widths } = &l.activation {
                for p in [centers, widths] {
                    if p.len() != 1 && p.len() != l.fan_out {
                        return Err(Error::Config(format!(
                            "layer {i}: rbf parameters need 1 or {} entries",
                            l.fan_out
                        )));
                    }
                }
                if widths.iter().any(|&s| s <= 0.0) {
                    return Err(Error::Config(format!("layer {i}: rbf widths must be > 0")));
                }
            }
            match (self.mode, l.dropout) {
                (NetworkMode::Dropout, Some(p)) if !(p > 0.0 && p < 1.0) => {
                    return Err(Error::Config(format!(
                        "layer {i}: dropout rate {p} outside (0, 1)"
                    )));
                }
                (NetworkMode::Variational, Some(_)) => {
                    return Err(Error::Config(format!(
                        "layer {i}: dropout rate set on a variational network"
                    )));
                }
                _ => {}
            }
        }
        if !self.obs_log_var_init.is_finite() {
            return Err(Error::Config("obs_log_var_init must be finite".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.fan_in * l.fan_out + l.fan_out)
            .sum()
    }

    pub fn slots(&self) -> Vec<LayerSlots> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let s = LayerSlots {
                    weight: off,
                    bias: off + l.fan_in * l.fan_out,
                };
                off = s.bias + l.fan_out;
                s
            })
            .collect()
    }
}

/// Per-layer multiplicative masks on input units; `None` leaves a layer
/// untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks(pub Vec<Option<Vec<f64>>>);

impl DropoutMasks {
    /// Fresh `Bernoulli(1 - p)` keep-masks for every layer with a dropout rate.
    pub fn draw<R: rand::Rng + ?Sized>(net: &NetworkSpec, rng: &mut R) -> Self {
        Self(
            net.layers
                .iter()
                .map(|l| {
                    l.dropout.map(|p| {
                        (0..l.fan_in)
                            .map(|_| if rng.random_bool(1.0 - p) { 1.0 } else { 0.0 })
                            .collect()
                    })
                })
                .collect(),
        )
    }

    pub fn uniform(net: &NetworkSpec, value: f64) -> Self {
        Self(
            net.layers
                .iter()
                .map(|l| l.dropout.map(|_| vec![value; l.fan_in]))
                .collect(),
        )
    }
}

fn check_input(net: &NetworkSpec, shape: &[usize]) -> Result<()> {
    if shape.len() != 2 || shape[1] != net.input_dim() {
        return shape_err(format!(
            "network expects n x {} inputs, got {:?}",
            net.input_dim(),
            shape
        ));
    }
    Ok(())
}

fn check_weights(net: &NetworkSpec, shape: &[usize]) -> Result<()> {
    if shape != [net.num_params()] {
        return shape_err(format!(
            "network has {} parameters, weight vector has shape {:?}",
            net.num_params(),
            shape
        ));
    }
    Ok(())
}

fn layer_params<'t>(
    layer: &LayerSpec,
    slot: LayerSlots,
    weights: &Var<'t>,
    mask: Option<&Vec<f64>>,
) -> Result<(Var<'t>, Var<'t>)> {
    let mut w = weights
        .narrow(slot.weight, layer.fan_in * layer.fan_out)?
        .reshape(&[layer.fan_in, layer.fan_out])?;
    if let Some(mask) = mask {
        let m = weights
            .tape()
            .constant(Tensor::matrix(layer.fan_in, 1, mask.clone())?);
        w = w.mul(&m)?;
    }
    let b = weights
        .narrow(slot.bias, layer.fan_out)?
        .reshape(&[1, layer.fan_out])?;
    Ok((w, b))
}

fn activate<'t>(z: Var<'t>, act: &Activation) -> Result<Var<'t>> {
    match act {
        Activation::Identity => Ok(z),
        Activation::Relu => Ok(z.relu()),
        Activation::Rbf { centers, widths } => z.rbf(centers, widths),
    }
}

/// Network output `g(x, w)` for a flat weight vector. Differentiable in both
/// `weights` and `x`.
pub fn forward<'t>(
    net: &NetworkSpec,
    weights: Var<'t>,
    x: Var<'t>,
    masks: Option<&DropoutMasks>,
) -> Result<Var<'t>> {
    check_input(net, &x.shape())?;
    check_weights(net, &weights.shape())?;
    let mut h = x;
    for (i, (layer, slot)) in net.layers.iter().zip(net.slots()).enumerate() {
        let mask = masks.and_then(|m| m.0.get(i)).and_then(Option::as_ref);
        let (w, b) = layer_params(layer, slot, &weights, mask)?;
        h = activate(h.matmul(&w)?.add(&b)?, &layer.activation)?;
    }
    Ok(h)
}

/// Output together with its derivative along input column `column`, both as
/// differentiable functions of the weights.
pub fn forward_with_input_derivative<'t>(
    net: &NetworkSpec,
    weights: Var<'t>,
    x: Var<'t>,
    column: usize,
    masks: Option<&DropoutMasks>,
) -> Result<(Var<'t>, Var<'t>)> {
    check_input(net, &x.shape())?;
    check_weights(net, &weights.shape())?;
    let tape = x.tape();
    let (n, d) = (x.shape()[0], x.shape()[1]);
    if column >= d {
        return shape_err(format!("input column {column} out of range for {d} inputs"));
    }
    let mut seed = vec![0.0; n * d];
    for r in 0..n {
        seed[r * d + column] = 1.0;
    }
    let mut h = x;
    let mut dh = tape.constant(Tensor::matrix(n, d, seed)?);
    for (i, (layer, slot)) in net.layers.iter().zip(net.slots()).enumerate() {
        let mask = masks.and_then(|m| m.0.get(i)).and_then(Option::as_ref);
        let (w, b) = layer_params(layer, slot, &weights, mask)?;
        let z = h.matmul(&w)?.add(&b)?;
        let dz = dh.matmul(&w)?;
        match &layer.activation {
            Activation::Identity => {
                h = z;
                dh = dz;
            }
            Activation::Relu => {
                let step = z.value().map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                dh = dz.mul(&tape.constant(step))?;
                h = z.relu();
            }
            Activation::Rbf { centers, widths } => {
                let a = z.rbf(centers, widths)?;
                let m = layer.fan_out;
                let c: Vec<f64> = (0..m).map(|j| pick(centers, j)).collect();
                let k: Vec<f64> = (0..m).map(|j| -2.0 / pick(widths, j).powi(2)).collect();
                let c = tape.constant(Tensor::matrix(1, m, c)?);
                let k = tape.constant(Tensor::matrix(1, m, k)?);
                dh = dz.mul(&a)?.mul(&z.sub(&c)?.mul(&k)?)?;
                h = a;
            }
        }
    }
    Ok((h, dh))
}

fn pick(v: &[f64], j: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[j]
    }
}

/// Plain evaluation without gradient bookkeeping.
pub fn forward_values(
    net: &NetworkSpec,
    weights: &Tensor,
    x: &Tensor,
    masks: Option<&DropoutMasks>,
) -> Result<Tensor> {
    check_input(net, x.shape())?;
    check_weights(net, weights.shape())?;
    let n = x.rows();
    let wd = weights.data();
    let mut h = x.data().to_vec();
    for (i, (layer, slot)) in net.layers.iter().zip(net.slots()).enumerate() {
        let mask = masks.and_then(|m| m.0.get(i)).and_then(Option::as_ref);
        let (k, m) = (layer.fan_in, layer.fan_out);
        let w = &wd[slot.weight..slot.weight + k * m];
        let b = &wd[slot.bias..slot.bias + m];
        let mut out = Vec::with_capacity(n * m);
        for r in 0..n {
            let start = out.len();
            out.resize(start + m, 0.0);
            let row = &mut out[start..];
            for p in 0..k {
                let a = h[r * k + p] * mask.map_or(1.0, |mk| mk[p]);
                if a == 0.0 {
                    continue;
                }
                for (o, &w_pj) in row.iter_mut().zip(&w[p * m..(p + 1) * m]) {
                    *o += a * w_pj;
                }
            }
            row.iter_mut().zip(b).for_each(|(o, &bj)| *o += bj);
            match &layer.activation {
                Activation::Identity => {}
                Activation::Relu => row.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Rbf { centers, widths } => {
                    if centers.len() != 1 && centers.len() != m
                        || widths.len() != 1 && widths.len() != m
                    {
                        return shape_err(format!("rbf parameters do not match {m} columns"));
                    }
                    for (j, v) in row.iter_mut().enumerate() {
                        let (c, s) = (pick(centers, j), pick(widths, j));
                        *v = (-(*v - c) * (*v - c) / (s * s)).exp();
                    }
                }
            }
        }
        h = out;
    }
    let cols = net.layers.last().map_or(net.input_dim(), |l| l.fan_out);
    Ok(Tensor::from_raw(vec![n, cols], h))
}

/// MC-dropout forward: fresh masks per call unless `masks` is given.
pub fn dropout_forward<'t, R: rand::Rng + ?Sized>(
    net: &NetworkSpec,
    weights: Var<'t>,
    x: Var<'t>,
    masks: Option<&DropoutMasks>,
    rng: &mut R,
) -> Result<Var<'t>> {
    if net.mode != NetworkMode::Dropout {
        return Err(Error::Contract(
            "dropout_forward on a variational network".into(),
        ));
    }
    match masks {
        Some(m) => forward(net, weights, x, Some(m)),
        None => {
            let m = DropoutMasks::draw(net, rng);
            forward(net, weights, x, Some(&m))
        }
    }
}
