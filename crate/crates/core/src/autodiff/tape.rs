use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;

use super::tensor::{broadcast_visit, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Binary(BinaryKind, usize, usize),
    MatMul(usize, usize),
    Sum(usize),
    Mean(usize),
    Neg(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Abs(usize),
    Relu(usize),
    Rbf {
        input: usize,
        centers: Vec<f64>,
        widths: Vec<f64>,
    },
    MinConst(usize, f64),
    MaxConst(usize, f64),
    Clamp(usize, f64, f64),
    Scale(usize, f64),
    Offset(usize),
    Narrow {
        input: usize,
        start: usize,
    },
    Reshape(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Wengert list of tensor operations. Rebuilt for every objective evaluation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    // Order-sensitive hash of every branch taken at a kink; used by gradient
    // checks to discard finite-difference probes that cross a kink.
    branch_hash: Cell<u64>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("value", &*self.value())
            .finish()
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    /// `None` for constants and for leaves the root does not depend on.
    pub fn get(&self, var: &Var<'_>) -> Option<&Tensor> {
        self.grads.get(&var.id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            branch_hash: Cell::new(0xcbf2_9ce4_8422_2325),
        }
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn branch_signature(&self) -> u64 {
        self.branch_hash.get()
    }

    fn record_branches(&self, bits: impl Iterator<Item = u8>) {
        let mut h = self.branch_hash.get();
        let (mut word, mut filled) = (0u64, 0);
        for b in bits {
            word = (word << 2) | u64::from(b & 3);
            filled += 1;
            if filled == 32 {
                h = (h ^ word).wrapping_mul(0x0100_0000_01b3);
                (word, filled) = (0, 0);
            }
        }
        h = (h ^ word ^ (filled << 56)).wrapping_mul(0x0100_0000_01b3);
        self.branch_hash.set(h);
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let op = if requires_grad || matches!(op, Op::Leaf) {
            op
        } else {
            Op::Constant
        };
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(root.tape, self) {
            return Err(Error::Contract("root belongs to a different tape".into()));
        }
        let nodes = self.nodes.borrow();
        if !nodes[root.id].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                nodes[root.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.id + 1];
        grads[root.id] = Some(Tensor::filled(nodes[root.id].value.shape(), 1.0));

        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            for (parent, contrib) in local_backward(&nodes, node, &g) {
                if !nodes[parent].requires_grad {
                    continue;
                }
                match &mut grads[parent] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot => *slot = Some(contrib),
                }
            }
        }

        let mut out = Gradients::default();
        for (id, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if matches!(nodes[id].op, Op::Leaf) {
                    out.grads.insert(id, g);
                }
            }
        }
        Ok(out)
    }
}

fn unary_map(x: &Tensor, g: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&x, &g)| f(x, g))
        .collect();
    Tensor::from_raw(x.shape().to_vec(), data)
}

fn local_backward(nodes: &[Node], node: &Node, g: &Tensor) -> Vec<(usize, Tensor)> {
    let val = |id: usize| &nodes[id].value;
    match &node.op {
        Op::Leaf | Op::Constant => vec![],
        Op::Binary(kind, a, b) => {
            let (xa, xb) = (val(*a), val(*b));
            let (ad, bd, gd) = (xa.data(), xb.data(), g.data());
            let mut ga = vec![0.0; xa.len()];
            let mut gb = vec![0.0; xb.len()];
            let mut k = 0;
            broadcast_visit(xa.shape(), xb.shape(), |i, j| {
                let gk = gd[k];
                k += 1;
                let (da, db) = match kind {
                    BinaryKind::Add => (1.0, 1.0),
                    BinaryKind::Sub => (1.0, -1.0),
                    BinaryKind::Mul => (bd[j], ad[i]),
                    BinaryKind::Div => (1.0 / bd[j], -ad[i] / (bd[j] * bd[j])),
                };
                ga[i] += gk * da;
                gb[j] += gk * db;
            })
            .expect("checked at forward");
            vec![
                (*a, Tensor::from_raw(xa.shape().to_vec(), ga)),
                (*b, Tensor::from_raw(xb.shape().to_vec(), gb)),
            ]
        }
        Op::MatMul(a, b) => {
            let (xa, xb) = (val(*a), val(*b));
            let (n, k, m) = (xa.shape()[0], xa.shape()[1], xb.shape()[1]);
            let (ad, bd, gd) = (xa.data(), xb.data(), g.data());
            let mut ga = vec![0.0; n * k];
            let mut gb = vec![0.0; k * m];
            for i in 0..n {
                for p in 0..k {
                    let mut acc = 0.0;
                    for j in 0..m {
                        acc += gd[i * m + j] * bd[p * m + j];
                    }
                    ga[i * k + p] = acc;
                }
            }
            for i in 0..n {
                for p in 0..k {
                    let a_ip = ad[i * k + p];
                    if a_ip == 0.0 {
                        continue;
                    }
                    for j in 0..m {
                        gb[p * m + j] += a_ip * gd[i * m + j];
                    }
                }
            }
            vec![
                (*a, Tensor::from_raw(vec![n, k], ga)),
                (*b, Tensor::from_raw(vec![k, m], gb)),
            ]
        }
        Op::Sum(a) => vec![(*a, Tensor::filled(val(*a).shape(), g.item()))],
        Op::Mean(a) => {
            let x = val(*a);
            vec![(*a, Tensor::filled(x.shape(), g.item() / x.len() as f64))]
        }
        Op::Neg(a) => vec![(*a, g.map(|v| -v))],
        Op::Exp(a) => {
            let data = node
                .value
                .data()
                .iter()
                .zip(g.data())
                .map(|(y, g)| y * g)
                .collect();
            vec![(*a, Tensor::from_raw(g.shape().to_vec(), data))]
        }
        Op::Log(a) => vec![(*a, unary_map(val(*a), g, |x, g| g / x))],
        Op::Square(a) => vec![(*a, unary_map(val(*a), g, |x, g| 2.0 * x * g))],
        Op::Abs(a) => vec![(*a, unary_map(val(*a), g, |x, g| g * sign_with_zero(x)))],
        Op::Relu(a) => vec![(
            *a,
            unary_map(val(*a), g, |x, g| if x > 0.0 { g } else { 0.0 }),
        )],
        Op::Rbf {
            input,
            centers,
            widths,
        } => {
            let x = val(*input);
            let cols = x.cols().max(1);
            let data = x
                .data()
                .iter()
                .zip(node.value.data())
                .zip(g.data())
                .enumerate()
                .map(|(k, ((&x, &y), &g))| {
                    let j = k % cols;
                    let (c, s) = (pick(centers, j), pick(widths, j));
                    g * y * (-2.0 * (x - c) / (s * s))
                })
                .collect();
            vec![(*input, Tensor::from_raw(x.shape().to_vec(), data))]
        }
        Op::MinConst(a, c) => {
            vec![(
                *a,
                unary_map(val(*a), g, |x, g| if x < *c { g } else { 0.0 }),
            )]
        }
        Op::MaxConst(a, c) => {
            vec![(
                *a,
                unary_map(val(*a), g, |x, g| if x > *c { g } else { 0.0 }),
            )]
        }
        Op::Clamp(a, lo, hi) => vec![(
            *a,
            unary_map(val(*a), g, |x, g| if x > *lo && x < *hi { g } else { 0.0 }),
        )],
        Op::Scale(a, c) => vec![(*a, g.map(|v| v * c))],
        Op::Offset(a) => vec![(*a, g.clone())],
        Op::Narrow { input, start } => {
            let x = val(*input);
            let row = x.cols();
            let mut data = vec![0.0; x.len()];
            data[start * row..start * row + g.len()].copy_from_slice(g.data());
            vec![(*input, Tensor::from_raw(x.shape().to_vec(), data))]
        }
        Op::Reshape(a) => {
            vec![(
                *a,
                Tensor::from_raw(val(*a).shape().to_vec(), g.data().to_vec()),
            )]
        }
    }
}

fn pick(v: &[f64], j: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[j]
    }
}

fn sign_with_zero(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a single-element node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("operands live on different tapes".into()))
        }
    }

    fn unary(&self, op: Op, value: Tensor) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: &Var<'t>, kind: BinaryKind) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let value = {
            let (a, b) = (self.value(), other.value());
            let (ad, bd) = (a.data(), b.data());
            let mut data = Vec::with_capacity(ad.len().max(bd.len()));
            let mut zero = None;
            let shape = match kind {
                BinaryKind::Add => {
                    broadcast_visit(a.shape(), b.shape(), |i, j| data.push(ad[i] + bd[j]))?
                }
                BinaryKind::Sub => {
                    broadcast_visit(a.shape(), b.shape(), |i, j| data.push(ad[i] - bd[j]))?
                }
                BinaryKind::Mul => {
                    broadcast_visit(a.shape(), b.shape(), |i, j| data.push(ad[i] * bd[j]))?
                }
                BinaryKind::Div => broadcast_visit(a.shape(), b.shape(), |i, j| {
                    if bd[j] == 0.0 && zero.is_none() {
                        zero = Some(data.len());
                    }
                    data.push(ad[i] / bd[j]);
                })?,
            };
            if let Some(k) = zero {
                return Err(Error::Domain(format!("division by zero at element {k}")));
            }
            Tensor::from_raw(shape, data)
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self
            .tape
            .push(value, Op::Binary(kind, self.id, other.id), rg))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Mul)
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Div)
    }

    /// `(n x k) @ (k x m)`.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let value = {
            let (a, b) = (self.value(), other.value());
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                return shape_err(format!("matmul {:?} @ {:?}", a.shape(), b.shape()));
            }
            let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let (ad, bd) = (a.data(), b.data());
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                let row = &mut out[i * m..(i + 1) * m];
                for p in 0..k {
                    let a_ip = ad[i * k + p];
                    for (o, &b_pj) in row.iter_mut().zip(&bd[p * m..(p + 1) * m]) {
                        *o += a_ip * b_pj;
                    }
                }
            }
            Tensor::from_raw(vec![n, m], out)
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), rg))
    }

    pub fn sum(&self) -> Var<'t> {
        let v = self.value().data().iter().sum();
        self.unary(Op::Sum(self.id), Tensor::scalar(v))
    }

    /// Mean over all elements. Errors on an empty tensor.
    pub fn mean(&self) -> Result<Var<'t>> {
        let v = {
            let x = self.value();
            if x.is_empty() {
                return Err(Error::Contract("mean of an empty tensor".into()));
            }
            x.data().iter().sum::<f64>() / x.len() as f64
        };
        Ok(self.unary(Op::Mean(self.id), Tensor::scalar(v)))
    }

    pub fn neg(&self) -> Var<'t> {
        let v = self.value().map(|x| -x);
        self.unary(Op::Neg(self.id), v)
    }

    pub fn exp(&self) -> Var<'t> {
        let v = self.value().map(f64::exp);
        self.unary(Op::Exp(self.id), v)
    }

    pub fn log(&self) -> Result<Var<'t>> {
        let v = {
            let x = self.value();
            if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0) {
                return Err(Error::Domain(format!("log of non-positive value {bad}")));
            }
            x.map(f64::ln)
        };
        Ok(self.unary(Op::Log(self.id), v))
    }

    pub fn square(&self) -> Var<'t> {
        let v = self.value().map(|x| x * x);
        self.unary(Op::Square(self.id), v)
    }

    pub fn abs(&self) -> Var<'t> {
        let v = self.value().map(f64::abs);
        self.tape.record_branches(
            self.value()
                .data()
                .iter()
                .map(|x| sign_with_zero(*x) as i8 as u8),
        );
        self.unary(Op::Abs(self.id), v)
    }

    pub fn relu(&self) -> Var<'t> {
        let v = self.value().map(|x| x.max(0.0));
        self.tape
            .record_branches(self.value().data().iter().map(|&x| u8::from(x > 0.0)));
        self.unary(Op::Relu(self.id), v)
    }

    /// `exp(-(x - c_j)^2 / s_j^2)` with per-column centre `c_j` and width `s_j`.
    /// A single-element slice applies to every column.
    pub fn rbf(&self, centers: &[f64], widths: &[f64]) -> Result<Var<'t>> {
        let v = {
            let x = self.value();
            let cols = x.cols().max(1);
            for (name, p) in [("centers", centers), ("widths", widths)] {
                if p.len() != 1 && p.len() != cols {
                    return shape_err(format!(
                        "rbf {name} has {} entries for {cols} columns",
                        p.len()
                    ));
                }
            }
            if widths.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
                return Err(Error::Domain("rbf widths must be positive".into()));
            }
            let data = x
                .data()
                .iter()
                .enumerate()
                .map(|(k, &x)| {
                    let j = k % cols;
                    let (c, s) = (pick(centers, j), pick(widths, j));
                    (-(x - c) * (x - c) / (s * s)).exp()
                })
                .collect();
            Tensor::from_raw(x.shape().to_vec(), data)
        };
        Ok(self.unary(
            Op::Rbf {
                input: self.id,
                centers: centers.to_vec(),
                widths: widths.to_vec(),
            },
            v,
        ))
    }

    /// `min(x, c)`; derivative 1 strictly below `c`, 0 at and above.
    pub fn min_const(&self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x.min(c));
        self.tape
            .record_branches(self.value().data().iter().map(|&x| u8::from(x < c)));
        self.unary(Op::MinConst(self.id, c), v)
    }

    /// `max(x, c)`; derivative 1 strictly above `c`, 0 at and below.
    pub fn max_const(&self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x.max(c));
        self.tape
            .record_branches(self.value().data().iter().map(|&x| u8::from(x > c)));
        self.unary(Op::MaxConst(self.id, c), v)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<'t>> {
        if lo > hi {
            return Err(Error::Domain(format!("clamp bounds {lo} > {hi}")));
        }
        let v = self.value().map(|x| x.clamp(lo, hi));
        self.tape.record_branches(
            self.value()
                .data()
                .iter()
                .map(|&x| u8::from(x > lo) | (u8::from(x < hi) << 1)),
        );
        Ok(self.unary(Op::Clamp(self.id, lo, hi), v))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x * c);
        self.unary(Op::Scale(self.id, c), v)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x + c);
        self.unary(Op::Offset(self.id), v)
    }

    /// Rows `start..start + len` along the leading axis.
    pub fn narrow(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let v = {
            let x = self.value();
            if x.shape().is_empty() || start + len > x.shape()[0] {
                return shape_err(format!(
                    "narrow {start}..{} of shape {:?}",
                    start + len,
                    x.shape()
                ));
            }
            let row = x.cols();
            let mut shape = x.shape().to_vec();
            shape[0] = len;
            Tensor::from_raw(shape, x.data()[start * row..(start + len) * row].to_vec())
        };
        Ok(self.unary(
            Op::Narrow {
                input: self.id,
                start,
            },
            v,
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().reshaped(shape.to_vec())?;
        Ok(self.unary(Op::Reshape(self.id), v))
    }
}
