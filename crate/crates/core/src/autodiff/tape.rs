//! Reverse-mode tape.
//!
//! Values live in an arena owned by [`Tape`]; [`Var`] is a copyable handle.
//! An operation is recorded only when at least one input requires a
//! gradient, so a tape built from constants records nothing.

use std::fmt;
use std::str::FromStr;

use super::rng::NoiseKey;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds understood by [`Tape::apply`].
///
/// The first ten are the differentiable building blocks of the objectives;
/// `Add`, `Sub`, `Mul`, `Scale` and `LogSoftmax` are arithmetic glue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    AddBias,
    Relu,
    Softmax,
    Log,
    Square,
    Sum,
    Mean,
    Huber,
    SampleGaussian,
    Add,
    Sub,
    Mul,
    Scale,
    LogSoftmax,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::AddBias => "add_bias",
            OpKind::Relu => "relu",
            OpKind::Softmax => "softmax",
            OpKind::Log => "log",
            OpKind::Square => "square",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Huber => "huber",
            OpKind::SampleGaussian => "sample_gaussian",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::LogSoftmax => "log_softmax",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        const ALL: [OpKind; 15] = [
            OpKind::MatMul,
            OpKind::AddBias,
            OpKind::Relu,
            OpKind::Softmax,
            OpKind::Log,
            OpKind::Square,
            OpKind::Sum,
            OpKind::Mean,
            OpKind::Huber,
            OpKind::SampleGaussian,
            OpKind::Add,
            OpKind::Sub,
            OpKind::Mul,
            OpKind::Scale,
            OpKind::LogSoftmax,
        ];
        ALL.into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownOp(s.to_string()))
    }
}

/// Scale of the reparameterized noise: one shared standard deviation or a
/// tensor of per-element standard deviations shaped like the mean.
#[derive(Debug, Clone, Copy)]
pub enum Sigma {
    Scalar(f64),
    Tensor(Var),
}

/// Op-specific scalars for [`Tape::apply`].
#[derive(Debug, Clone, Copy, Default)]
pub struct OpParams {
    pub axis: Option<usize>,
    pub scalar: Option<f64>,
    pub sigma: Option<f64>,
    pub key: Option<NoiseKey>,
}

#[derive(Debug)]
enum Op {
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Log(Var),
    Square(Var),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    Huber(Var, Var),
    SampleGaussian {
        mu: Var,
        sigma: Option<Var>,
        eps: Vec<f64>,
    },
}

#[derive(Debug)]
struct Record {
    op: Op,
    output: Var,
}

#[derive(Debug)]
struct Slot {
    value: Tensor,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    slots: Vec<Slot>,
    records: Vec<Record>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.slots[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.slots[v.0].requires_grad
    }

    /// Number of recorded (differentiable) operations.
    pub fn num_recorded(&self) -> usize {
        self.records.len()
    }

    /// Gradient of the last backward output with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.slots.push(Slot {
            value,
            requires_grad,
        });
        Var(self.slots.len() - 1)
    }

    fn emit(&mut self, kind: OpKind, value: Tensor, inputs: &[Var], op: Op) -> Result<Var> {
        let value = value.check_finite(kind.name())?;
        let requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        let out = self.push(value, requires_grad);
        if requires_grad {
            self.records.push(Record { op, output: out });
        }
        Ok(out)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        Ok(())
    }

    /// Generic dispatch by op kind.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var], params: OpParams) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{kind} takes {n} inputs, got {}",
                    inputs.len()
                )))
            }
        };
        match kind {
            OpKind::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::AddBias => {
                arity(2)?;
                self.add_bias(inputs[0], inputs[1])
            }
            OpKind::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Sub => {
                arity(2)?;
                self.sub(inputs[0], inputs[1])
            }
            OpKind::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::Huber => {
                arity(2)?;
                self.huber(inputs[0], inputs[1])
            }
            OpKind::Scale => {
                arity(1)?;
                let c = params
                    .scalar
                    .ok_or_else(|| Error::InvalidArgument("scale needs a scalar".into()))?;
                self.scale(inputs[0], c)
            }
            OpKind::Relu => {
                arity(1)?;
                self.relu(inputs[0])
            }
            OpKind::Softmax => {
                arity(1)?;
                self.softmax(inputs[0])
            }
            OpKind::LogSoftmax => {
                arity(1)?;
                self.log_softmax(inputs[0])
            }
            OpKind::Log => {
                arity(1)?;
                self.log(inputs[0])
            }
            OpKind::Square => {
                arity(1)?;
                self.square(inputs[0])
            }
            OpKind::Sum => {
                arity(1)?;
                self.sum(inputs[0], params.axis)
            }
            OpKind::Mean => {
                arity(1)?;
                self.mean(inputs[0], params.axis)
            }
            OpKind::SampleGaussian => {
                let key = params
                    .key
                    .ok_or_else(|| Error::InvalidArgument("sample_gaussian needs a key".into()))?;
                match (inputs.len(), params.sigma) {
                    (1, Some(s)) => self.sample_gaussian(inputs[0], Sigma::Scalar(s), key),
                    (2, None) => self.sample_gaussian(inputs[0], Sigma::Tensor(inputs[1]), key),
                    _ => Err(Error::InvalidArgument(
                        "sample_gaussian takes (mu, scalar sigma) or (mu, sigma tensor)".into(),
                    )),
                }
            }
        }
    }

    /// `(n, k) x (k, m) -> (n, m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{sa:?} x {sb:?}"),
            });
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        self.emit(
            OpKind::MatMul,
            Tensor::from_parts(vec![n, m], out),
            &[a, b],
            Op::MatMul(a, b),
        )
    }

    /// Adds a length-`m` bias to every row of an `(n, m)` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                detail: format!("{sa:?} + {sb:?}"),
            });
        }
        let shape = sa.to_vec();
        let b = self.value(bias).data();
        let out: Vec<f64> = self
            .value(a)
            .row_iter()
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        self.emit(
            OpKind::AddBias,
            Tensor::from_parts(shape, out),
            &[a, bias],
            Op::AddBias(a, bias),
        )
    }

    fn zip_with(
        &mut self,
        kind: OpKind,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(kind.name(), a, b)?;
        let shape = self.shape(a).to_vec();
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.emit(kind, Tensor::from_parts(shape, out), &[a, b], op)
    }

    fn map(&mut self, kind: OpKind, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let out = self.value(a).data().iter().map(|&x| f(x)).collect();
        self.emit(kind, Tensor::from_parts(shape, out), &[a], op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(OpKind::Add, a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(OpKind::Sub, a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(OpKind::Mul, a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Element-wise smoothed L1 distance.
    pub fn huber(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(OpKind::Huber, a, b, huber_value, Op::Huber(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(OpKind::Scale, a, |x| c * x, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(OpKind::Relu, a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map(OpKind::Log, a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map(OpKind::Square, a, |x| x * x, Op::Square(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let shape = t.shape().to_vec();
        let out = t.row_iter().flat_map(softmax_row).collect();
        self.emit(
            OpKind::Softmax,
            Tensor::from_parts(shape, out),
            &[a],
            Op::Softmax(a),
        )
    }

    /// Log-softmax over the last axis, computed with the max shift.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let shape = t.shape().to_vec();
        let out = t.row_iter().flat_map(log_softmax_row).collect();
        self.emit(
            OpKind::LogSoftmax,
            Tensor::from_parts(shape, out),
            &[a],
            Op::LogSoftmax(a),
        )
    }

    /// Sum over everything (`axis = None`) or one axis of a rank-1/2 tensor.
    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let (shape, out) = reduce(self.value(a), axis)?;
        self.emit(
            OpKind::Sum,
            Tensor::from_parts(shape, out),
            &[a],
            Op::Sum(a, axis),
        )
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let count = reduced_count(self.value(a), axis)? as f64;
        let (shape, mut out) = reduce(self.value(a), axis)?;
        out.iter_mut().for_each(|v| *v /= count);
        self.emit(
            OpKind::Mean,
            Tensor::from_parts(shape, out),
            &[a],
            Op::Mean(a, axis),
        )
    }

    /// Reparameterized draw `z = mu + sigma * eps`, `eps ~ N(0, I)` keyed by
    /// `key`. Gradients flow to `mu`, and to `sigma` when it is a tensor.
    pub fn sample_gaussian(&mut self, mu: Var, sigma: Sigma, key: NoiseKey) -> Result<Var> {
        let n = self.value(mu).len();
        let shape = self.shape(mu).to_vec();
        let eps = key.standard_normal(n);
        let out: Vec<f64> = match sigma {
            Sigma::Scalar(s) => {
                if !(s >= 0.0) || !s.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "sample_gaussian needs a finite sigma >= 0, got {s}"
                    )));
                }
                self.value(mu)
                    .data()
                    .iter()
                    .zip(&eps)
                    .map(|(m, e)| m + s * e)
                    .collect()
            }
            Sigma::Tensor(sv) => {
                self.same_shape("sample_gaussian", mu, sv)?;
                if self.value(sv).data().iter().any(|&s| s < 0.0) {
                    return Err(Error::InvalidArgument(
                        "sample_gaussian sigma tensor has negative entries".into(),
                    ));
                }
                self.value(mu)
                    .data()
                    .iter()
                    .zip(self.value(sv).data())
                    .zip(&eps)
                    .map(|((m, s), e)| m + s * e)
                    .collect()
            }
        };
        let (inputs, sigma_var) = match sigma {
            Sigma::Scalar(_) => (vec![mu], None),
            Sigma::Tensor(sv) => (vec![mu, sv], Some(sv)),
        };
        self.emit(
            OpKind::SampleGaussian,
            Tensor::from_parts(shape, out),
            &inputs,
            Op::SampleGaussian {
                mu,
                sigma: sigma_var,
                eps,
            },
        )
    }

    /// Back-propagates from a scalar output. Leaves used along several paths
    /// receive the sum of the contributions. A tape supports one backward
    /// pass; build a fresh tape per step.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let out_t = self.value(output);
        if out_t.len() != 1 {
            return Err(Error::NotScalar(out_t.shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.slots.len()];
        grads[output.0] = Some(vec![1.0]);

        for rec in self.records.iter().rev() {
            let Some(g) = grads[rec.output.0].take() else {
                continue;
            };
            let out_val = &self.slots[rec.output.0].value;
            // Keep the output's own gradient available to callers.
            let contributions = local_grads(&rec.op, &g, out_val, &self.slots);
            grads[rec.output.0] = Some(g);
            for (v, contrib) in contributions {
                if !self.slots[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        if grads.iter().flatten().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("backward"));
        }
        self.grads = grads;
        Ok(())
    }
}

pub(crate) fn huber_value(x: f64, y: f64) -> f64 {
    let d = (x - y).abs();
    if d <= 1.0 {
        0.5 * d * d
    } else {
        d - 0.5
    }
}

fn huber_slope(d: f64) -> f64 {
    if d.abs() <= 1.0 {
        d
    } else {
        d.signum()
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

pub(crate) fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|&x| x - lse).collect()
}

fn reduced_count(t: &Tensor, axis: Option<usize>) -> Result<usize> {
    match axis {
        None => Ok(t.len()),
        Some(ax) if ax < t.shape().len() => Ok(t.shape()[ax]),
        Some(ax) => Err(Error::ShapeMismatch {
            op: "reduce",
            detail: format!("axis {ax} out of range for {:?}", t.shape()),
        }),
    }
}

fn reduce(t: &Tensor, axis: Option<usize>) -> Result<(Vec<usize>, Vec<f64>)> {
    let shape = t.shape();
    match (axis, shape.len()) {
        (None, _) => Ok((vec![], vec![t.data().iter().sum()])),
        (Some(0), 1) => Ok((vec![], vec![t.data().iter().sum()])),
        (Some(0), 2) => {
            let m = shape[1];
            let mut out = vec![0.0; m];
            for row in t.row_iter() {
                out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
            }
            Ok((vec![m], out))
        }
        (Some(1), 2) => Ok((vec![shape[0]], t.row_iter().map(|r| r.iter().sum()).collect())),
        (Some(ax), _) => Err(Error::ShapeMismatch {
            op: "reduce",
            detail: format!("axis {ax} unsupported for {shape:?}"),
        }),
    }
}

/// Spreads an upstream reduction gradient back over the input shape.
fn broadcast_reduced(g: &[f64], shape: &[usize], axis: Option<usize>, scale: f64) -> Vec<f64> {
    let n: usize = shape.iter().product();
    match (axis, shape.len()) {
        (None, _) | (Some(0), 1) => vec![g[0] * scale; n],
        (Some(0), 2) => {
            let m = shape[1];
            (0..n).map(|i| g[i % m] * scale).collect()
        }
        (Some(1), 2) => {
            let m = shape[1];
            (0..n).map(|i| g[i / m] * scale).collect()
        }
        _ => unreachable!("validated in forward"),
    }
}

fn local_grads(op: &Op, g: &[f64], out: &Tensor, slots: &[Slot]) -> Vec<(Var, Vec<f64>)> {
    let val = |v: &Var| &slots[v.0].value;
    let needs = |v: &Var| slots[v.0].requires_grad;
    match op {
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(a), val(b));
            let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
            let mut res = Vec::new();
            if needs(a) {
                // dA = G * B^T
                let mut da = vec![0.0; n * k];
                for i in 0..n {
                    let grow = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let brow = &tb.data()[p * m..(p + 1) * m];
                        da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                res.push((*a, da));
            }
            if needs(b) {
                // dB = A^T * G
                let mut db = vec![0.0; k * m];
                for i in 0..n {
                    let grow = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let aip = ta.data()[i * k + p];
                        let drow = &mut db[p * m..(p + 1) * m];
                        drow.iter_mut().zip(grow).for_each(|(d, x)| *d += aip * x);
                    }
                }
                res.push((*b, db));
            }
            res
        }
        Op::AddBias(a, b) => {
            let m = val(b).len();
            let mut db = vec![0.0; m];
            for row in g.chunks(m) {
                db.iter_mut().zip(row).for_each(|(d, x)| *d += x);
            }
            vec![(*a, g.to_vec()), (*b, db)]
        }
        Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
        Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|x| -x).collect())],
        Op::Mul(a, b) => {
            let (ta, tb) = (val(a).data(), val(b).data());
            vec![
                (*a, g.iter().zip(tb).map(|(x, y)| x * y).collect()),
                (*b, g.iter().zip(ta).map(|(x, y)| x * y).collect()),
            ]
        }
        Op::Scale(a, c) => vec![(*a, g.iter().map(|x| c * x).collect())],
        Op::Relu(a) => vec![(
            *a,
            g.iter()
                .zip(val(a).data())
                .map(|(x, &v)| if v > 0.0 { *x } else { 0.0 })
                .collect(),
        )],
        Op::Log(a) => vec![(*a, g.iter().zip(val(a).data()).map(|(x, v)| x / v).collect())],
        Op::Square(a) => vec![(
            *a,
            g.iter().zip(val(a).data()).map(|(x, v)| 2.0 * v * x).collect(),
        )],
        Op::Softmax(a) => {
            let m = out.cols();
            let mut da = Vec::with_capacity(g.len());
            for (grow, yrow) in g.chunks(m).zip(out.data().chunks(m)) {
                let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                da.extend(grow.iter().zip(yrow).map(|(x, y)| y * (x - dot)));
            }
            vec![(*a, da)]
        }
        Op::LogSoftmax(a) => {
            let m = out.cols();
            let mut da = Vec::with_capacity(g.len());
            for (grow, yrow) in g.chunks(m).zip(out.data().chunks(m)) {
                let total: f64 = grow.iter().sum();
                da.extend(grow.iter().zip(yrow).map(|(x, y)| x - y.exp() * total));
            }
            vec![(*a, da)]
        }
        Op::Sum(a, axis) => vec![(*a, broadcast_reduced(g, val(a).shape(), *axis, 1.0))],
        Op::Mean(a, axis) => {
            let t = val(a);
            let count = reduced_count(t, *axis).expect("validated in forward") as f64;
            vec![(*a, broadcast_reduced(g, t.shape(), *axis, 1.0 / count))]
        }
        Op::Huber(a, b) => {
            let slopes: Vec<f64> = val(a)
                .data()
                .iter()
                .zip(val(b).data())
                .zip(g)
                .map(|((x, y), gi)| huber_slope(x - y) * gi)
                .collect();
            let neg = slopes.iter().map(|s| -s).collect();
            vec![(*a, slopes), (*b, neg)]
        }
        Op::SampleGaussian { mu, sigma, eps } => {
            let mut res = vec![(*mu, g.to_vec())];
            if let Some(s) = sigma {
                res.push((*s, g.iter().zip(eps).map(|(x, e)| x * e).collect()));
            }
            res
        }
    }
}
