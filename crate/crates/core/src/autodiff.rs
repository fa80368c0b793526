//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! Every operation appends a node to the [`Tape`]; a node can only reference
//! nodes created before it, so the node list is already in topological
//! order. [`Tape::backward`] walks it once in reverse.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{axis_extents, matmul_at_into, matmul_bt_into, numel, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds recorded on the tape. Used for diagnostics and fault
/// injection in the gradient-check harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Constant,
    MatMul,
    Transpose,
    Add,
    Sub,
    Hadamard,
    Affine,
    Sigmoid,
    Tanh,
    Softmax,
    Concat,
    Slice,
    Reshape,
    AddBroadcast,
    Mean,
    Std,
    Sum,
    Pick,
    Log,
}

impl OpKind {
    pub const ALL: [OpKind; 20] = [
        OpKind::Leaf,
        OpKind::Constant,
        OpKind::MatMul,
        OpKind::Transpose,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Hadamard,
        OpKind::Affine,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::Softmax,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::Reshape,
        OpKind::AddBroadcast,
        OpKind::Mean,
        OpKind::Std,
        OpKind::Sum,
        OpKind::Pick,
        OpKind::Log,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Constant => "constant",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Hadamard => "hadamard",
            OpKind::Affine => "affine",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Softmax => "softmax",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::Reshape => "reshape",
            OpKind::AddBroadcast => "add_broadcast",
            OpKind::Mean => "mean",
            OpKind::Std => "std",
            OpKind::Sum => "sum",
            OpKind::Pick => "pick",
            OpKind::Log => "log",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.iter().copied().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Affine { x: Var, scale: f64 },
    Sigmoid(Var),
    Tanh(Var),
    Softmax { x: Var, axis: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    AddBroadcast { x: Var, b: Var, axis: usize },
    Mean { x: Var, axis: usize },
    Std { x: Var, axis: usize },
    Sum(Var),
    Pick { x: Var, index: Vec<usize> },
    Log { x: Var, floor: f64 },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Constant => OpKind::Constant,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Hadamard(..) => OpKind::Hadamard,
            Op::Affine { .. } => OpKind::Affine,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Reshape(_) => OpKind::Reshape,
            Op::AddBroadcast { .. } => OpKind::AddBroadcast,
            Op::Mean { .. } => OpKind::Mean,
            Op::Std { .. } => OpKind::Std,
            Op::Sum(_) => OpKind::Sum,
            Op::Pick { .. } => OpKind::Pick,
            Op::Log { .. } => OpKind::Log,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Variance floor under the square root of [`Tape::std`].
pub const STD_EPS: f64 = 1e-8;

/// A single-owner recording of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
    fault: Option<OpKind>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Flips the sign of every gradient contribution produced by ops of
    /// `kind`. Exists so the gradient checker can prove it detects a broken
    /// backward rule.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros when no gradient reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    /// Clears gradients so that `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant: never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(name, va.shape(), vb.shape()));
        }
        let value = va.zip_map(vb, f);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "hadamard", |x, y| x * y, Op::Hadamard(a, b))
    }

    /// `scale·x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        let rg = self.rg(&[x]);
        self.push(value, Op::Affine { x, scale }, rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        let rg = self.rg(&[x]);
        self.push(value, Op::Tanh(x), rg)
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        let nd = self.shape(x).len();
        if axis >= nd {
            return Err(Error::invalid(
                op,
                format!("axis {axis} out of range for shape {:?}", self.shape(x)),
            ));
        }
        Ok(())
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let input = self.value(x);
        if !input.is_finite() {
            return Err(Error::Numeric("softmax"));
        }
        let value = softmax_values(input, axis);
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Softmax { x, axis }, rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or(Error::EmptyInput("concat"))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in xs {
                let val = self.value(v);
                let chunk = val.shape()[axis] * inner;
                data.extend_from_slice(&val.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = self.rg(xs);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("slice", x, axis)?;
        let in_shape = self.shape(x).to_vec();
        if len == 0 || start + len > in_shape[axis] {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {in_shape:?}", start + len),
            ));
        }
        let (outer, n, inner) = axis_extents(&in_shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = in_shape;
        shape[axis] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Slice { x, axis, start },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Adds a 1-D `b` to `x`, aligning `b` with dimension `axis` of `x` and
    /// repeating it over every other dimension.
    pub fn add_broadcast(&mut self, x: Var, b: Var, axis: usize) -> Result<Var> {
        self.check_axis("add_broadcast", x, axis)?;
        let xs = self.shape(x);
        let bs = self.shape(b);
        if bs.len() != 1 || bs[0] != xs[axis] {
            return Err(Error::shape("add_broadcast", xs, bs));
        }
        let (outer, n, inner) = axis_extents(xs, axis);
        let bias = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        for o in 0..outer {
            for (k, &bk) in bias.iter().enumerate().take(n) {
                let base = (o * n + k) * inner;
                for d in &mut data[base..base + inner] {
                    *d += bk;
                }
            }
        }
        let shape = xs.to_vec();
        let rg = self.rg(&[x, b]);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::AddBroadcast { x, b, axis },
            rg,
        ))
    }

    /// Mean along `axis`; the axis is removed.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("mean", x, axis)?;
        let (value, _) = mean_along(self.value(x), axis);
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Mean { x, axis }, rg))
    }

    /// Population standard deviation along `axis`, as `sqrt(var + STD_EPS)`.
    pub fn std(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("std", x, axis)?;
        let value = std_along(self.value(x), axis);
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Std { x, axis }, rg))
    }

    /// Per-column mean and standard deviation of an `N×d` matrix.
    pub fn mean_std(&mut self, x: Var) -> Result<(Var, Var)> {
        if self.shape(x).len() != 2 {
            return Err(Error::invalid(
                "mean_std",
                format!("expected N×d, got {:?}", self.shape(x)),
            ));
        }
        Ok((self.mean(x, 0)?, self.std(x, 0)?))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    /// `out[i] = x[i, index[i]]` for a 2-D `x`.
    pub fn pick(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if v.ndim() != 2 || v.rows() != index.len() {
            return Err(Error::shape("pick", v.shape(), &[index.len()]));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= v.cols()) {
            return Err(Error::invalid(
                "pick",
                format!("index {bad} out of range for {} columns", v.cols()),
            ));
        }
        let data = index.iter().enumerate().map(|(r, &c)| v.at2(r, c)).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::vector(data),
            Op::Pick {
                x,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// `ln(max(x, floor))`, elementwise.
    pub fn log(&mut self, x: Var, floor: f64) -> Var {
        let value = self.value(x).map(|v| v.max(floor).ln());
        let rg = self.rg(&[x]);
        self.push(value, Op::Log { x, floor }, rg)
    }

    /// Populates gradients of `loss` with respect to every node that
    /// requires one. Fails when called twice without [`Tape::reset_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Tape(
                "backward already ran on this tape; call reset_grads first".into(),
            ));
        }
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be scalar, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(Error::Tape("loss is detached from all trainable leaves".into()));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(node.value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                let contributions = self.node_backward(i, &g);
                let flip = self.fault == Some(self.nodes[i].op.kind());
                for (target, mut contrib) in contributions {
                    if !self.nodes[target.0].requires_grad {
                        continue;
                    }
                    if flip {
                        contrib = contrib.scale(-1.0);
                    }
                    match &mut self.grads[target.0] {
                        Some(acc) => acc.add_assign(&contrib),
                        slot => *slot = Some(contrib),
                    }
                }
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                let mut parts = Vec::new();
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_bt_into(g.data(), vb.data(), &mut da, m, n, k);
                    parts.push((*a, Tensor::from_parts(vec![m, k], da)));
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    matmul_at_into(va.data(), g.data(), &mut db, k, m, n);
                    parts.push((*b, Tensor::from_parts(vec![k, n], db)));
                }
                parts
            }
            Op::Transpose(a) => vec![(*a, g.transpose().expect("2-D gradient"))],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
            Op::Hadamard(a, b) => vec![
                (*a, g.zip_map(self.value(*b), |x, y| x * y)),
                (*b, g.zip_map(self.value(*a), |x, y| x * y)),
            ],
            Op::Affine { x, scale } => vec![(*x, g.scale(*scale))],
            Op::Sigmoid(x) => vec![(*x, g.zip_map(out, |gi, y| gi * y * (1.0 - y)))],
            Op::Tanh(x) => vec![(*x, g.zip_map(out, |gi, y| gi * (1.0 - y * y)))],
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = axis_extents(out.shape(), *axis);
                let (y, gd) = (out.data(), g.data());
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for c in 0..inner {
                        let idx = |k: usize| (o * n + k) * inner + c;
                        let dot: f64 = (0..n).map(|k| gd[idx(k)] * y[idx(k)]).sum();
                        for k in 0..n {
                            dx[idx(k)] = y[idx(k)] * (gd[idx(k)] - dot);
                        }
                    }
                }
                vec![(*x, Tensor::from_parts(out.shape().to_vec(), dx))]
            }
            Op::Concat { xs, axis } => {
                let (outer, n, inner) = axis_extents(out.shape(), *axis);
                let mut offset = 0;
                let mut result = Vec::with_capacity(xs.len());
                for &v in xs {
                    let shape = self.shape(v).to_vec();
                    let len = shape[*axis];
                    let mut part = Vec::with_capacity(numel(&shape));
                    for o in 0..outer {
                        let base = (o * n + offset) * inner;
                        part.extend_from_slice(&g.data()[base..base + len * inner]);
                    }
                    offset += len;
                    result.push((v, Tensor::from_parts(shape, part)));
                }
                result
            }
            Op::Slice { x, axis, start } => {
                let in_shape = self.shape(*x).to_vec();
                let (outer, n, inner) = axis_extents(&in_shape, *axis);
                let len = out.shape()[*axis];
                let mut dx = vec![0.0; numel(&in_shape)];
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                vec![(*x, Tensor::from_parts(in_shape, dx))]
            }
            Op::Reshape(x) => vec![(*x, Tensor::from_parts(self.shape(*x).to_vec(), g.data().to_vec()))],
            Op::AddBroadcast { x, b, axis } => {
                let (outer, n, inner) = axis_extents(out.shape(), *axis);
                let mut db = vec![0.0; n];
                for o in 0..outer {
                    for (k, dbk) in db.iter_mut().enumerate() {
                        let base = (o * n + k) * inner;
                        *dbk += g.data()[base..base + inner].iter().sum::<f64>();
                    }
                }
                vec![(*x, g.clone()), (*b, Tensor::vector(db))]
            }
            Op::Mean { x, axis } => {
                let in_shape = self.shape(*x).to_vec();
                let (outer, n, inner) = axis_extents(&in_shape, *axis);
                let inv = 1.0 / n as f64;
                let mut dx = vec![0.0; numel(&in_shape)];
                for o in 0..outer {
                    for k in 0..n {
                        for c in 0..inner {
                            dx[(o * n + k) * inner + c] = g.data()[o * inner + c] * inv;
                        }
                    }
                }
                vec![(*x, Tensor::from_parts(in_shape, dx))]
            }
            Op::Std { x, axis } => {
                let input = self.value(*x);
                let in_shape = input.shape().to_vec();
                let (outer, n, inner) = axis_extents(&in_shape, *axis);
                let (mean, _) = mean_along(input, *axis);
                let mut dx = vec![0.0; numel(&in_shape)];
                for o in 0..outer {
                    for c in 0..inner {
                        let j = o * inner + c;
                        let coef = g.data()[j] / (n as f64 * out.data()[j]);
                        for k in 0..n {
                            let idx = (o * n + k) * inner + c;
                            dx[idx] = coef * (input.data()[idx] - mean.data()[j]);
                        }
                    }
                }
                vec![(*x, Tensor::from_parts(in_shape, dx))]
            }
            Op::Sum(x) => {
                let gs = g.data()[0];
                vec![(*x, Tensor::full(self.shape(*x), gs))]
            }
            Op::Pick { x, index } => {
                let shape = self.shape(*x).to_vec();
                let cols = shape[1];
                let mut dx = vec![0.0; numel(&shape)];
                for (r, &c) in index.iter().enumerate() {
                    dx[r * cols + c] += g.data()[r];
                }
                vec![(*x, Tensor::from_parts(shape, dx))]
            }
            Op::Log { x, floor } => {
                let input = self.value(*x);
                let dx = g.zip_map(input, |gi, v| if v > *floor { gi / v } else { 0.0 });
                vec![(*x, dx)]
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_values(input: &Tensor, axis: usize) -> Tensor {
    let (outer, n, inner) = axis_extents(input.shape(), axis);
    let x = input.data();
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for c in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + c;
            let max = (0..n).map(|k| x[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..n {
                let e = (x[idx(k)] - max).exp();
                y[idx(k)] = e;
                total += e;
            }
            for k in 0..n {
                y[idx(k)] /= total;
            }
        }
    }
    Tensor::from_parts(input.shape().to_vec(), y)
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

fn mean_along(input: &Tensor, axis: usize) -> (Tensor, usize) {
    let (outer, n, inner) = axis_extents(input.shape(), axis);
    let mut m = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..n {
            for c in 0..inner {
                m[o * inner + c] += input.data()[(o * n + k) * inner + c];
            }
        }
    }
    for v in &mut m {
        *v /= n as f64;
    }
    (Tensor::from_parts(reduced_shape(input.shape(), axis), m), n)
}

fn std_along(input: &Tensor, axis: usize) -> Tensor {
    let (mean, n) = mean_along(input, axis);
    let (outer, _, inner) = axis_extents(input.shape(), axis);
    let mut var = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..n {
            for c in 0..inner {
                let d = input.data()[(o * n + k) * inner + c] - mean.data()[o * inner + c];
                var[o * inner + c] += d * d;
            }
        }
    }
    let std = var
        .into_iter()
        .map(|v| (v / n as f64 + STD_EPS).sqrt())
        .collect();
    Tensor::from_parts(mean.shape().to_vec(), std)
}

/// Central-difference gradient of `f` at `x`, one element at a time.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        *g = (plus - minus) / (2.0 * h);
    }
    Tensor::from_parts(x.shape().to_vec(), grad)
}

/// Norm-wise relative error `max|a - b| / max(max|a|, max|b|)`, with a tiny
/// floor so that two all-zero gradients compare as equal.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a.max_abs().max(b.max_abs());
    if scale < 1e-300 {
        diff
    } else {
        diff / scale
    }
}
