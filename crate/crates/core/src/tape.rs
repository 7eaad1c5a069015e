//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node holding its output value plus whatever
//! the backward rule needs. Nodes are created strictly after their inputs,
//! so the tape is always in topological order and `backward` is a single
//! reverse sweep that visits each node once.
//!
//! Shapes are never broadcast implicitly. The only mixed-shape operations
//! are `add_trailing` (operand shape equals the trailing dims of the input,
//! used for biases and positional tables) and `scale_by` (one-element scale).

use crate::error::{AcitError, Result};
use crate::rng::Rng;
use crate::tensor::{numel, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddTrailing(Var, Var),
    Scale(Var, T),
    ScaleBy(Var, Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu(Var),
    Relu(Var),
    Dropout(Var, Vec<T>),
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Mean {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    Bce {
        logit: Var,
        label: T,
        weight: T,
    },
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of the leaves that participated in a backward pass.
#[derive(Debug)]
pub struct Grads<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    train: bool,
    rng: Rng,
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    // tanh approximation; returns (value, derivative)
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044715);
    let half = T::of(0.5);
    let one = T::one();
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let y = half * x * (one + th);
    let dy = half * (one + th) + half * x * (one - th * th) * c * (one + T::of(3.0) * a * x * x);
    (y, dy)
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Tape::new()
    }
}

impl<T: Scalar> Tape<T> {
    /// Evaluation-mode tape: dropout is the identity.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            train: false,
            rng: Rng::new(0),
        }
    }

    /// Training-mode tape; dropout masks are drawn from `rng`.
    pub fn training(rng: Rng) -> Self {
        Tape {
            nodes: Vec::new(),
            train: true,
            rng,
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(AcitError::Numeric(format!(
                "non-finite output of {} on shape {:?}",
                op_name(&op),
                value.shape()
            )));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(t, false)
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(t, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ra = sa.len();
        if ra < 2 || sb.len() != ra || sa[..ra - 2] != sb[..ra - 2] || sa[ra - 1] != sb[ra - 2] {
            return Err(AcitError::dim(format!("matmul of {sa:?} and {sb:?}")));
        }
        let (m, k, n) = (sa[ra - 2], sa[ra - 1], sb[ra - 1]);
        let batch = numel(&sa[..ra - 2]);
        let mut shape = sa.to_vec();
        shape[ra - 1] = n;
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (da, db) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                T::gemm(
                    m,
                    k,
                    n,
                    &da[i * m * k..],
                    false,
                    &db[i * k * n..],
                    false,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        self.push(Tensor::from_parts(shape, out), Op::MatMul(a, b), &[a, b])
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let r = s.len();
        if r < 2 {
            return Err(AcitError::dim(format!("transpose of {s:?}")));
        }
        let out = transpose_last2(self.value(a).data(), &s);
        let mut shape = s;
        shape.swap(r - 2, r - 1);
        self.push(Tensor::from_parts(shape, out), Op::Transpose(a), &[a])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(AcitError::dim(format!(
                "{what} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        Tensor::from_parts(
            ta.shape().to_vec(),
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    /// `x + b` where `b`'s shape equals the trailing dims of `x`'s shape.
    pub fn add_trailing(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.len() > sx.len() || sx[sx.len() - sb.len()..] != *sb {
            return Err(AcitError::dim(format!("add_trailing of {sx:?} and {sb:?}")));
        }
        let (tx, tb) = (self.value(x), self.value(b));
        let inner = tb.numel();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + tb.data()[i % inner])
            .collect();
        let v = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push(v, Op::AddTrailing(x, b), &[x, b])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let v = self.value(x).map(|e| e * c);
        self.push(v, Op::Scale(x, c), &[x])
    }

    /// `s * x` for a one-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(AcitError::dim(format!(
                "scale_by expects a one-element scale, got {:?}",
                self.shape(s)
            )));
        }
        let c = self.value(s).item();
        let v = self.value(x).map(|e| c * e);
        self.push(v, Op::ScaleBy(x, s), &[x, s])
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let n = *s.last().unwrap_or(&0);
        if n == 0 {
            return Err(AcitError::dim(format!("softmax over empty last axis of {s:?}")));
        }
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut sum = T::zero();
            for e in row.iter_mut() {
                *e = (*e - mx).exp();
                sum = sum + *e;
            }
            for e in row.iter_mut() {
                *e = *e / sum;
            }
        }
        self.push(Tensor::from_parts(s, out), Op::Softmax(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap_or(&0);
        if d < 2 {
            return Err(AcitError::dim(format!("layer_norm needs last axis >= 2, got {s:?}")));
        }
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(AcitError::dim(format!(
                "layer_norm gain {:?} / bias {:?} for input {s:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        if eps <= 0.0 {
            return Err(AcitError::config(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let eps = T::of(eps);
        let dn = T::of(d as f64);
        let xs = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = xs.len() / d;
        let mut xhat = Vec::with_capacity(xs.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xs.len());
        for row in xs.chunks(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        self.push(
            Tensor::from_parts(s, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|e| gelu_parts(e).0);
        self.push(v, Op::Gelu(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|e| e.max(T::zero()));
        self.push(v, Op::Relu(x), &[x])
    }

    /// Inverted dropout: zero with probability `p` and scale survivors by
    /// `1/(1-p)` in training mode; identity otherwise.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(AcitError::config(format!("dropout p must be in [0,1), got {p}")));
        }
        if !self.train || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.value(x).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if self.rng.uniform() < p { T::zero() } else { keep })
            .collect();
        let tx = self.value(x);
        let data = tx.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let v = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push(v, Op::Dropout(x, mask), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        self.push(v, Op::Reshape(x), &[x])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*inputs.first().ok_or_else(|| AcitError::dim("concat of nothing"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(AcitError::dim(format!("concat axis {axis} on {first:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s[..axis] != first[..axis]
                || s[axis + 1..] != first[axis + 1..]
            {
                return Err(AcitError::dim(format!(
                    "concat along axis {axis} of {first:?} and {s:?}"
                )));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut shape = first.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    /// `x[.., start..start+len, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(AcitError::dim(format!(
                "slice {start}..{} on axis {axis} of {s:?}",
                start + len
            )));
        }
        let (outer, ext, inner) = split_axis(&s, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ext + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        self.push(Tensor::from_parts(shape, out), Op::Slice { x, axis, start }, &[x])
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(AcitError::dim(format!("mean over axis {axis} of {s:?}")));
        }
        let (outer, ext, inner) = split_axis(&s, axis);
        let src = self.value(x).data();
        let scale = T::one() / T::of(ext as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..ext {
                let row = &src[(o * ext + a) * inner..(o * ext + a + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc = *acc + v;
                }
            }
        }
        for e in out.iter_mut() {
            *e = *e * scale;
        }
        let mut shape = s;
        shape.remove(axis);
        self.push(Tensor::from_parts(shape, out), Op::Mean { x, axis }, &[x])
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    /// Weighted binary cross-entropy on a logit,
    /// `weight * (softplus(z) - label * z)`.
    pub fn bce_with_logit(&mut self, logit: Var, label: f64, weight: f64) -> Result<Var> {
        if self.value(logit).numel() != 1 {
            return Err(AcitError::dim(format!(
                "bce expects a single logit, got {:?}",
                self.shape(logit)
            )));
        }
        if weight <= 0.0 {
            return Err(AcitError::config(format!("class weight must be > 0, got {weight}")));
        }
        let z = self.value(logit).item();
        let (label, weight) = (T::of(label), T::of(weight));
        let loss = weight * (softplus(z) - label * z);
        self.push(
            Tensor::scalar(loss),
            Op::Bce {
                logit,
                label,
                weight,
            },
            &[logit],
        )
    }

    /// `x @ w (+ b)` over the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.is_empty() || sw.len() != 2 || sx[sx.len() - 1] != sw[0] {
            return Err(AcitError::dim(format!("linear of {sx:?} with weight {sw:?}")));
        }
        let k = sw[0];
        let rows = numel(&sx) / k;
        let flat = if sx.len() == 2 { x } else { self.reshape(x, &[rows, k])? };
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = b {
            y = self.add_trailing(y, b)?;
        }
        if sx.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = sx;
        *out_shape.last_mut().unwrap() = sw[1];
        self.reshape(y, &out_shape)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let lv = self.value(loss);
        if !lv.shape().is_empty() && lv.numel() != 1 {
            return Err(AcitError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let node = &self.nodes[i];
                match (&node.op, g) {
                    (Op::Leaf, Some(g)) if node.requires_grad => {
                        Some(Tensor::from_parts(node.value.shape().to_vec(), g))
                    }
                    _ => None,
                }
            })
            .collect();
        Ok(Grads { grads })
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.numel()]);
            f(slot);
        };
        let val = |v: Var| nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let sa = nodes[a.0].value.shape();
                let r = sa.len();
                let (m, k) = (sa[r - 2], sa[r - 1]);
                let n = nodes[b.0].value.shape()[r - 1];
                let batch = numel(&sa[..r - 2]);
                acc(*a, &mut |ga| {
                    let bd = val(*b);
                    for i in 0..batch {
                        T::gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..],
                            false,
                            &bd[i * k * n..],
                            true,
                            &mut ga[i * m * k..(i + 1) * m * k],
                            true,
                        );
                    }
                });
                acc(*b, &mut |gb| {
                    let ad = val(*a);
                    for i in 0..batch {
                        T::gemm(
                            k,
                            m,
                            n,
                            &ad[i * m * k..],
                            true,
                            &g[i * m * n..],
                            false,
                            &mut gb[i * k * n..(i + 1) * k * n],
                            true,
                        );
                    }
                });
            }
            Op::Transpose(a) => {
                let gt = transpose_last2(g, node.value.shape());
                acc(*a, &mut |ga| add_into(ga, &gt));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| {
                    for (d, &s) in gb.iter_mut().zip(g) {
                        *d = *d - s;
                    }
                });
            }
            Op::Mul(a, b) => {
                acc(*a, &mut |ga| {
                    for ((d, &s), &o) in ga.iter_mut().zip(g).zip(val(*b)) {
                        *d = *d + s * o;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((d, &s), &o) in gb.iter_mut().zip(g).zip(val(*a)) {
                        *d = *d + s * o;
                    }
                });
            }
            Op::AddTrailing(x, b) => {
                acc(*x, &mut |gx| add_into(gx, g));
                acc(*b, &mut |gb| {
                    let inner = gb.len();
                    for (i, &s) in g.iter().enumerate() {
                        gb[i % inner] = gb[i % inner] + s;
                    }
                });
            }
            Op::Scale(x, c) => {
                acc(*x, &mut |gx| {
                    for (d, &s) in gx.iter_mut().zip(g) {
                        *d = *d + *c * s;
                    }
                });
            }
            Op::ScaleBy(x, s) => {
                let c = val(*s)[0];
                acc(*x, &mut |gx| {
                    for (d, &e) in gx.iter_mut().zip(g) {
                        *d = *d + c * e;
                    }
                });
                acc(*s, &mut |gs| {
                    let dot = g.iter().zip(val(*x)).map(|(&a, &b)| a * b).sum::<T>();
                    gs[0] = gs[0] + dot;
                });
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap();
                acc(*x, &mut |gx| {
                    for ((gxr, yr), gr) in gx.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let dot = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
                        for ((d, &yy), &gg) in gxr.iter_mut().zip(yr).zip(gr) {
                            *d = *d + yy * (gg - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = *node.value.shape().last().unwrap();
                let dn = T::of(d as f64);
                let gv = val(*gain);
                acc(*x, &mut |gx| {
                    for (r, ((gxr, hr), gr)) in gx
                        .chunks_mut(d)
                        .zip(xhat.chunks(d))
                        .zip(g.chunks(d))
                        .enumerate()
                    {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            s1 = s1 + dh;
                            s2 = s2 + dh * hr[j];
                        }
                        let k = inv_std[r] / dn;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            gxr[j] = gxr[j] + k * (dn * dh - s1 - hr[j] * s2);
                        }
                    }
                });
                acc(*gain, &mut |gg| {
                    for (hr, gr) in xhat.chunks(d).zip(g.chunks(d)) {
                        for j in 0..d {
                            gg[j] = gg[j] + gr[j] * hr[j];
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for gr in g.chunks(d) {
                        add_into(gb, gr);
                    }
                });
            }
            Op::Gelu(x) => {
                acc(*x, &mut |gx| {
                    for ((d, &s), &xv) in gx.iter_mut().zip(g).zip(val(*x)) {
                        *d = *d + s * gelu_parts(xv).1;
                    }
                });
            }
            Op::Relu(x) => {
                acc(*x, &mut |gx| {
                    for ((d, &s), &xv) in gx.iter_mut().zip(g).zip(val(*x)) {
                        if xv > T::zero() {
                            *d = *d + s;
                        }
                    }
                });
            }
            Op::Dropout(x, mask) => {
                acc(*x, &mut |gx| {
                    for ((d, &s), &m) in gx.iter_mut().zip(g).zip(mask) {
                        *d = *d + s * m;
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let ext = nodes[v.0].value.shape()[*axis];
                    acc(v, &mut |gv| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + ext) * inner];
                            add_into(&mut gv[o * ext * inner..(o + 1) * ext * inner], src);
                        }
                    });
                    offset += ext;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, ext, inner) = split_axis(nodes[x.0].value.shape(), *axis);
                let len = node.value.shape()[*axis];
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        let base = (o * ext + start) * inner;
                        add_into(
                            &mut gx[base..base + len * inner],
                            &g[o * len * inner..(o + 1) * len * inner],
                        );
                    }
                });
            }
            Op::Mean { x, axis } => {
                let (outer, ext, inner) = split_axis(nodes[x.0].value.shape(), *axis);
                let scale = T::one() / T::of(ext as f64);
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        let gr = &g[o * inner..(o + 1) * inner];
                        for a in 0..ext {
                            let row = &mut gx[(o * ext + a) * inner..(o * ext + a + 1) * inner];
                            for (d, &s) in row.iter_mut().zip(gr) {
                                *d = *d + s * scale;
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, &mut |gx| {
                    for d in gx.iter_mut() {
                        *d = *d + g[0];
                    }
                });
            }
            Op::Bce {
                logit,
                label,
                weight,
            } => {
                let z = val(*logit)[0];
                acc(*logit, &mut |gz| {
                    gz[0] = gz[0] + g[0] * *weight * (sigmoid(z) - *label);
                });
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn transpose_last2<T: Scalar>(src: &[T], shape: &[usize]) -> Vec<T> {
    let r = shape.len();
    let (m, n) = (shape[r - 2], shape[r - 1]);
    let mut out = vec![T::zero(); src.len()];
    for (sb, ob) in src.chunks(m * n).zip(out.chunks_mut(m * n)) {
        for i in 0..m {
            for j in 0..n {
                ob[j * m + i] = sb[i * n + j];
            }
        }
    }
    out
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Transpose(_) => "transpose",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddTrailing(..) => "add_trailing",
        Op::Scale(..) => "scale",
        Op::ScaleBy(..) => "scale_by",
        Op::Softmax(_) => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Gelu(_) => "gelu",
        Op::Relu(_) => "relu",
        Op::Dropout(..) => "dropout",
        Op::Reshape(_) => "reshape",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
        Op::Mean { .. } => "mean",
        Op::Sum(_) => "sum",
        Op::Bce { .. } => "bce",
    }
}
