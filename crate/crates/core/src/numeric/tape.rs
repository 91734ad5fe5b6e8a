//! Tensor-level Wengert tape.
//!
//! Every operation is evaluated eagerly and appended to the tape together
//! with the ids of its inputs. Inputs always precede their consumers, so the
//! node list is a topological order and [`Tape::backward`] is a single
//! reverse sweep. Activations needed by backward are the stored node values.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::kernels::{self, ConvGeom};
use super::{NumericError, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Constant leaf; never receives a gradient.
    Input,
    /// Leaf that receives a gradient but is not a named parameter.
    Variable,
    Param(String),
    /// `x[B×in] · Wᵀ + b`
    Linear,
    /// `x[B×in] · Wᵀ`
    MatMulNt,
    Conv2d { stride: usize, padding: usize },
    /// `x[N×C×H×W] + b[C]`
    AddChannelBias,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Relu,
    Sigmoid,
    Tanh,
    Reshape(Vec<usize>),
    Permute(Vec<usize>),
    /// Concatenate rank-2 inputs along columns.
    ConcatCols,
    GatherRows(Arc<[usize]>),
    SumAxis(usize),
    SumAll,
    /// Mean binary cross-entropy from `(logits, labels)`.
    BceWithLogits,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Variable => "variable",
            Op::Param(_) => "param",
            Op::Linear => "linear",
            Op::MatMulNt => "matmul_nt",
            Op::Conv2d { .. } => "conv2d",
            Op::AddChannelBias => "add_channel_bias",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Reshape(_) => "reshape",
            Op::Permute(_) => "permute",
            Op::ConcatCols => "concat_cols",
            Op::GatherRows(_) => "gather_rows",
            Op::SumAxis(_) => "sum_axis",
            Op::SumAll => "sum_all",
            Op::BceWithLogits => "bce_with_logits",
        }
    }

    fn is_leaf(&self) -> bool {
        matches!(self, Op::Input | Op::Variable | Op::Param(_))
    }
}

struct Node<T> {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Recorded computation. Single-threaded; one tape per forward pass.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> NumericError {
    NumericError::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

fn expect_rank<T: Real>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<(), NumericError> {
    if t.rank() != rank {
        return Err(NumericError::InvalidShape(format!(
            "{op}: expected a rank-{rank} tensor, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

fn conv_geom<T: Real>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeom, NumericError> {
    expect_rank("conv2d", x, 4)?;
    expect_rank("conv2d", k, 4)?;
    let (xs, ks) = (x.shape(), k.shape());
    if xs[1] != ks[1] {
        return Err(mismatch("conv2d", xs, ks));
    }
    if stride == 0 {
        return Err(NumericError::InvalidShape("conv2d: stride must be positive".into()));
    }
    ConvGeom::new(xs[1], xs[2], xs[3], ks[2], ks[3], stride, padding).ok_or_else(|| {
        NumericError::KernelTooLarge {
            kernel: vec![ks[2], ks[3]],
            padded: vec![xs[2] + 2 * padding, xs[3] + 2 * padding],
        }
    })
}

/// Forward evaluation of one operation. Shared by recording and replay.
fn eval<T: Real>(op: &Op, xs: &[&Tensor<T>]) -> Result<Tensor<T>, NumericError> {
    let arity = |n: usize| -> Result<(), NumericError> {
        if xs.len() != n {
            return Err(NumericError::InvalidShape(format!(
                "{} expects {n} inputs, got {}",
                op.name(),
                xs.len()
            )));
        }
        Ok(())
    };
    match op {
        Op::Input | Op::Variable | Op::Param(_) => {
            Err(NumericError::InvalidShape("leaf nodes cannot be evaluated".into()))
        }
        Op::Linear | Op::MatMulNt => {
            let with_bias = matches!(op, Op::Linear);
            arity(if with_bias { 3 } else { 2 })?;
            let (x, w) = (xs[0], xs[1]);
            expect_rank(op.name(), x, 2)?;
            expect_rank(op.name(), w, 2)?;
            let (b_rows, d_in) = (x.shape()[0], x.shape()[1]);
            let d_out = w.shape()[0];
            if w.shape()[1] != d_in {
                return Err(mismatch(op.name(), x.shape(), w.shape()));
            }
            let mut out = kernels::matmul_nt(x.data(), w.data(), b_rows, d_in, d_out);
            if with_bias {
                let b = xs[2];
                if b.shape() != [d_out] {
                    return Err(mismatch("linear bias", w.shape(), b.shape()));
                }
                for row in out.chunks_exact_mut(d_out) {
                    for (o, &bv) in row.iter_mut().zip(b.data()) {
                        *o += bv;
                    }
                }
            }
            Tensor::new(vec![b_rows, d_out], out)
        }
        Op::Conv2d { stride, padding } => {
            arity(2)?;
            let (x, k) = (xs[0], xs[1]);
            let g = conv_geom(x, k, *stride, *padding)?;
            let (n, c_out) = (x.shape()[0], k.shape()[0]);
            let img_len = g.c_in * g.h * g.w;
            let mut out = Vec::with_capacity(n * c_out * g.out_len());
            for img in x.data().chunks_exact(img_len) {
                let cols = kernels::im2col(img, &g);
                out.extend(kernels::matmul_nn(k.data(), &cols, c_out, g.patch_len(), g.out_len()));
            }
            Tensor::new(vec![n, c_out, g.out_h, g.out_w], out)
        }
        Op::AddChannelBias => {
            arity(2)?;
            let (x, b) = (xs[0], xs[1]);
            expect_rank("add_channel_bias", x, 4)?;
            let c = x.shape()[1];
            if b.shape() != [c] {
                return Err(mismatch("add_channel_bias", x.shape(), b.shape()));
            }
            let plane = x.shape()[2] * x.shape()[3];
            let mut out = x.data().to_vec();
            for (i, chunk) in out.chunks_exact_mut(plane).enumerate() {
                let bv = b.data()[i % c];
                for v in chunk {
                    *v += bv;
                }
            }
            Tensor::new(x.shape().to_vec(), out)
        }
        Op::Add | Op::Sub | Op::Mul => {
            arity(2)?;
            let (a, b) = (xs[0], xs[1]);
            if a.shape() != b.shape() {
                return Err(mismatch(op.name(), a.shape(), b.shape()));
            }
            let f: fn(T, T) -> T = match op {
                Op::Add => |p, q| p + q,
                Op::Sub => |p, q| p - q,
                _ => |p, q| p * q,
            };
            let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
            Tensor::new(a.shape().to_vec(), data)
        }
        Op::Scale(c) => {
            arity(1)?;
            let c = T::lit(*c);
            Ok(xs[0].map(|v| v * c))
        }
        Op::Relu => {
            arity(1)?;
            Ok(xs[0].map(|v| if v > T::zero() { v } else { T::zero() }))
        }
        Op::Sigmoid => {
            arity(1)?;
            Ok(xs[0].map(kernels::sigmoid))
        }
        Op::Tanh => {
            arity(1)?;
            Ok(xs[0].map(|v| v.tanh()))
        }
        Op::Reshape(shape) => {
            arity(1)?;
            let x = xs[0];
            let n: usize = shape.iter().product();
            if n != x.len() {
                return Err(mismatch("reshape", x.shape(), shape));
            }
            Tensor::new(shape.clone(), x.data().to_vec())
        }
        Op::Permute(perm) => {
            arity(1)?;
            let x = xs[0];
            let mut seen = vec![false; x.rank()];
            let valid = perm.len() == x.rank()
                && perm.iter().all(|&p| p < x.rank() && !std::mem::replace(&mut seen[p], true));
            if !valid {
                return Err(NumericError::InvalidShape(format!(
                    "permute: {perm:?} is not a permutation of the axes of {:?}",
                    x.shape()
                )));
            }
            let shape = perm.iter().map(|&p| x.shape()[p]).collect();
            Tensor::new(shape, kernels::permute(x.data(), x.shape(), perm))
        }
        Op::ConcatCols => {
            if xs.is_empty() {
                return Err(NumericError::InvalidShape("concat_cols needs inputs".into()));
            }
            for x in xs {
                expect_rank("concat_cols", x, 2)?;
                if x.shape()[0] != xs[0].shape()[0] {
                    return Err(mismatch("concat_cols", xs[0].shape(), x.shape()));
                }
            }
            let rows = xs[0].shape()[0];
            let total: usize = xs.iter().map(|x| x.shape()[1]).sum();
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for x in xs {
                    let cols = x.shape()[1];
                    out.extend_from_slice(&x.data()[r * cols..(r + 1) * cols]);
                }
            }
            Tensor::new(vec![rows, total], out)
        }
        Op::GatherRows(idx) => {
            arity(1)?;
            let x = xs[0];
            expect_rank("gather_rows", x, 2)?;
            let (rows, cols) = (x.shape()[0], x.shape()[1]);
            if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
                return Err(NumericError::InvalidShape(format!(
                    "gather_rows: index {bad} out of range for {rows} rows"
                )));
            }
            if idx.is_empty() {
                return Err(NumericError::InvalidShape("gather_rows: empty index list".into()));
            }
            let mut out = Vec::with_capacity(idx.len() * cols);
            for &i in idx.iter() {
                out.extend_from_slice(&x.data()[i * cols..(i + 1) * cols]);
            }
            Tensor::new(vec![idx.len(), cols], out)
        }
        Op::SumAxis(axis) => {
            arity(1)?;
            let x = xs[0];
            if *axis >= x.rank() {
                return Err(NumericError::InvalidShape(format!(
                    "sum_axis: axis {axis} out of range for shape {:?}",
                    x.shape()
                )));
            }
            let s = x.shape();
            let outer: usize = s[..*axis].iter().product();
            let n = s[*axis];
            let inner: usize = s[axis + 1..].iter().product();
            let mut out = vec![T::zero(); outer * inner];
            for o in 0..outer {
                let dst = &mut out[o * inner..(o + 1) * inner];
                for k in 0..n {
                    let src = &x.data()[(o * n + k) * inner..(o * n + k + 1) * inner];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d += v;
                    }
                }
            }
            let mut shape = s.to_vec();
            shape.remove(*axis);
            Tensor::new(shape, out)
        }
        Op::SumAll => {
            arity(1)?;
            Ok(Tensor::scalar(xs[0].sum()))
        }
        Op::BceWithLogits => {
            arity(2)?;
            let (logits, labels) = (xs[0], xs[1]);
            if logits.shape() != labels.shape() {
                return Err(mismatch("bce_with_logits", logits.shape(), labels.shape()));
            }
            bce_from_logits(logits.data(), labels.data()).map(Tensor::scalar)
        }
    }
}

/// Stable mean binary cross-entropy: `max(l,0) − l·y + ln(1+e^{−|l|})`.
pub(crate) fn bce_from_logits<T: Real>(logits: &[T], labels: &[T]) -> Result<T, NumericError> {
    if logits.is_empty() {
        return Err(NumericError::InvalidShape("bce: empty batch".into()));
    }
    let mut total = T::zero();
    for (&l, &y) in logits.iter().zip(labels) {
        if y != T::zero() && y != T::one() {
            return Err(NumericError::InvalidLabel(y.as_f64()));
        }
        total += l.max(T::zero()) - l * y + (-l.abs()).exp().ln_1p();
    }
    Ok(total / T::lit(logits.len() as f64))
}

/// Gradients w.r.t. each input of one node; `None` for inputs that do not
/// need one.
fn backward_op<T: Real>(
    op: &Op,
    xs: &[&Tensor<T>],
    out: &Tensor<T>,
    g: &Tensor<T>,
    need: &[bool],
) -> Vec<Option<Tensor<T>>> {
    let like = |t: &Tensor<T>, data: Vec<T>| Tensor::new(t.shape().to_vec(), data).expect("shape");
    match op {
        Op::Input | Op::Variable | Op::Param(_) => Vec::new(),
        Op::Linear | Op::MatMulNt => {
            let (x, w) = (xs[0], xs[1]);
            let (b, d_in, d_out) = (x.shape()[0], x.shape()[1], w.shape()[0]);
            let mut res = vec![None; xs.len()];
            if need[0] {
                res[0] = Some(like(x, kernels::matmul_nn(g.data(), w.data(), b, d_out, d_in)));
            }
            if need[1] {
                res[1] = Some(like(w, kernels::matmul_tn(g.data(), x.data(), b, d_out, d_in)));
            }
            if xs.len() == 3 && need[2] {
                let mut db = vec![T::zero(); d_out];
                for row in g.data().chunks_exact(d_out) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                res[2] = Some(like(xs[2], db));
            }
            res
        }
        Op::Conv2d { stride, padding } => {
            let (x, k) = (xs[0], xs[1]);
            let geom = conv_geom(x, k, *stride, *padding).expect("validated in forward");
            let c_out = k.shape()[0];
            let (img_len, out_len, patch) = (geom.c_in * geom.h * geom.w, geom.out_len(), geom.patch_len());
            let mut dx = need[0].then(|| vec![T::zero(); x.len()]);
            let mut dk = need[1].then(|| vec![T::zero(); k.len()]);
            for (n, img) in x.data().chunks_exact(img_len).enumerate() {
                let gn = &g.data()[n * c_out * out_len..(n + 1) * c_out * out_len];
                if let Some(dk) = dk.as_mut() {
                    let cols = kernels::im2col(img, &geom);
                    let part = kernels::matmul_nt(gn, &cols, c_out, out_len, patch);
                    for (d, v) in dk.iter_mut().zip(part) {
                        *d += v;
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    let dcols = kernels::matmul_tn(k.data(), gn, c_out, patch, out_len);
                    kernels::col2im_acc(&dcols, &geom, &mut dx[n * img_len..(n + 1) * img_len]);
                }
            }
            vec![dx.map(|d| like(x, d)), dk.map(|d| like(k, d))]
        }
        Op::AddChannelBias => {
            let x = xs[0];
            let c = x.shape()[1];
            let plane = x.shape()[2] * x.shape()[3];
            let db = need[1].then(|| {
                let mut db = vec![T::zero(); c];
                for (i, chunk) in g.data().chunks_exact(plane).enumerate() {
                    db[i % c] += chunk.iter().copied().sum::<T>();
                }
                like(xs[1], db)
            });
            vec![need[0].then(|| g.clone()), db]
        }
        Op::Add => vec![need[0].then(|| g.clone()), need[1].then(|| g.clone())],
        Op::Sub => vec![need[0].then(|| g.clone()), need[1].then(|| g.map(|v| -v))],
        Op::Mul => {
            let (a, b) = (xs[0], xs[1]);
            let prod = |o: &Tensor<T>| {
                like(o, g.data().iter().zip(o.data()).map(|(&gv, &ov)| gv * ov).collect())
            };
            vec![need[0].then(|| prod(b)), need[1].then(|| prod(a))]
        }
        Op::Scale(c) => {
            let c = T::lit(*c);
            vec![need[0].then(|| g.map(|v| v * c))]
        }
        Op::Relu => {
            let x = xs[0];
            let d = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                .collect();
            vec![Some(like(x, d))]
        }
        Op::Sigmoid => {
            let d = g
                .data()
                .iter()
                .zip(out.data())
                .map(|(&gv, &y)| gv * y * (T::one() - y))
                .collect();
            vec![Some(like(out, d))]
        }
        Op::Tanh => {
            let d = g
                .data()
                .iter()
                .zip(out.data())
                .map(|(&gv, &y)| gv * (T::one() - y * y))
                .collect();
            vec![Some(like(out, d))]
        }
        Op::Reshape(_) => vec![Some(like(xs[0], g.data().to_vec()))],
        Op::Permute(perm) => {
            let inv = kernels::inverse_permutation(perm);
            vec![Some(like(xs[0], kernels::permute(g.data(), g.shape(), &inv)))]
        }
        Op::ConcatCols => {
            let rows = g.shape()[0];
            let total = g.shape()[1];
            let mut offset = 0;
            xs.iter()
                .zip(need)
                .map(|(x, &nd)| {
                    let cols = x.shape()[1];
                    let start = offset;
                    offset += cols;
                    nd.then(|| {
                        let mut d = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + start..r * total + start + cols]);
                        }
                        like(x, d)
                    })
                })
                .collect()
        }
        Op::GatherRows(idx) => {
            let x = xs[0];
            let cols = x.shape()[1];
            let mut d = vec![T::zero(); x.len()];
            for (r, &i) in idx.iter().enumerate() {
                let src = &g.data()[r * cols..(r + 1) * cols];
                for (dv, &sv) in d[i * cols..(i + 1) * cols].iter_mut().zip(src) {
                    *dv += sv;
                }
            }
            vec![Some(like(x, d))]
        }
        Op::SumAxis(axis) => {
            let x = xs[0];
            let s = x.shape();
            let outer: usize = s[..*axis].iter().product();
            let n = s[*axis];
            let inner: usize = s[axis + 1..].iter().product();
            let mut d = Vec::with_capacity(x.len());
            for o in 0..outer {
                let src = &g.data()[o * inner..(o + 1) * inner];
                for _ in 0..n {
                    d.extend_from_slice(src);
                }
            }
            vec![Some(like(x, d))]
        }
        Op::SumAll => {
            let gv = g.data()[0];
            vec![Some(Tensor::full(xs[0].shape(), gv))]
        }
        Op::BceWithLogits => {
            let (logits, labels) = (xs[0], xs[1]);
            let scale = g.data()[0] / T::lit(logits.len() as f64);
            let d = logits
                .data()
                .iter()
                .zip(labels.data())
                .map(|(&l, &y)| (kernels::sigmoid(l) - y) * scale)
                .collect();
            vec![Some(like(logits, d)), None]
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T: Real> {
    nodes: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient w.r.t. any node; zeros when the loss does not depend on it.
    pub fn wrt(&self, id: NodeId) -> Tensor<T> {
        self.nodes[id.0].clone().unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }

    /// Gradient for every parameter placed on the tape, zero-filled when unreached.
    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor<T>> {
        self.params
    }
}

impl<T: Real> Tape<T> {
    /// Finite-value checking is on in debug builds.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), check_finite: cfg!(debug_assertions) }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn inputs_of(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    /// Number of recorded nodes with the given operation name.
    pub fn count(&self, name: &str) -> usize {
        self.nodes.iter().filter(|n| n.op.name() == name).count()
    }

    fn push_leaf(&mut self, op: Op, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { op, inputs: Vec::new(), value, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push_leaf(Op::Input, value, false)
    }

    pub fn variable(&mut self, value: Tensor<T>) -> NodeId {
        self.push_leaf(Op::Variable, value, true)
    }

    pub fn param(&mut self, name: &str, value: Tensor<T>) -> NodeId {
        self.push_leaf(Op::Param(name.to_owned()), value, true)
    }

    pub fn push(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId, NumericError> {
        if let Some(bad) = inputs.iter().find(|i| i.0 >= self.nodes.len()) {
            return Err(NumericError::InvalidShape(format!("unknown node id {}", bad.0)));
        }
        let value = {
            let xs: Vec<&Tensor<T>> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
            eval(&op, &xs)?
        };
        if self.check_finite && !value.all_finite() {
            return Err(NumericError::NonFinite { op: op.name() });
        }
        let requires_grad = match op {
            Op::BceWithLogits => self.nodes[inputs[0].0].requires_grad,
            _ => inputs.iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node { op, inputs: inputs.to_vec(), value, requires_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        self.push(Op::Linear, &[x, w, b])
    }

    pub fn matmul_nt(&mut self, x: NodeId, w: NodeId) -> Result<NodeId, NumericError> {
        self.push(Op::MatMulNt, &[x, w])
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, NumericError> {
        self.push(Op::Conv2d { stride, padding }, &[x, kernel])
    }

    pub fn add_channel_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        self.push(Op::AddChannelBias, &[x, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        self.push(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        self.push(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        self.push(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId, NumericError> {
        self.push(Op::Scale(c), &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, NumericError> {
        self.push(Op::Relu, &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, NumericError> {
        self.push(Op::Sigmoid, &[x])
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId, NumericError> {
        self.push(Op::Tanh, &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, NumericError> {
        self.push(Op::Reshape(shape.to_vec()), &[x])
    }

    pub fn permute(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId, NumericError> {
        self.push(Op::Permute(perm.to_vec()), &[x])
    }

    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId, NumericError> {
        self.push(Op::ConcatCols, xs)
    }

    pub fn gather_rows(&mut self, x: NodeId, rows: Arc<[usize]>) -> Result<NodeId, NumericError> {
        self.push(Op::GatherRows(rows), &[x])
    }

    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId, NumericError> {
        self.push(Op::SumAxis(axis), &[x])
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId, NumericError> {
        self.push(Op::SumAll, &[x])
    }

    pub fn bce_with_logits(&mut self, logits: NodeId, labels: NodeId) -> Result<NodeId, NumericError> {
        self.push(Op::BceWithLogits, &[logits, labels])
    }

    /// Reverse sweep from a single-element `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>, NumericError> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(NumericError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(loss_value.shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if node.op.is_leaf() || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let xs: Vec<&Tensor<T>> = node.inputs.iter().map(|j| &self.nodes[j.0].value).collect();
            let need: Vec<bool> = node.inputs.iter().map(|j| self.nodes[j.0].requires_grad).collect();
            let input_grads = backward_op(&node.op, &xs, &node.value, &g, &need);
            for (j, dg) in node.inputs.iter().zip(input_grads) {
                let Some(dg) = dg else { continue };
                if !self.nodes[j.0].requires_grad {
                    continue;
                }
                match &mut grads[j.0] {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(dg.data()) {
                            *a += *v;
                        }
                    }
                    slot @ None => *slot = Some(dg),
                }
            }
            grads[i] = Some(g);
        }

        let mut params = BTreeMap::new();
        for (node, g) in self.nodes.iter().zip(&grads) {
            if let Op::Param(name) = &node.op {
                let g = g.clone().unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                match params.get_mut(name) {
                    None => {
                        params.insert(name.clone(), g);
                    }
                    Some(acc) => {
                        let acc: &mut Tensor<T> = acc;
                        for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += *v;
                        }
                    }
                }
            }
        }
        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            nodes: grads,
            params,
        })
    }

    /// Re-evaluate every non-leaf node from its recorded inputs.
    pub fn replay(&self) -> Result<Vec<Tensor<T>>, NumericError> {
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = if node.op.is_leaf() {
                node.value.clone()
            } else {
                let xs: Vec<&Tensor<T>> = node.inputs.iter().map(|j| &values[j.0]).collect();
                eval(&node.op, &xs)?
            };
            values.push(v);
        }
        Ok(values)
    }

    /// True when [`Tape::replay`] reproduces every recorded value bit-for-bit.
    pub fn replay_matches(&self) -> Result<bool, NumericError> {
        Ok(self.replay()?.iter().zip(&self.nodes).all(|(v, n)| v.bit_eq(&n.value)))
    }

    /// Hash of the sign pattern of every ReLU input. Two evaluations with the
    /// same hash took the same branch at every kink.
    pub fn relu_pattern_hash(&self) -> u64 {
        const FNV_PRIME: u64 = 0x100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for node in self.nodes.iter().filter(|n| n.op == Op::Relu) {
            for v in self.nodes[node.inputs[0].0].value.data() {
                h ^= u64::from(*v > T::zero());
                h = h.wrapping_mul(FNV_PRIME);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn linear_identity_and_hand_arithmetic() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.input(t(&[2], &[0.0, 0.0]));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);

        let x = tape.input(t(&[1, 2], &[1.0, 1.0]));
        let w = tape.input(t(&[1, 2], &[2.0, 3.0]));
        let b = tape.input(t(&[1], &[-5.0]));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0]);
    }

    #[test]
    fn linear_zero_input_gives_bias_rows() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::zeros(&[3, 4]));
        let w = tape.input(Tensor::full(&[2, 4], 0.7));
        let b = tape.input(Tensor::from_vec(vec![1.5, -2.0]));
        let y = tape.linear(x, w, b).unwrap();
        for row in tape.value(y).data().chunks(2) {
            assert_eq!(row, &[1.5, -2.0]);
        }
    }

    #[test]
    fn linear_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::zeros(&[1, 3]));
        let w = tape.input(Tensor::zeros(&[2, 4]));
        let b = tape.input(Tensor::zeros(&[2]));
        let err = tape.linear(x, w, b).unwrap_err().to_string();
        assert!(err.contains("[1, 3]") && err.contains("[2, 4]"), "{err}");
    }

    #[test]
    fn conv_identity_kernel() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let x = tape.input(t(&[1, 1, 3, 4], &data));
        let k = tape.input(t(&[1, 1, 1, 1], &[1.0]));
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 3, 4]);
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn conv_all_ones_and_average() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::ones(&[1, 1, 2, 2]));
        let k = tape.input(Tensor::ones(&[1, 1, 2, 2]));
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);

        let img: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let x = tape.input(t(&[1, 1, 3, 3], &img));
        let k = tape.input(Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0));
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        assert!((tape.value(y).data()[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn conv_kernel_larger_than_input_errors() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::ones(&[1, 1, 2, 2]));
        let k = tape.input(Tensor::ones(&[1, 1, 3, 3]));
        assert!(matches!(tape.conv2d(x, k, 1, 0), Err(NumericError::KernelTooLarge { .. })));
        assert!(tape.conv2d(x, k, 1, 1).is_ok());
    }

    #[test]
    fn backward_square() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), Some(6.0));
    }

    #[test]
    fn backward_sigmoid_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(Tensor::scalar(0.0));
        let y = tape.sigmoid(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), Some(0.25));
    }

    #[test]
    fn backward_sum_is_all_ones() {
        let mut tape = Tape::<f32>::new();
        let x = tape.variable(Tensor::full(&[2, 3, 4], 0.3));
        let s = tape.sum_all(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.wrt(x).bit_eq(&Tensor::ones(&[2, 3, 4])));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f32>::new();
        let x = tape.variable(Tensor::ones(&[2]));
        let y = tape.relu(x).unwrap();
        assert!(matches!(tape.backward(y), Err(NumericError::NonScalarLoss(_))));
    }

    #[test]
    fn unused_param_gets_exact_zero() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param("a", Tensor::full(&[3], 2.0));
        let _b = tape.param("b", Tensor::full(&[2, 2], 5.0));
        let s = tape.sum_all(a).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.params()["b"].bit_eq(&Tensor::zeros(&[2, 2])));
        assert!(g.params()["a"].bit_eq(&Tensor::ones(&[3])));
    }

    #[test]
    fn finite_checks_flag_overflow() {
        let mut tape = Tape::<f32>::new().with_finite_checks(true);
        let x = tape.input(Tensor::scalar(f32::MAX));
        assert!(matches!(tape.scale(x, 10.0), Err(NumericError::NonFinite { .. })));
    }

    #[test]
    fn replay_reproduces_values() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap());
        let w = tape.param("w", Tensor::full(&[4, 3], 0.25));
        let b = tape.param("b", Tensor::full(&[4], -0.1));
        let h = tape.linear(x, w, b).unwrap();
        let h = tape.tanh(h).unwrap();
        let s = tape.sum_all(h).unwrap();
        assert!(tape.replay_matches().unwrap());
        assert_eq!(tape.replay().unwrap().last().unwrap().data(), tape.value(s).data());
    }
}
