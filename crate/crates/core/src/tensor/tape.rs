//! Reverse-mode autodiff over a recorded op list.
//!
//! A [`Tape`] is built fresh for each forward pass: parameters are bound as
//! shared leaves (no weight copies), ops append nodes, and [`Tape::backward`]
//! walks the record once in reverse. Gradients of bound parameters are read
//! back by leaf id and accumulated into [`Parameter::grad`] by the caller.

use std::sync::Arc;

use super::kernels::{self, ConvGeom};
use super::{Parameter, Scalar, Tensor};
use crate::error::{Error, Result};

/// Probability clamp bound used by the losses and `clamp_unit`.
pub const PROB_EPS: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

/// Spatial padding mode for `conv2d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    Same,
}

enum Op<E> {
    Leaf,
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Affine { x: ValueId, mul: E },
    Sigmoid(ValueId),
    Tanh(ValueId),
    Relu(ValueId),
    MatMul(ValueId, ValueId),
    MatVec(ValueId, ValueId),
    Conv2d { input: ValueId, kernel: ValueId, bias: ValueId, geom: ConvGeom },
    MaxPool2d { input: ValueId, argmax: Vec<u32> },
    Reshape(ValueId),
    StackRows(Vec<ValueId>),
    SliceRow { input: ValueId, row: usize },
    Sum(ValueId),
    Mean(ValueId),
    Bce { pred: ValueId, target: E },
    Cce { probs: ValueId, class: usize },
    ClampUnit(ValueId),
}

struct Node<E> {
    value: Arc<Tensor<E>>,
    grad: Option<Tensor<E>>,
    needs_grad: bool,
    op: Op<E>,
}

pub struct Tape<E = f32> {
    nodes: Vec<Node<E>>,
    backward_done: bool,
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop the recorded computation so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backward_done = false;
    }

    /// Constant input; no gradient is tracked for it.
    pub fn leaf(&mut self, value: Tensor<E>) -> ValueId {
        self.push_unchecked(Arc::new(value), Op::Leaf, false)
    }

    /// Input leaf whose gradient is wanted (used by tests probing d(loss)/d(input)).
    pub fn leaf_with_grad(&mut self, value: Tensor<E>) -> ValueId {
        self.push_unchecked(Arc::new(value), Op::Leaf, true)
    }

    /// Bind a parameter as a shared leaf. Frozen parameters join as constants,
    /// so no gradient work is spent upstream of them.
    pub fn param(&mut self, p: &Parameter<E>) -> ValueId {
        self.push_unchecked(p.shared_value(), Op::Leaf, p.trainable())
    }

    pub fn value(&self, id: ValueId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Gradient of a node after [`Tape::backward`]; `None` means zero.
    pub fn grad(&self, id: ValueId) -> Option<&Tensor<E>> {
        self.nodes[id.0].grad.as_ref()
    }

    fn push_unchecked(&mut self, value: Arc<Tensor<E>>, op: Op<E>, needs_grad: bool) -> ValueId {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        ValueId(self.nodes.len() - 1)
    }

    /// Append an op output, rejecting non-finite values outright.
    fn push(&mut self, name: &'static str, value: Tensor<E>, op: Op<E>) -> Result<ValueId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let needs = self.op_needs_grad(&op);
        Ok(self.push_unchecked(Arc::new(value), op, needs))
    }

    fn op_needs_grad(&self, op: &Op<E>) -> bool {
        let n = |id: &ValueId| self.nodes[id.0].needs_grad;
        match op {
            Op::Leaf => false,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::MatVec(a, b) => {
                n(a) || n(b)
            }
            Op::Affine { x, .. }
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Relu(x)
            | Op::Reshape(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::ClampUnit(x) => n(x),
            Op::Conv2d { input, kernel, bias, .. } => n(input) || n(kernel) || n(bias),
            Op::MaxPool2d { input, .. } => n(input),
            Op::StackRows(parts) => parts.iter().any(n),
            Op::SliceRow { input, .. } => n(input),
            Op::Bce { pred, .. } => n(pred),
            Op::Cce { probs, .. } => n(probs),
        }
    }

    fn check_same_shape(&self, op: &'static str, a: ValueId, b: ValueId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&mut self, name: &'static str, a: ValueId, b: ValueId, f: impl Fn(E, E) -> E, op: Op<E>) -> Result<ValueId> {
        self.check_same_shape(name, a, b)?;
        let out = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| f(*x, *y))
                .collect(),
        };
        self.push(name, out, op)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise `mul * x + add` with scalar constants (the only broadcast).
    pub fn affine(&mut self, x: ValueId, mul: E, add: E) -> Result<ValueId> {
        let out = self.value(x).map(|v| mul * v + add);
        let _ = add;
        self.push("affine", out, Op::Affine { x, mul })
    }

    pub fn sigmoid(&mut self, x: ValueId) -> Result<ValueId> {
        let out = self.value(x).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: ValueId) -> Result<ValueId> {
        let out = self.value(x).map(|v| v.tanh());
        self.push("tanh", out, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: ValueId) -> Result<ValueId> {
        let out = self.value(x).map(|v| if v > E::zero() { v } else { E::zero() });
        self.push("relu", out, Op::Relu(x))
    }

    /// `a[m,k] * b[k,n]`, strictly 2-d.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Tensor { shape: vec![m, n], data }, Op::MatMul(a, b))
    }

    /// `w[n,d] * x[d]` -> `[n]`.
    pub fn matvec(&mut self, w: ValueId, x: ValueId) -> Result<ValueId> {
        let (sw, sx) = (self.shape(w).to_vec(), self.shape(x).to_vec());
        if sw.len() != 2 || sx.len() != 1 || sw[1] != sx[0] {
            return Err(Error::ShapeMismatch { op: "matvec", lhs: sw, rhs: sx });
        }
        let (n, d) = (sw[0], sw[1]);
        let data = kernels::matvec(self.value(w).data(), self.value(x).data(), n, d);
        self.push("matvec", Tensor { shape: vec![n], data }, Op::MatVec(w, x))
    }

    /// Cross-correlation of `input [C,H,W]` with `kernel [F,C,kh,kw]` plus `bias [F]`.
    pub fn conv2d(
        &mut self,
        input: ValueId,
        kernel: ValueId,
        bias: ValueId,
        stride: usize,
        padding: Padding,
    ) -> Result<ValueId> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        if si.len() != 3 || sk.len() != 4 || si[0] != sk[1] {
            return Err(Error::ShapeMismatch { op: "conv2d", lhs: si, rhs: sk });
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d: stride must be >= 1".into()));
        }
        let (in_ch, in_h, in_w) = (si[0], si[1], si[2]);
        let (out_ch, kh, kw) = (sk[0], sk[2], sk[3]);
        if self.shape(bias) != [out_ch] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: self.shape(bias).to_vec(),
                rhs: vec![out_ch],
            });
        }
        let geom = conv_geometry(in_ch, in_h, in_w, out_ch, kh, kw, stride, padding)?;
        let data = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            geom,
        );
        let shape = vec![geom.out_ch, geom.out_h, geom.out_w];
        self.push("conv2d", Tensor { shape, data }, Op::Conv2d { input, kernel, bias, geom })
    }

    pub fn maxpool2d(&mut self, input: ValueId, window: usize, stride: usize) -> Result<ValueId> {
        let si = self.shape(input).to_vec();
        if si.len() != 3 {
            return Err(Error::InvalidShape {
                op: "maxpool2d",
                shape: si,
                reason: "expected [C,H,W]".into(),
            });
        }
        if window == 0 || stride == 0 {
            return Err(Error::InvalidArgument("maxpool2d: window and stride must be >= 1".into()));
        }
        if window > si[1] || window > si[2] {
            return Err(Error::InvalidShape {
                op: "maxpool2d",
                shape: si,
                reason: format!("window {window} larger than input"),
            });
        }
        let (data, argmax, oh, ow) =
            kernels::maxpool2d_forward(self.value(input).data(), si[0], si[1], si[2], window, stride);
        self.push(
            "maxpool2d",
            Tensor { shape: vec![si[0], oh, ow], data },
            Op::MaxPool2d { input, argmax },
        )
    }

    pub fn reshape(&mut self, x: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        let out = self.value(x).reshaped(shape)?;
        self.push("reshape", out, Op::Reshape(x))
    }

    /// Stack L equal-length vectors into an `[L, d]` matrix.
    pub fn stack_rows(&mut self, rows: &[ValueId]) -> Result<ValueId> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("stack_rows: no rows".into()));
        }
        let d = self.shape(rows[0]).to_vec();
        if d.len() != 1 {
            return Err(Error::InvalidShape {
                op: "stack_rows",
                shape: d,
                reason: "rows must be vectors".into(),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * d[0]);
        for &r in rows {
            self.check_same_shape("stack_rows", rows[0], r)?;
            data.extend_from_slice(self.value(r).data());
        }
        let shape = vec![rows.len(), d[0]];
        self.push("stack_rows", Tensor { shape, data }, Op::StackRows(rows.to_vec()))
    }

    /// Row `row` of an `[L, d]` matrix as a `[d]` vector.
    pub fn slice_row(&mut self, input: ValueId, row: usize) -> Result<ValueId> {
        let s = self.shape(input).to_vec();
        if s.len() != 2 || row >= s[0] {
            return Err(Error::InvalidShape {
                op: "slice_row",
                shape: s,
                reason: format!("row {row} out of range"),
            });
        }
        let d = s[1];
        let data = self.value(input).data()[row * d..(row + 1) * d].to_vec();
        self.push("slice_row", Tensor { shape: vec![d], data }, Op::SliceRow { input, row })
    }

    pub fn sum(&mut self, x: ValueId) -> Result<ValueId> {
        let total: E = self.value(x).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum(x))
    }

    pub fn mean(&mut self, x: ValueId) -> Result<ValueId> {
        let n = E::of(self.value(x).numel() as f64);
        let total: E = self.value(x).data().iter().copied().sum();
        self.push("mean", Tensor::scalar(total / n), Op::Mean(x))
    }

    /// Binary cross-entropy of a scalar probability against target 0 or 1,
    /// with the probability clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce_loss(&mut self, pred: ValueId, target: E) -> Result<ValueId> {
        if self.value(pred).numel() != 1 {
            return Err(Error::NotScalar { shape: self.shape(pred).to_vec() });
        }
        if target != E::zero() && target != E::one() {
            return Err(Error::InvalidArgument(format!(
                "bce target must be 0 or 1, got {target}"
            )));
        }
        let p = clamp_prob(self.value(pred).data()[0]);
        let loss = -(target * p.ln() + (E::one() - target) * (E::one() - p).ln());
        self.push("bce", Tensor::scalar(loss), Op::Bce { pred, target })
    }

    /// Categorical cross-entropy of a probability vector against a class index.
    pub fn cce_loss(&mut self, probs: ValueId, class: usize) -> Result<ValueId> {
        let s = self.shape(probs).to_vec();
        if s.len() != 1 {
            return Err(Error::InvalidShape {
                op: "cce",
                shape: s,
                reason: "expected a probability vector".into(),
            });
        }
        if class >= s[0] {
            return Err(Error::InvalidArgument(format!(
                "cce class {class} out of range for {} classes",
                s[0]
            )));
        }
        let p = clamp_prob(self.value(probs).data()[class]);
        self.push("cce", Tensor::scalar(-p.ln()), Op::Cce { probs, class })
    }

    /// Clamp into the open unit interval `[1e-7, 1 - 1e-7]`.
    pub fn clamp_unit(&mut self, x: ValueId) -> Result<ValueId> {
        let out = self.value(x).map(clamp_prob);
        self.push("clamp_unit", out, Op::ClampUnit(x))
    }

    /// Reverse sweep from a scalar loss. Populates gradients of every
    /// reachable node that tracks one; may be called once per recording.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardAlreadyRun);
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NotScalar {
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        self.backward_done = true;
        let seed_shape = self.nodes[loss.0].value.shape().to_vec();
        self.nodes[loss.0].grad = Some(Tensor::ones(&seed_shape));

        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            // Intermediate grads are consumed as we go; leaves keep theirs.
            let gout = self.nodes[i].grad.take().expect("checked above");
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            let out_value = Arc::clone(&self.nodes[i].value);
            self.backward_op(op, &gout, &out_value)?;
        }
        Ok(())
    }

    fn backward_op(&mut self, op: Op<E>, gout: &Tensor<E>, out: &Tensor<E>) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(a, gout.data());
                self.accum(b, gout.data());
            }
            Op::Sub(a, b) => {
                self.accum(a, gout.data());
                self.accum_scaled(b, gout.data(), -E::one());
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    let da: Vec<E> = gout
                        .data()
                        .iter()
                        .zip(self.val_data(b))
                        .map(|(g, y)| *g * *y)
                        .collect();
                    self.accum(a, &da);
                }
                if self.wants(b) {
                    let db: Vec<E> = gout
                        .data()
                        .iter()
                        .zip(self.val_data(a))
                        .map(|(g, x)| *g * *x)
                        .collect();
                    self.accum(b, &db);
                }
            }
            Op::Affine { x, mul } => self.accum_scaled(x, gout.data(), mul),
            Op::Sigmoid(x) => {
                let ds: Vec<E> = gout
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(g, s)| *g * *s * (E::one() - *s))
                    .collect();
                self.accum(x, &ds);
            }
            Op::Tanh(x) => {
                let dt: Vec<E> = gout
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(g, t)| *g * (E::one() - *t * *t))
                    .collect();
                self.accum(x, &dt);
            }
            Op::Relu(x) => {
                let dr: Vec<E> = gout
                    .data()
                    .iter()
                    .zip(self.val_data(x))
                    .map(|(g, v)| if *v > E::zero() { *g } else { E::zero() })
                    .collect();
                self.accum(x, &dr);
            }
            Op::MatMul(a, b) => {
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (da, db) = kernels::matmul_backward(
                    self.val_data(a),
                    self.val_data(b),
                    gout.data(),
                    m,
                    k,
                    n,
                );
                self.accum(a, &da);
                self.accum(b, &db);
            }
            Op::MatVec(w, x) => {
                let sw = self.shape(w).to_vec();
                let (dw, dx) = kernels::matvec_backward(
                    self.val_data(w),
                    self.val_data(x),
                    gout.data(),
                    sw[0],
                    sw[1],
                );
                self.accum(w, &dw);
                self.accum(x, &dx);
            }
            Op::Conv2d { input, kernel, bias, geom } => {
                let (dinput, dkernel, dbias) = kernels::conv2d_backward(
                    self.val_data(input),
                    self.val_data(kernel),
                    gout.data(),
                    geom,
                    self.wants(input),
                );
                if let Some(di) = dinput {
                    self.accum(input, &di);
                }
                self.accum(kernel, &dkernel);
                self.accum(bias, &dbias);
            }
            Op::MaxPool2d { input, argmax } => {
                if self.wants(input) {
                    let mut di = vec![E::zero(); self.value(input).numel()];
                    for (g, &idx) in gout.data().iter().zip(&argmax) {
                        di[idx as usize] = di[idx as usize] + *g;
                    }
                    self.accum(input, &di);
                }
            }
            Op::Reshape(x) => self.accum(x, gout.data()),
            Op::StackRows(rows) => {
                let d = self.value(rows[0]).numel();
                for (t, &r) in rows.iter().enumerate() {
                    self.accum(r, &gout.data()[t * d..(t + 1) * d]);
                }
            }
            Op::SliceRow { input, row } => {
                if self.wants(input) {
                    let d = gout.numel();
                    let mut di = vec![E::zero(); self.value(input).numel()];
                    di[row * d..(row + 1) * d].copy_from_slice(gout.data());
                    self.accum(input, &di);
                }
            }
            Op::Sum(x) => {
                let g = gout.data()[0];
                let di = vec![g; self.value(x).numel()];
                self.accum(x, &di);
            }
            Op::Mean(x) => {
                let n = E::of(self.value(x).numel() as f64);
                let g = gout.data()[0] / n;
                let di = vec![g; self.value(x).numel()];
                self.accum(x, &di);
            }
            Op::Bce { pred, target } => {
                let raw = self.val_data(pred)[0];
                let d = if inside_clamp(raw) {
                    let p = clamp_prob(raw);
                    -target / p + (E::one() - target) / (E::one() - p)
                } else {
                    E::zero()
                };
                self.accum(pred, &[gout.data()[0] * d]);
            }
            Op::Cce { probs, class } => {
                if self.wants(probs) {
                    let raw = self.val_data(probs)[class];
                    let mut di = vec![E::zero(); self.value(probs).numel()];
                    if inside_clamp(raw) {
                        di[class] = -gout.data()[0] / clamp_prob(raw);
                    }
                    self.accum(probs, &di);
                }
            }
            Op::ClampUnit(x) => {
                let dx: Vec<E> = gout
                    .data()
                    .iter()
                    .zip(self.val_data(x))
                    .map(|(g, v)| if inside_clamp(*v) { *g } else { E::zero() })
                    .collect();
                self.accum(x, &dx);
            }
        }
        Ok(())
    }

    fn wants(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn val_data(&self, id: ValueId) -> &[E] {
        self.nodes[id.0].value.data()
    }

    fn accum(&mut self, id: ValueId, contrib: &[E]) {
        self.accum_scaled(id, contrib, E::one())
    }

    fn accum_scaled(&mut self, id: ValueId, contrib: &[E], scale: E) {
        let node = &mut self.nodes[id.0];
        if !node.needs_grad {
            return;
        }
        let grad = node
            .grad
            .get_or_insert_with(|| Tensor::zeros(node.value.shape()));
        for (g, c) in grad.data.iter_mut().zip(contrib) {
            *g = *g + scale * *c;
        }
    }
}

fn sigmoid<E: Scalar>(x: E) -> E {
    if x >= E::zero() {
        E::one() / (E::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::one() + e)
    }
}

fn clamp_prob<E: Scalar>(p: E) -> E {
    let lo = E::of(PROB_EPS);
    let hi = E::one() - lo;
    p.max(lo).min(hi)
}

fn inside_clamp<E: Scalar>(p: E) -> bool {
    let lo = E::of(PROB_EPS);
    p > lo && p < E::one() - lo
}

fn conv_geometry(
    in_ch: usize,
    in_h: usize,
    in_w: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: Padding,
) -> Result<ConvGeom> {
    let (out_h, out_w, pad_top, pad_left) = match padding {
        Padding::Valid => {
            if kh > in_h || kw > in_w {
                return Err(Error::InvalidShape {
                    op: "conv2d",
                    shape: vec![in_ch, in_h, in_w],
                    reason: format!("kernel {kh}x{kw} larger than padded input"),
                });
            }
            ((in_h - kh) / stride + 1, (in_w - kw) / stride + 1, 0, 0)
        }
        Padding::Same => {
            let out_h = in_h.div_ceil(stride);
            let out_w = in_w.div_ceil(stride);
            let pad_h = ((out_h - 1) * stride + kh).saturating_sub(in_h);
            let pad_w = ((out_w - 1) * stride + kw).saturating_sub(in_w);
            if kh > in_h + pad_h || kw > in_w + pad_w {
                return Err(Error::InvalidShape {
                    op: "conv2d",
                    shape: vec![in_ch, in_h, in_w],
                    reason: format!("kernel {kh}x{kw} larger than padded input"),
                });
            }
            (out_h, out_w, pad_h / 2, pad_w / 2)
        }
    };
    Ok(ConvGeom {
        in_ch,
        in_h,
        in_w,
        out_ch,
        out_h,
        out_w,
        kh,
        kw,
        stride,
        pad_top,
        pad_left,
    })
}
