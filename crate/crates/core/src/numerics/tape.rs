//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! A [`Tape`] is built once per forward pass: every differentiable call
//! appends a node holding its output value and the recipe for its backward
//! rule. [`Tape::backward`] replays the nodes in reverse and returns a
//! [`Gradients`] table indexed by [`Var`]. Constants never receive gradient.

use std::fmt;

use super::kernels::{self, align_corners_taps, LayerNormParts};
use super::tensor::{axis_extents, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation whose forward value is computed by the caller.
///
/// `backward` receives the input values, the output value and the upstream
/// gradient, and returns one optional gradient per input.
pub trait CustomOp: fmt::Debug {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

#[derive(Debug)]
enum Op {
    Input,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    LeakyRelu(Var, f64),
    QuickGelu(Var),
    Relu(Var),
    Softmax(Var, usize),
    MeanAxis(Var, usize),
    Concat(Var, Var, usize),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Stack(Vec<Var>),
    Sum(Var),
    Cosine(Var, Var),
    Upsample(Var),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of executed operations. Single-threaded; build one per step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    degenerate_cosines: usize,
    /// Side of the kink for every ReLU-family input, when recording.
    kinks: Option<Vec<bool>>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn accumulate(slot: &mut Option<Tensor>, grad: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&grad),
        None => *slot = Some(grad),
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// `a * b^T` for row-major matrices.
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[0];
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(&[m, n], out).expect("matmul_nt shape")
}

/// `a^T * b` for row-major matrices.
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &bd[p * n..(p + 1) * n];
        for i in 0..m {
            let av = ad[p * m + i];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(&[m, n], out).expect("matmul_tn shape")
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Drops every node recorded after the first `len`. Vars created after
    /// that point become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of cosine similarities evaluated with a zero-norm input.
    pub fn degenerate_cosines(&self) -> usize {
        self.degenerate_cosines
    }

    /// Starts recording, for every later ReLU and leaky ReLU element,
    /// whether its input is positive.
    pub fn record_kinks(&mut self) {
        self.kinks.get_or_insert_with(Vec::new);
    }

    /// The recorded kink sides, if recording is on.
    pub fn kink_sides(&self) -> Option<&[bool]> {
        self.kinks.as_deref()
    }

    fn note_kinks(&mut self, x: Var) {
        if let Some(kinks) = &mut self.kinks {
            kinks.extend(self.nodes[x.0].value.data().iter().map(|&v| v > 0.0));
        }
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that receives gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::matmul(self.value(a), self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = kernels::transpose(self.value(a))?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        check_finite("add", &value)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        check_finite("sub", &value)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        check_finite("mul", &value)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds a vector to every row (last axis) of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let width = *xv.shape().last().unwrap_or(&0);
        if bv.shape() != [width] {
            return Err(Error::shape(
                "add_row",
                format!("bias {:?} does not match rows of {:?}", bv.shape(), xv.shape()),
            ));
        }
        let mut value = xv.clone();
        if width > 0 {
            for row in value.data_mut().chunks_mut(width) {
                for (v, b) in row.iter_mut().zip(bv.data()) {
                    *v += b;
                }
            }
        }
        check_finite("add_row", &value)?;
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(value, Op::AddRow(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v * factor);
        check_finite("scale", &value)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Scale(x, factor), rg))
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v + offset);
        check_finite("add_scalar", &value)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::AddScalar(x), rg))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let LayerNormParts {
            output,
            normalized,
            inv_std,
        } = kernels::layer_norm_parts(self.value(x), self.value(gain), self.value(bias), eps)?;
        let rg = self.any_grad(&[x, gain, bias]);
        Ok(self.push(
            output,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::invalid("slope", "must lie in [0, 1)"));
        }
        self.note_kinks(x);
        let value = kernels::leaky_relu(self.value(x), slope);
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::LeakyRelu(x, slope), rg))
    }

    pub fn quick_gelu(&mut self, x: Var) -> Result<Var> {
        let value = kernels::quick_gelu(self.value(x));
        check_finite("quick_gelu", &value)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::QuickGelu(x), rg))
    }

    /// `max(0, x)`; the gradient at exactly 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.note_kinks(x);
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Relu(x), rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = kernels::softmax(self.value(x), axis)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Softmax(x, axis), rg))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = kernels::mean_axis(self.value(x), axis)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::MeanAxis(x, axis), rg))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let value = kernels::concat_axis(self.value(a), self.value(b), axis)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Concat(a, b, axis), rg))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = kernels::narrow(self.value(x), axis, start, len)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Narrow { x, axis, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Stacks equally shaped values along a new leading axis.
    pub fn stack(&mut self, vars: &[Var]) -> Result<Var> {
        let first = vars
            .first()
            .ok_or_else(|| Error::shape("stack", "nothing to stack"))?;
        let shape = self.value(*first).shape().to_vec();
        let mut data = Vec::new();
        for v in vars {
            let t = self.value(*v);
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "stack",
                    format!("{:?} vs {:?}", t.shape(), shape),
                ));
            }
            data.extend_from_slice(t.data());
        }
        let mut out_shape = vec![vars.len()];
        out_shape.extend_from_slice(&shape);
        let value = Tensor::new(&out_shape, data)?;
        let rg = self.any_grad(vars);
        Ok(self.push(value, Op::Stack(vars.to_vec()), rg))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        check_finite("sum", &value)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Sum(x), rg))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::Empty("mean of an empty tensor"));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Cosine similarity of two vectors. A zero-norm input yields 0 with zero
    /// gradient and bumps [`Tape::degenerate_cosines`].
    pub fn cosine(&mut self, u: Var, v: Var) -> Result<Var> {
        let (c, degenerate) = kernels::cosine_similarity(self.value(u), self.value(v))?;
        if degenerate {
            self.degenerate_cosines += 1;
        }
        let rg = self.any_grad(&[u, v]);
        Ok(self.push(Tensor::scalar(c), Op::Cosine(u, v), rg))
    }

    pub fn bilinear_upsample(&mut self, x: Var, height: usize, width: usize) -> Result<Var> {
        let value = kernels::bilinear_upsample(self.value(x), height, width)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Upsample(x), rg))
    }

    /// Records an operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let rg = self.any_grad(inputs);
        Ok(self.push(value, Op::Custom(inputs.to_vec(), op), rg))
    }

    /// Back-propagates from a scalar `loss`.
    ///
    /// Every node that requires gradient and is reachable from `loss` gets an
    /// entry; unreachable leaves have none (read as zero).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let contributions = self.node_backward(node, &g)?;
            for (var, grad) in contributions {
                if self.nodes[var.0].requires_grad {
                    accumulate(&mut grads[var.0], grad);
                }
            }
            if matches!(node.op, Op::Input) {
                grads[idx] = Some(g);
            }
        }
        for (idx, slot) in grads.iter().enumerate() {
            if let Some(g) = slot {
                if !g.all_finite() {
                    return Err(Error::NonFinite {
                        op: op_name(&self.nodes[idx].op),
                    });
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn node_backward(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let out = match &node.op {
            Op::Input => Vec::new(),
            Op::MatMul(a, b) => vec![(*a, matmul_nt(g, val(*b))), (*b, matmul_tn(val(*a), g))],
            Op::Transpose(a) => vec![(*a, kernels::transpose(g)?)],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => vec![
                (*a, g.zip_map(val(*b), |x, y| x * y)?),
                (*b, g.zip_map(val(*a), |x, y| x * y)?),
            ],
            Op::AddRow(x, bias) => {
                let width = val(*bias).numel();
                let mut db = vec![0.0; width];
                if width > 0 {
                    for row in g.data().chunks(width) {
                        for (acc, v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
                vec![(*x, g.clone()), (*bias, Tensor::vector(db))]
            }
            Op::Scale(x, factor) => vec![(*x, g.map(|v| v * factor))],
            Op::AddScalar(x) => vec![(*x, g.clone())],
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let gv = val(*gain).data();
                let width = gv.len();
                let mut dx = vec![0.0; g.numel()];
                let mut dgain = vec![0.0; width];
                let mut dbias = vec![0.0; width];
                for (r, inv) in inv_std.iter().enumerate() {
                    let gy = &g.data()[r * width..(r + 1) * width];
                    let xh = &normalized[r * width..(r + 1) * width];
                    let mut mean_g = 0.0;
                    let mut mean_gx = 0.0;
                    for c in 0..width {
                        let gh = gy[c] * gv[c];
                        mean_g += gh;
                        mean_gx += gh * xh[c];
                        dgain[c] += gy[c] * xh[c];
                        dbias[c] += gy[c];
                    }
                    mean_g /= width as f64;
                    mean_gx /= width as f64;
                    for c in 0..width {
                        let gh = gy[c] * gv[c];
                        dx[r * width + c] = inv * (gh - mean_g - xh[c] * mean_gx);
                    }
                }
                vec![
                    (*x, Tensor::new(g.shape(), dx)?),
                    (*gain, Tensor::vector(dgain)),
                    (*bias, Tensor::vector(dbias)),
                ]
            }
            Op::LeakyRelu(x, slope) => {
                vec![(*x, g.zip_map(val(*x), |gv, xv| if xv >= 0.0 { gv } else { slope * gv })?)]
            }
            Op::QuickGelu(x) => vec![(
                *x,
                g.zip_map(val(*x), |gv, xv| {
                    let s = 1.0 / (1.0 + (-1.702 * xv).exp());
                    gv * (s + 1.702 * xv * s * (1.0 - s))
                })?,
            )],
            Op::Relu(x) => {
                vec![(*x, g.zip_map(val(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })?)]
            }
            Op::Softmax(x, axis) => {
                let y = &node.value;
                let (outer, len, inner) = axis_extents(y.shape(), *axis);
                let (yd, gd) = (y.data(), g.data());
                let mut dx = vec![0.0; yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + i;
                        let dot: f64 = (0..len).map(|j| gd[at(j)] * yd[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] = yd[at(j)] * (gd[at(j)] - dot);
                        }
                    }
                }
                vec![(*x, Tensor::new(y.shape(), dx)?)]
            }
            Op::MeanAxis(x, axis) => {
                let shape = val(*x).shape();
                let (outer, len, inner) = axis_extents(shape, *axis);
                let scale = 1.0 / len as f64;
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for j in 0..len {
                        let dst = &mut dx[(o * len + j) * inner..(o * len + j + 1) * inner];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d = s * scale;
                        }
                    }
                }
                vec![(*x, Tensor::new(shape, dx)?)]
            }
            Op::Concat(a, b, axis) => {
                let la = val(*a).shape()[*axis];
                let lb = val(*b).shape()[*axis];
                vec![
                    (*a, kernels::narrow(g, *axis, 0, la)?),
                    (*b, kernels::narrow(g, *axis, la, lb)?),
                ]
            }
            Op::Narrow { x, axis, start } => {
                let shape = val(*x).shape();
                let (outer, full, inner) = axis_extents(shape, *axis);
                let len = g.shape()[*axis];
                let mut dx = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                vec![(*x, Tensor::new(shape, dx)?)]
            }
            Op::Reshape(x) => vec![(*x, g.reshape(val(*x).shape())?)],
            Op::Stack(vars) => {
                let piece = g.numel() / vars.len();
                let shape = val(vars[0]).shape();
                vars.iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let part = g.data()[i * piece..(i + 1) * piece].to_vec();
                        Ok((*v, Tensor::new(shape, part)?))
                    })
                    .collect::<Result<_>>()?
            }
            Op::Sum(x) => vec![(*x, Tensor::full(val(*x).shape(), g.item()))],
            Op::Cosine(u, v) => {
                let (uv, vv) = (val(*u), val(*v));
                let (nu, nv) = (uv.norm(), vv.norm());
                if nu == 0.0 || nv == 0.0 {
                    return Ok(vec![
                        (*u, Tensor::zeros(uv.shape())),
                        (*v, Tensor::zeros(vv.shape())),
                    ]);
                }
                let c = node.value.item();
                let gs = g.item();
                let du = vv.zip_map(uv, |b, a| gs * (b / (nu * nv) - c * a / (nu * nu)))?;
                let dv = uv.zip_map(vv, |a, b| gs * (a / (nu * nv) - c * b / (nv * nv)))?;
                vec![(*u, du), (*v, dv)]
            }
            Op::Upsample(x) => {
                let shape = val(*x).shape();
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                let (height, width) = (g.shape()[0], g.shape()[1]);
                let rows = align_corners_taps(h, height);
                let cols = align_corners_taps(w, width);
                let mut dx = vec![0.0; h * w * c];
                for (y, ty) in rows.iter().enumerate() {
                    for (xx, tx) in cols.iter().enumerate() {
                        let src = &g.data()[(y * width + xx) * c..(y * width + xx + 1) * c];
                        let taps = [
                            ((ty.lo, tx.lo), (1.0 - ty.frac) * (1.0 - tx.frac)),
                            ((ty.lo, tx.hi), (1.0 - ty.frac) * tx.frac),
                            ((ty.hi, tx.lo), ty.frac * (1.0 - tx.frac)),
                            ((ty.hi, tx.hi), ty.frac * tx.frac),
                        ];
                        for ((sy, sx), wgt) in taps {
                            if wgt == 0.0 {
                                continue;
                            }
                            let dst = &mut dx[(sy * w + sx) * c..(sy * w + sx + 1) * c];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wgt * s;
                            }
                        }
                    }
                }
                vec![(*x, Tensor::new(shape, dx)?)]
            }
            Op::Custom(inputs, op) => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
                op.backward(&values, &node.value, g)
                    .into_iter()
                    .zip(inputs)
                    .filter_map(|(grad, v)| grad.map(|t| (*v, t)))
                    .collect()
            }
        };
        Ok(out)
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Input => "input",
        Op::MatMul(..) => "matmul",
        Op::Transpose(..) => "transpose",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddRow(..) => "add_row",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::LayerNorm { .. } => "layer_norm",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::QuickGelu(..) => "quick_gelu",
        Op::Relu(..) => "relu",
        Op::Softmax(..) => "softmax",
        Op::MeanAxis(..) => "mean_axis",
        Op::Concat(..) => "concat",
        Op::Narrow { .. } => "narrow",
        Op::Reshape(..) => "reshape",
        Op::Stack(..) => "stack",
        Op::Sum(..) => "sum",
        Op::Cosine(..) => "cosine",
        Op::Upsample(..) => "bilinear_upsample",
        Op::Custom(_, op) => op.name(),
    }
}
