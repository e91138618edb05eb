//! Forward kernels. Every function here is pure; the tape in
//! [`super::tape`] wraps them with their backward rules.

use super::tensor::{axis_extents, check_axis, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.01;

fn finite(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite { op })
    }
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        ref s => Err(Error::shape(op, format!("expected a matrix, got {s:?}"))),
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = matrix_dims("matmul", a)?;
    let (k2, n) = matrix_dims("matmul", b)?;
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("inner dimensions differ: {m}x{k} times {k2}x{n}"),
        ));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    finite("matmul", Tensor::new(&[m, n], out)?)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = matrix_dims("transpose", a)?;
    let d = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Tensor::new(&[n, m], out)
}

/// Max-subtracted softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("softmax", x.shape(), axis)?;
    if !x.all_finite() {
        return Err(Error::NonFinite { op: "softmax input" });
    }
    let (outer, len, inner) = axis_extents(x.shape(), axis);
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let max = (0..len).map(|j| d[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..len {
                let e = (d[at(j)] - max).exp();
                out[at(j)] = e;
                total += e;
            }
            for j in 0..len {
                out[at(j)] /= total;
            }
        }
    }
    finite("softmax", Tensor::new(x.shape(), out)?)
}

/// Intermediate values of a layer normalization, kept for the backward pass.
pub(crate) struct LayerNormParts {
    pub output: Tensor,
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_parts(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<LayerNormParts> {
    if x.rank() == 0 {
        return Err(Error::shape("layer_norm", "scalar input"));
    }
    if eps <= 0.0 {
        return Err(Error::invalid("eps", "must be positive"));
    }
    let width = x.shape()[x.rank() - 1];
    if gain.shape() != [width] || bias.shape() != [width] {
        return Err(Error::shape(
            "layer_norm",
            format!(
                "gain {:?} / bias {:?} must both be [{width}]",
                gain.shape(),
                bias.shape()
            ),
        ));
    }
    let rows = if width == 0 { 0 } else { x.numel() / width };
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    let mut normalized = vec![0.0; d.len()];
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &d[r * width..(r + 1) * width];
        let mean = row.iter().sum::<f64>() / width as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        for c in 0..width {
            let h = (row[c] - mean) * inv;
            normalized[r * width + c] = h;
            out[r * width + c] = h * gain.data()[c] + bias.data()[c];
        }
    }
    Ok(LayerNormParts {
        output: finite("layer_norm", Tensor::new(x.shape(), out)?)?,
        normalized,
        inv_std,
    })
}

/// Layer normalization over the last axis followed by a per-feature affine map.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    Ok(layer_norm_parts(x, gain, bias, eps)?.output)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v >= 0.0 { v } else { slope * v })
}

/// `x * sigmoid(1.702 x)`, the activation used inside the encoder MLPs.
pub fn quick_gelu(x: &Tensor) -> Tensor {
    x.map(|v| v / (1.0 + (-1.702 * v).exp()))
}

pub fn mean_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("mean_axis", x.shape(), axis)?;
    let (outer, len, inner) = axis_extents(x.shape(), axis);
    if len == 0 {
        return Err(Error::shape("mean_axis", "cannot average an empty axis"));
    }
    let d = x.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for j in 0..len {
            let src = &d[(o * len + j) * inner..(o * len + j + 1) * inner];
            for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *acc += v;
            }
        }
    }
    let scale = 1.0 / len as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    let mut shape = x.shape().to_vec();
    shape.remove(axis);
    Tensor::new(&shape, out)
}

pub fn concat_axis(a: &Tensor, b: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("concat_axis", a.shape(), axis)?;
    if a.rank() != b.rank()
        || a
            .shape()
            .iter()
            .zip(b.shape())
            .enumerate()
            .any(|(i, (x, y))| i != axis && x != y)
    {
        return Err(Error::shape(
            "concat_axis",
            format!("{:?} and {:?} differ off axis {axis}", a.shape(), b.shape()),
        ));
    }
    let (outer, la, inner) = axis_extents(a.shape(), axis);
    let lb = b.shape()[axis];
    let mut out = Vec::with_capacity(a.numel() + b.numel());
    for o in 0..outer {
        out.extend_from_slice(&a.data()[o * la * inner..(o + 1) * la * inner]);
        out.extend_from_slice(&b.data()[o * lb * inner..(o + 1) * lb * inner]);
    }
    let mut shape = a.shape().to_vec();
    shape[axis] = la + lb;
    Tensor::new(&shape, out)
}

/// The sub-range `start..start + len` along `axis`.
pub fn narrow(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    check_axis("narrow", x.shape(), axis)?;
    let (outer, full, inner) = axis_extents(x.shape(), axis);
    if start + len > full {
        return Err(Error::shape(
            "narrow",
            format!("range {start}..{} exceeds axis length {full}", start + len),
        ));
    }
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::new(&shape, out)
}

/// Cosine similarity of two equally long vectors.
///
/// Returns `(value, degenerate)`; a zero-norm input yields `(0.0, true)`.
pub fn cosine_similarity(u: &Tensor, v: &Tensor) -> Result<(f64, bool)> {
    if u.numel() != v.numel() || u.rank() != 1 || v.rank() != 1 {
        return Err(Error::shape(
            "cosine_similarity",
            format!("{:?} vs {:?}", u.shape(), v.shape()),
        ));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Ok((0.0, true));
    }
    let dot: f64 = u.data().iter().zip(v.data()).map(|(a, b)| a * b).sum();
    Ok(((dot / (nu * nv)).clamp(-1.0, 1.0), false))
}

/// One output coordinate of an align-corners resampling: the two source
/// indices and the weight on the second.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

pub(crate) fn align_corners_taps(src: usize, dst: usize) -> Vec<Tap> {
    (0..dst)
        .map(|i| {
            if dst == 1 || src == 1 {
                return Tap {
                    lo: 0,
                    hi: 0,
                    frac: 0.0,
                };
            }
            let pos = (i * (src - 1)) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            Tap {
                lo,
                hi,
                frac: pos - lo as f64,
            }
        })
        .collect()
}

/// Align-corners bilinear upsampling of an `h x w x c` grid to `H x W x c`.
pub fn bilinear_upsample(x: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (h, w, c) = match *x.shape() {
        [h, w, c] => (h, w, c),
        ref s => {
            return Err(Error::shape(
                "bilinear_upsample",
                format!("expected h x w x c, got {s:?}"),
            ))
        }
    };
    if height < h || width < w {
        return Err(Error::shape(
            "bilinear_upsample",
            format!("target {height}x{width} is smaller than source {h}x{w}"),
        ));
    }
    if h == 0 || w == 0 {
        return Err(Error::shape("bilinear_upsample", "empty source grid"));
    }
    let rows = align_corners_taps(h, height);
    let cols = align_corners_taps(w, width);
    let d = x.data();
    let mut out = vec![0.0; height * width * c];
    for (y, ty) in rows.iter().enumerate() {
        for (xx, tx) in cols.iter().enumerate() {
            let weights = [
                ((ty.lo, tx.lo), (1.0 - ty.frac) * (1.0 - tx.frac)),
                ((ty.lo, tx.hi), (1.0 - ty.frac) * tx.frac),
                ((ty.hi, tx.lo), ty.frac * (1.0 - tx.frac)),
                ((ty.hi, tx.hi), ty.frac * tx.frac),
            ];
            let dst = &mut out[(y * width + xx) * c..(y * width + xx + 1) * c];
            for ((sy, sx), wgt) in weights {
                if wgt == 0.0 {
                    continue;
                }
                let src = &d[(sy * w + sx) * c..(sy * w + sx + 1) * c];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += wgt * s;
                }
            }
        }
    }
    finite("bilinear_upsample", Tensor::new(&[height, width, c], out)?)
}
