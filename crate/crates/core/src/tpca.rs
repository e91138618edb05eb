//! Token-patch cross-attention and the segmentation decoder.
//!
//! Abnormal-prompt tokens are the queries, Seg-branch patch features the
//! keys. The head-averaged attention weights (not a value-weighted sum) are
//! appended to the patch features, then a small per-patch MLP decodes two
//! logits which are upsampled to image size before the softmax.

use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var, LEAKY_SLOPE};
use crate::params::{Binding, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct TpcaParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub heads: usize,
    pub head_dim: usize,
}

impl TpcaParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let (d, heads, head_dim) = (cfg.embed_dim, cfg.tpca_heads, cfg.tpca_head_dim());
        let std = 1.0 / (d as f64).sqrt();
        Self {
            wq: store.add("tpca.wq", Tensor::randn(&[d, heads * head_dim], std, rng), true),
            wk: store.add("tpca.wk", Tensor::randn(&[d, heads * head_dim], std, rng), true),
            heads,
            head_dim,
        }
    }

    /// `A = softmax((F_t^a W_q)(F_i^s W_k)^T / sqrt(d_k))` per head, rows over
    /// patches. Returns `h x N_t x N_i`.
    ///
    /// With `active_queries = Some(n)` only the first `n` tokens attend; the
    /// remaining rows are zero.
    pub fn cross_attention_weights(
        &self,
        tape: &mut Tape,
        b: &Binding,
        text: Var,
        patches: Var,
        active_queries: Option<usize>,
    ) -> Result<Var> {
        let n_t = tape.value(text).shape()[0];
        let n_i = tape.value(patches).shape()[0];
        let active = active_queries.unwrap_or(n_t).min(n_t);
        if active == 0 {
            return Err(Error::invalid("active_queries", "at least one query token is required"));
        }
        let queries = if active < n_t {
            tape.narrow(text, 0, 0, active)?
        } else {
            text
        };
        let q = tape.matmul(queries, b.var(self.wq))?;
        let k = tape.matmul(patches, b.var(self.wk))?;
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.narrow(q, 1, h * self.head_dim, self.head_dim)?;
            let kh = tape.narrow(k, 1, h * self.head_dim, self.head_dim)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale)?;
            let mut attn = tape.softmax(scores, 1)?;
            if active < n_t {
                let zeros = tape.constant(Tensor::zeros(&[n_t - active, n_i]));
                attn = tape.concat(attn, zeros, 0)?;
            }
            heads.push(attn);
        }
        tape.stack(&heads)
    }
}

/// `Concat(F_i^s, Permute(Mean_h(A)))`: `N_i x (D + N_t)`.
pub fn fuse_features(tape: &mut Tape, patches: Var, attention: Var) -> Result<Var> {
    let a_shape = tape.value(attention).shape().to_vec();
    let n_i = tape.value(patches).shape()[0];
    if a_shape.len() != 3 || a_shape[2] != n_i {
        return Err(Error::shape(
            "fuse_features",
            format!("attention {a_shape:?} does not match {n_i} patches"),
        ));
    }
    let mean = tape.mean_axis(attention, 0)?;
    let per_patch = tape.transpose(mean)?;
    tape.concat(patches, per_patch, 1)
}

/// Two-layer per-patch MLP producing (normal, abnormal) logits.
#[derive(Clone, Debug)]
pub struct SegDecoderParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl SegDecoderParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let input = cfg.fused_width();
        let hidden = cfg.decoder_hidden;
        Self {
            w1: store.add(
                "decoder.linear1.weight",
                Tensor::randn(&[input, hidden], 1.0 / (input as f64).sqrt(), rng),
                true,
            ),
            b1: store.add("decoder.linear1.bias", Tensor::zeros(&[hidden]), true),
            w2: store.add(
                "decoder.linear2.weight",
                Tensor::randn(&[hidden, 2], 1.0 / (hidden as f64).sqrt(), rng),
                true,
            ),
            b2: store.add("decoder.linear2.bias", Tensor::zeros(&[2]), true),
        }
    }

    /// Per-patch logits, `N_i x 2`.
    pub fn logits(&self, tape: &mut Tape, b: &Binding, fused: Var) -> Result<Var> {
        let h = tape.matmul(fused, b.var(self.w1))?;
        let h = tape.add_row(h, b.var(self.b1))?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        let h = tape.matmul(h, b.var(self.w2))?;
        tape.add_row(h, b.var(self.b2))
    }
}

/// `softmax(U(logits))`: reshape the per-patch logits to the patch grid,
/// upsample the logits to `height x width`, and softmax over the two channels
/// per pixel. Shape `[height, width, 2]`, channel 1 abnormal.
pub fn decode_probabilities(tape: &mut Tape, logits: Var, height: usize, width: usize) -> Result<Var> {
    let n_i = tape.value(logits).shape()[0];
    let grid = (n_i as f64).sqrt().round() as usize;
    if grid * grid != n_i {
        return Err(Error::shape(
            "decode_segmentation",
            format!("{n_i} patches do not form a square grid"),
        ));
    }
    let g = tape.reshape(logits, &[grid, grid, 2])?;
    let up = tape.bilinear_upsample(g, height, width)?;
    tape.softmax(up, 2)
}

/// `G`: the abnormal channel of [`decode_probabilities`].
pub fn decode_logits(tape: &mut Tape, logits: Var, height: usize, width: usize) -> Result<Var> {
    let probs = decode_probabilities(tape, logits, height, width)?;
    let abnormal = tape.narrow(probs, 2, 1, 1)?;
    tape.reshape(abnormal, &[height, width])
}

pub fn decode_segmentation(
    tape: &mut Tape,
    b: &Binding,
    decoder: &SegDecoderParams,
    fused: Var,
    height: usize,
    width: usize,
) -> Result<Var> {
    let logits = decoder.logits(tape, b, fused)?;
    decode_logits(tape, logits, height, width)
}
