//! Frozen surrogate encoders: a small ViT over image patches and a small
//! transformer over prompt tokens, both with seeded random weights.

use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var, LAYER_NORM_EPS};
use crate::params::{Binding, ParamId, ParamStore};

/// Closed vocabulary: template words, category names, and two specials.
pub const VOCABULARY: [&str; 12] = [
    "<unk>",
    "<pad>",
    "a",
    "photo",
    "of",
    "normal",
    "damaged",
    "brain",
    "retina",
    "lung",
    "breast",
    "lesionblob",
];
pub const UNK: usize = 0;
pub const PAD: usize = 1;

pub const NORMAL_TEMPLATE: &str = "a photo of a normal [obj]";
pub const ABNORMAL_TEMPLATE: &str = "a photo of a damaged [obj]";

/// Whitespace tokenization of `template` with `[obj]` replaced by `obj`.
pub fn tokenize(template: &str, obj: &str) -> Result<Vec<usize>> {
    if template.trim().is_empty() {
        return Err(Error::invalid("template", "empty template"));
    }
    Ok(template
        .replace("[obj]", obj)
        .split_whitespace()
        .map(|w| VOCABULARY.iter().position(|v| *v == w).unwrap_or(UNK))
        .collect())
}

/// One position of a text input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenSlot {
    Word(usize),
    /// Row `k` of the shared learnable prompt matrix.
    Learnable(usize),
    Pad,
}

/// A padded text input: anchor words, then learnable tokens, then PAD.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    slots: Vec<TokenSlot>,
}

impl TokenSequence {
    pub fn new(anchor: &[usize], learnable: usize, len: usize) -> Result<Self> {
        if anchor.len() + learnable > len {
            return Err(Error::invalid(
                "prompt_len",
                format!(
                    "{} anchor words + {learnable} learnable tokens exceed length {len}",
                    anchor.len()
                ),
            ));
        }
        let mut slots: Vec<TokenSlot> = anchor.iter().map(|&id| TokenSlot::Word(id)).collect();
        slots.extend((0..learnable).map(TokenSlot::Learnable));
        slots.resize(len, TokenSlot::Pad);
        Ok(Self { slots })
    }

    pub fn slots(&self) -> &[TokenSlot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Number of leading non-PAD positions.
    pub fn content_len(&self) -> usize {
        self.slots.iter().take_while(|s| **s != TokenSlot::Pad).count()
    }

    pub fn learnable_count(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| matches!(s, TokenSlot::Learnable(_)))
            .count()
    }
}

/// Pre-norm transformer block weights.
#[derive(Clone, Debug)]
pub struct BlockParams {
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

fn ln_pair(
    store: &mut ParamStore,
    prefix: &str,
    dim: usize,
    trainable: bool,
) -> (ParamId, ParamId) {
    (
        store.add(format!("{prefix}.gain"), Tensor::full(&[dim], 1.0), trainable),
        store.add(format!("{prefix}.bias"), Tensor::zeros(&[dim]), trainable),
    )
}

impl BlockParams {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Self {
        let d = cfg.embed_dim;
        let hidden = d * cfg.mlp_ratio;
        let std = cfg.encoder_init_std;
        let train = !cfg.freeze_encoder;
        let (ln1_gain, ln1_bias) = ln_pair(store, &format!("{prefix}.ln1"), d, train);
        let mut w = |store: &mut ParamStore, name: &str, shape: &[usize], std: f64| {
            store.add(format!("{prefix}.{name}"), Tensor::randn(shape, std, rng), train)
        };
        let wq = w(store, "wq", &[d, d], cfg.encoder_qk_init_std);
        let wk = w(store, "wk", &[d, d], cfg.encoder_qk_init_std);
        let wv = w(store, "wv", &[d, d], cfg.encoder_vo_init_std);
        let wo = w(store, "wo", &[d, d], cfg.encoder_vo_init_std);
        let (ln2_gain, ln2_bias) = ln_pair(store, &format!("{prefix}.ln2"), d, train);
        let w1 = w(store, "w1", &[d, hidden], std);
        let w2 = w(store, "w2", &[hidden, d], std);
        let b1 = store.add(format!("{prefix}.b1"), Tensor::zeros(&[hidden]), train);
        let b2 = store.add(format!("{prefix}.b2"), Tensor::zeros(&[d]), train);
        Self {
            ln1_gain,
            ln1_bias,
            wq,
            wk,
            wv,
            wo,
            ln2_gain,
            ln2_bias,
            w1,
            b1,
            w2,
            b2,
        }
    }

    fn forward(&self, tape: &mut Tape, b: &Binding, x: Var, heads: usize) -> Result<Var> {
        let h = tape.layer_norm(x, b.var(self.ln1_gain), b.var(self.ln1_bias), LAYER_NORM_EPS)?;
        let q = tape.matmul(h, b.var(self.wq))?;
        let k = tape.matmul(h, b.var(self.wk))?;
        let v = tape.matmul(h, b.var(self.wv))?;
        let width = tape.value(q).shape()[1];
        let head_dim = width / heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut merged: Option<Var> = None;
        for head in 0..heads {
            let qh = tape.narrow(q, 1, head * head_dim, head_dim)?;
            let kh = tape.narrow(k, 1, head * head_dim, head_dim)?;
            let vh = tape.narrow(v, 1, head * head_dim, head_dim)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale)?;
            let attn = tape.softmax(scores, 1)?;
            let out = tape.matmul(attn, vh)?;
            merged = Some(match merged {
                None => out,
                Some(prev) => tape.concat(prev, out, 1)?,
            });
        }
        let attn_out = tape.matmul(merged.expect("at least one head"), b.var(self.wo))?;
        let x = tape.add(x, attn_out)?;

        let h = tape.layer_norm(x, b.var(self.ln2_gain), b.var(self.ln2_bias), LAYER_NORM_EPS)?;
        let h = tape.matmul(h, b.var(self.w1))?;
        let h = tape.add_row(h, b.var(self.b1))?;
        let h = tape.quick_gelu(h)?;
        let h = tape.matmul(h, b.var(self.w2))?;
        let h = tape.add_row(h, b.var(self.b2))?;
        tape.add(x, h)
    }
}

/// Surrogate image encoder `f_clip`.
#[derive(Clone, Debug)]
pub struct VisionEncoder {
    patch_size: usize,
    image_size: usize,
    heads: usize,
    patch_weight: ParamId,
    patch_bias: ParamId,
    class_embedding: ParamId,
    positional: ParamId,
    ln_pre: (ParamId, ParamId),
    blocks: Vec<BlockParams>,
    ln_post: (ParamId, ParamId),
}

impl VisionEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.embed_dim;
        let p = cfg.patch_size;
        let train = !cfg.freeze_encoder;
        let patch_weight = store.add(
            "vision.patch.weight",
            Tensor::randn(&[p * p * 3, d], cfg.encoder_init_std, rng),
            train,
        );
        let patch_bias = store.add("vision.patch.bias", Tensor::randn(&[d], 0.02, rng), train);
        let class_embedding =
            store.add("vision.class_embedding", Tensor::randn(&[1, d], 0.02, rng), train);
        let positional = store.add(
            "vision.positional",
            Tensor::randn(&[cfg.num_patches() + 1, d], 0.02, rng),
            train,
        );
        let ln_pre = ln_pair(store, "vision.ln_pre", d, train);
        let blocks = (0..cfg.vision_depth)
            .map(|i| BlockParams::new(store, &format!("vision.block{i}"), cfg, rng))
            .collect();
        let ln_post = ln_pair(store, "vision.ln_post", d, train);
        Self {
            patch_size: p,
            image_size: cfg.image_size,
            heads: cfg.encoder_heads,
            patch_weight,
            patch_bias,
            class_embedding,
            positional,
            ln_pre,
            blocks,
            ln_post,
        }
    }

    /// Flattens an `H x W x 3` image into `N_i` rows of `P*P*3` pixels,
    /// patches in row-major grid order.
    pub fn patchify(&self, image: &Tensor) -> Result<Tensor> {
        let (h, w) = match *image.shape() {
            [h, w, 3] => (h, w),
            ref s => {
                return Err(Error::shape("encode_image", format!("expected H x W x 3, got {s:?}")))
            }
        };
        let p = self.patch_size;
        if h % p != 0 || w % p != 0 {
            return Err(Error::shape(
                "encode_image",
                format!("{h}x{w} is not divisible by patch size {p}"),
            ));
        }
        if h != self.image_size || w != self.image_size {
            return Err(Error::ImageSizeMismatch {
                expected: self.image_size,
                found_h: h,
                found_w: w,
            });
        }
        let (gh, gw) = (h / p, w / p);
        let mut out = Vec::with_capacity(h * w * 3);
        for gy in 0..gh {
            for gx in 0..gw {
                for py in 0..p {
                    let start = ((gy * p + py) * w + gx * p) * 3;
                    out.extend_from_slice(&image.data()[start..start + p * 3]);
                }
            }
        }
        Tensor::new(&[gh * gw, p * p * 3], out)
    }

    /// Patch embeddings before the class token and positional terms.
    pub fn patch_embed(&self, tape: &mut Tape, b: &Binding, image: &Tensor) -> Result<Var> {
        let patches = tape.constant(self.patchify(image)?);
        let x = tape.matmul(patches, b.var(self.patch_weight))?;
        tape.add_row(x, b.var(self.patch_bias))
    }

    /// `F_0`: row 0 is the class token, rows `1..=N_i` the patch tokens.
    pub fn forward(&self, tape: &mut Tape, b: &Binding, image: &Tensor) -> Result<Var> {
        let patches = self.patch_embed(tape, b, image)?;
        let x = tape.concat(b.var(self.class_embedding), patches, 0)?;
        let x = tape.add(x, b.var(self.positional))?;
        let mut x = tape.layer_norm(x, b.var(self.ln_pre.0), b.var(self.ln_pre.1), LAYER_NORM_EPS)?;
        for block in &self.blocks {
            x = block.forward(tape, b, x, self.heads)?;
        }
        tape.layer_norm(x, b.var(self.ln_post.0), b.var(self.ln_post.1), LAYER_NORM_EPS)
    }

    /// Forward pass on a private tape, returning only the value.
    pub fn encode(&self, store: &ParamStore, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let out = self.forward(&mut tape, &b, image)?;
        Ok(tape.value(out).clone())
    }
}

/// Surrogate text encoder producing per-token embeddings.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    heads: usize,
    token_embedding: ParamId,
    positional: ParamId,
    blocks: Vec<BlockParams>,
    ln_final: (ParamId, ParamId),
}

impl TextEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.embed_dim;
        let train = !cfg.freeze_encoder;
        let token_embedding = store.add(
            "text.token_embedding",
            Tensor::randn(&[VOCABULARY.len(), d], 0.02, rng),
            train,
        );
        let positional = store.add(
            "text.positional",
            Tensor::randn(&[cfg.prompt_len, d], 0.01, rng),
            train,
        );
        let blocks = (0..cfg.text_depth)
            .map(|i| BlockParams::new(store, &format!("text.block{i}"), cfg, rng))
            .collect();
        let ln_final = ln_pair(store, "text.ln_final", d, train);
        Self {
            heads: cfg.encoder_heads,
            token_embedding,
            positional,
            blocks,
            ln_final,
        }
    }

    fn lookup(&self, tape: &mut Tape, b: &Binding, ids: &[usize]) -> Result<Var> {
        let vocab = VOCABULARY.len();
        let mut one_hot = Tensor::zeros(&[ids.len(), vocab]);
        for (row, &id) in ids.iter().enumerate() {
            one_hot.data_mut()[row * vocab + id] = 1.0;
        }
        let one_hot = tape.constant(one_hot);
        tape.matmul(one_hot, b.var(self.token_embedding))
    }

    /// Encodes `seq` to an `N_t x D` matrix. `prompts` is the `K x D`
    /// learnable token matrix referenced by the sequence's learnable slots.
    pub fn forward(
        &self,
        tape: &mut Tape,
        b: &Binding,
        seq: &TokenSequence,
        prompts: Var,
    ) -> Result<Var> {
        let expected = tape.value(b.var(self.positional)).shape()[0];
        if seq.len() != expected {
            return Err(Error::shape(
                "encode_text",
                format!("sequence length {} != N_t {expected}", seq.len()),
            ));
        }
        let words: Vec<usize> = seq
            .slots()
            .iter()
            .filter_map(|s| match s {
                TokenSlot::Word(id) => Some(*id),
                _ => None,
            })
            .collect();
        let learnable = seq.learnable_count();
        let pads = seq.len() - words.len() - learnable;
        let k_rows = tape.value(prompts).shape()[0];
        if learnable != k_rows {
            return Err(Error::shape(
                "encode_text",
                format!("sequence has {learnable} learnable slots, prompt matrix has {k_rows} rows"),
            ));
        }

        let mut x = self.lookup(tape, b, &words)?;
        if learnable > 0 {
            x = tape.concat(x, prompts, 0)?;
        }
        if pads > 0 {
            let pad_rows = self.lookup(tape, b, &vec![PAD; pads])?;
            x = tape.concat(x, pad_rows, 0)?;
        }
        let mut x = tape.add(x, b.var(self.positional))?;
        for block in &self.blocks {
            x = block.forward(tape, b, x, self.heads)?;
        }
        tape.layer_norm(x, b.var(self.ln_final.0), b.var(self.ln_final.1), LAYER_NORM_EPS)
    }
}
