//! Architecture hyperparameters.

use crate::error::{Error, Result};

/// Shape and topology of the model. Desk-scale defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub vision_depth: usize,
    pub text_depth: usize,
    pub encoder_heads: usize,
    pub mlp_ratio: usize,
    /// Standard deviation of the frozen encoder's patch projection and MLP
    /// weights.
    pub encoder_init_std: f64,
    /// Standard deviation of the encoder attention query and key weights.
    pub encoder_qk_init_std: f64,
    /// Standard deviation of the encoder attention value and output weights.
    pub encoder_vo_init_std: f64,
    /// Text sequence length N_t.
    pub prompt_len: usize,
    /// Number of learnable prompt tokens K.
    pub learnable_tokens: usize,
    pub tpca_heads: usize,
    pub decoder_hidden: usize,
    pub use_tpca: bool,
    /// Drop PAD positions from the cross-attention query set.
    pub mask_pad_queries: bool,
    pub adapter_bias: bool,
    pub freeze_encoder: bool,
    /// Word filling the `[obj]` slot of both prompt templates.
    pub category: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            embed_dim: 32,
            vision_depth: 2,
            text_depth: 2,
            encoder_heads: 4,
            mlp_ratio: 4,
            encoder_init_std: 0.02,
            encoder_qk_init_std: 0.3,
            encoder_vo_init_std: 0.15,
            prompt_len: 16,
            learnable_tokens: 10,
            tpca_heads: 4,
            decoder_hidden: 32,
            use_tpca: true,
            mask_pad_queries: false,
            adapter_bias: true,
            freeze_encoder: true,
            category: "lesionblob".to_string(),
        }
    }
}

impl ModelConfig {
    pub fn grid_size(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_size() * self.grid_size()
    }

    pub fn tpca_head_dim(&self) -> usize {
        self.embed_dim / self.tpca_heads
    }

    /// Width of the features the segmentation decoder consumes.
    pub fn fused_width(&self) -> usize {
        if self.use_tpca {
            self.embed_dim + self.prompt_len
        } else {
            self.embed_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("encoder_heads", self.encoder_heads),
            ("mlp_ratio", self.mlp_ratio),
            ("prompt_len", self.prompt_len),
            ("tpca_heads", self.tpca_heads),
            ("decoder_hidden", self.decoder_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid("model config", format!("{name} must be positive")));
            }
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::invalid(
                "patch_size",
                format!("{} does not divide image size {}", self.patch_size, self.image_size),
            ));
        }
        if self.embed_dim % self.encoder_heads != 0 {
            return Err(Error::invalid("encoder_heads", "must divide embed_dim"));
        }
        if self.tpca_head_dim() == 0 || self.tpca_heads * self.tpca_head_dim() > self.embed_dim {
            return Err(Error::invalid("tpca_heads", "needs 1 <= head dim and heads * head dim <= D"));
        }
        for (name, std) in [
            ("encoder_init_std", self.encoder_init_std),
            ("encoder_qk_init_std", self.encoder_qk_init_std),
            ("encoder_vo_init_std", self.encoder_vo_init_std),
        ] {
            if !(std > 0.0 && std.is_finite()) {
                return Err(Error::invalid("model config", format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}
