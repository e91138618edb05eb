//! Run configuration: a flat `key = value` text format with `#` comments.
//!
//! Every key is listed in [`KEYS`]; the CLI derives one flag per key.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::synthdata::DatasetSpec;

pub const ENV_SEED: &str = "MEDSAD_SEED";
pub const ENV_OUT_DIR: &str = "MEDSAD_OUT_DIR";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub data: DatasetSpec,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// MC-loss margin tau.
    pub margin: f64,
    pub use_mc_loss: bool,
    /// Seeds parameter init, shuffling and augmentation.
    pub seed: u64,
    pub augment_flip: bool,
    /// Evaluate on the test split every this many epochs; 0 disables.
    pub eval_every: usize,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            data: DatasetSpec::default(),
            learning_rate: 1e-4,
            batch_size: 8,
            epochs: 30,
            margin: 0.4,
            use_mc_loss: true,
            seed: 7,
            augment_flip: true,
            eval_every: 5,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

/// `(key, description)` for every configurable value, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "seed for initialization, shuffling and augmentation"),
    ("out_dir", "directory for checkpoints, logs and reports"),
    ("learning_rate", "Adam learning rate"),
    ("batch_size", "images per optimizer step"),
    ("epochs", "passes over the training split"),
    ("margin", "MC-loss margin tau in (0, 1]"),
    ("use_mc_loss", "include the MC loss in the objective"),
    ("augment_flip", "random horizontal flips during training"),
    ("eval_every", "test-split evaluation cadence in epochs (0 = never)"),
    ("image_size", "image side length in pixels"),
    ("patch_size", "vision patch side length"),
    ("embed_dim", "shared embedding width D"),
    ("vision_depth", "vision encoder blocks"),
    ("text_depth", "text encoder blocks"),
    ("encoder_heads", "attention heads inside the encoders"),
    ("mlp_ratio", "encoder MLP expansion factor"),
    ("encoder_init_std", "std of the frozen encoder patch projection and MLP weights"),
    ("encoder_qk_init_std", "std of the frozen encoder attention query/key weights"),
    ("encoder_vo_init_std", "std of the frozen encoder attention value/output weights"),
    ("prompt_len", "text sequence length N_t"),
    ("learnable_tokens", "learnable prompt tokens K (0 disables prompts)"),
    ("tpca_heads", "cross-attention heads"),
    ("decoder_hidden", "segmentation decoder hidden width"),
    ("use_tpca", "fuse cross-attention weights into the decoder input"),
    ("mask_pad_queries", "exclude PAD positions from cross-attention queries"),
    ("adapter_bias", "bias terms in the adapter linear layers"),
    ("freeze_encoder", "keep both encoders frozen"),
    ("category", "object word in the prompt templates"),
    ("data_seed", "dataset generator seed"),
    ("train_normal", "normal images in the training split"),
    ("train_abnormal", "abnormal images in the training split"),
    ("test_normal", "normal images in the test split"),
    ("test_abnormal", "abnormal images in the test split"),
    ("lesions_min", "fewest lesions per abnormal image"),
    ("lesions_max", "most lesions per abnormal image"),
    ("contrast", "additive lesion intensity"),
    ("feather", "soft lesion boundary width in pixels"),
    ("texture_scale", "coarse background noise spacing in pixels"),
    ("axis_min", "smallest lesion semi-axis"),
    ("axis_max", "largest lesion semi-axis"),
    ("min_area", "smallest total lesion area in pixels"),
    ("max_area", "largest total lesion area in pixels"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value {value:?} for `{key}`"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("invalid boolean {value:?} for `{key}`")),
    }
}

impl TrainConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), SetError> {
        match self.set_inner(key, value.trim()) {
            Ok(true) => Ok(()),
            Ok(false) => Err(SetError::UnknownKey),
            Err(e) => Err(SetError::Invalid(e)),
        }
    }

    fn set_inner(&mut self, key: &str, v: &str) -> std::result::Result<bool, String> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "margin" => self.margin = parse(key, v)?,
            "use_mc_loss" => self.use_mc_loss = parse_bool(key, v)?,
            "augment_flip" => self.augment_flip = parse_bool(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "image_size" => {
                self.model.image_size = parse(key, v)?;
                self.data.image_size = self.model.image_size;
            }
            "patch_size" => self.model.patch_size = parse(key, v)?,
            "embed_dim" => self.model.embed_dim = parse(key, v)?,
            "vision_depth" => self.model.vision_depth = parse(key, v)?,
            "text_depth" => self.model.text_depth = parse(key, v)?,
            "encoder_heads" => self.model.encoder_heads = parse(key, v)?,
            "mlp_ratio" => self.model.mlp_ratio = parse(key, v)?,
            "encoder_init_std" => self.model.encoder_init_std = parse(key, v)?,
            "encoder_qk_init_std" => self.model.encoder_qk_init_std = parse(key, v)?,
            "encoder_vo_init_std" => self.model.encoder_vo_init_std = parse(key, v)?,
            "prompt_len" => self.model.prompt_len = parse(key, v)?,
            "learnable_tokens" => self.model.learnable_tokens = parse(key, v)?,
            "tpca_heads" => self.model.tpca_heads = parse(key, v)?,
            "decoder_hidden" => self.model.decoder_hidden = parse(key, v)?,
            "use_tpca" => self.model.use_tpca = parse_bool(key, v)?,
            "mask_pad_queries" => self.model.mask_pad_queries = parse_bool(key, v)?,
            "adapter_bias" => self.model.adapter_bias = parse_bool(key, v)?,
            "freeze_encoder" => self.model.freeze_encoder = parse_bool(key, v)?,
            "category" => {
                if v.is_empty() || v.contains(char::is_whitespace) {
                    return Err("category must be a single word".into());
                }
                self.model.category = v.to_string();
                self.data.category = v.to_string();
            }
            "data_seed" => self.data.seed = parse(key, v)?,
            "train_normal" => self.data.train_normal = parse(key, v)?,
            "train_abnormal" => self.data.train_abnormal = parse(key, v)?,
            "test_normal" => self.data.test_normal = parse(key, v)?,
            "test_abnormal" => self.data.test_abnormal = parse(key, v)?,
            "lesions_min" => self.data.lesions_min = parse(key, v)?,
            "lesions_max" => self.data.lesions_max = parse(key, v)?,
            "contrast" => self.data.contrast = parse(key, v)?,
            "feather" => self.data.feather = parse(key, v)?,
            "texture_scale" => self.data.texture_scale = parse(key, v)?,
            "axis_min" => self.data.axis_min = parse(key, v)?,
            "axis_max" => self.data.axis_max = parse(key, v)?,
            "min_area" => self.data.min_area = parse(key, v)?,
            "max_area" => self.data.max_area = parse(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// The text form of one key.
    pub fn get(&self, key: &str) -> Option<String> {
        let (m, d) = (&self.model, &self.data);
        Some(match key {
            "seed" => self.seed.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "margin" => self.margin.to_string(),
            "use_mc_loss" => self.use_mc_loss.to_string(),
            "augment_flip" => self.augment_flip.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "image_size" => m.image_size.to_string(),
            "patch_size" => m.patch_size.to_string(),
            "embed_dim" => m.embed_dim.to_string(),
            "vision_depth" => m.vision_depth.to_string(),
            "text_depth" => m.text_depth.to_string(),
            "encoder_heads" => m.encoder_heads.to_string(),
            "mlp_ratio" => m.mlp_ratio.to_string(),
            "encoder_init_std" => m.encoder_init_std.to_string(),
            "encoder_qk_init_std" => m.encoder_qk_init_std.to_string(),
            "encoder_vo_init_std" => m.encoder_vo_init_std.to_string(),
            "prompt_len" => m.prompt_len.to_string(),
            "learnable_tokens" => m.learnable_tokens.to_string(),
            "tpca_heads" => m.tpca_heads.to_string(),
            "decoder_hidden" => m.decoder_hidden.to_string(),
            "use_tpca" => m.use_tpca.to_string(),
            "mask_pad_queries" => m.mask_pad_queries.to_string(),
            "adapter_bias" => m.adapter_bias.to_string(),
            "freeze_encoder" => m.freeze_encoder.to_string(),
            "category" => m.category.clone(),
            "data_seed" => d.seed.to_string(),
            "train_normal" => d.train_normal.to_string(),
            "train_abnormal" => d.train_abnormal.to_string(),
            "test_normal" => d.test_normal.to_string(),
            "test_abnormal" => d.test_abnormal.to_string(),
            "lesions_min" => d.lesions_min.to_string(),
            "lesions_max" => d.lesions_max.to_string(),
            "contrast" => d.contrast.to_string(),
            "feather" => d.feather.to_string(),
            "texture_scale" => d.texture_scale.to_string(),
            "axis_min" => d.axis_min.to_string(),
            "axis_max" => d.axis_max.to_string(),
            "min_area" => d.min_area.to_string(),
            "max_area" => d.max_area.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: idx + 1,
                    reason: format!("expected `key = value`, found {line:?}"),
                });
            };
            self.set(key.trim(), value).map_err(|e| e.at(key.trim(), idx + 1))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key in [`KEYS`] order. `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, _) in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    /// Seed and output directory overrides from the environment.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        for (var, key) in [(ENV_SEED, "seed"), (ENV_OUT_DIR, "out_dir")] {
            if let Some(value) = lookup(var) {
                self.set(key, &value).map_err(|e| e.at(key, 0))?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.data.validate()?;
        if self.model.image_size != self.data.image_size {
            return Err(Error::invalid("image_size", "model and data sizes differ"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("schedule", "batch_size and epochs must be positive"));
        }
        if !(self.margin > 0.0 && self.margin <= 1.0) {
            return Err(Error::invalid("margin", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Failure of [`TrainConfig::set`].
#[derive(Debug, Clone, PartialEq)]
pub enum SetError {
    UnknownKey,
    Invalid(String),
}

impl SetError {
    /// Converts to a crate error; `line` 0 means "not from a file".
    pub fn at(self, key: &str, line: usize) -> Error {
        match self {
            SetError::UnknownKey => Error::UnknownKey(key.to_string()),
            SetError::Invalid(reason) => Error::Config { line, reason },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_roundtrips() {
        let cfg = TrainConfig::default();
        for (key, _) in KEYS {
            assert!(cfg.get(key).is_some(), "{key}");
        }
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_errors() {
        let cfg = TrainConfig::parse("# header\nepochs = 3 # short\n\nmargin=0.6\n").unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.margin, 0.6);
        assert!(matches!(TrainConfig::parse("bogus = 1"), Err(Error::UnknownKey(_))));
        assert!(matches!(
            TrainConfig::parse("epochs = 3\nepochs = x"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(matches!(TrainConfig::parse("epochs"), Err(Error::Config { line: 1, .. })));
    }

    #[test]
    fn image_size_sets_model_and_data() {
        let cfg = TrainConfig::parse("image_size = 32").unwrap();
        assert_eq!(cfg.model.image_size, 32);
        assert_eq!(cfg.data.image_size, 32);
    }

    #[test]
    fn env_overrides() {
        let mut cfg = TrainConfig::default();
        cfg.apply_env(|k| match k {
            ENV_SEED => Some("99".into()),
            ENV_OUT_DIR => Some("/tmp/x".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/x"));
        assert!(cfg.apply_env(|_| Some("nope".into())).is_err());
    }
}
