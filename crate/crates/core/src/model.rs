//! The full detector: frozen encoders, adapters, prompts, TPCA and decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adaptation::{build_prompts, Adapters, PromptParams};
use crate::classifier::{anomaly_score, text_prototypes, Prototypes};
use crate::config::ModelConfig;
use crate::encoders::{TextEncoder, TokenSequence, VisionEncoder};
use crate::error::Result;
use crate::numerics::{Tape, Tensor, Var};
use crate::params::{Binding, ParamStore};
use crate::tpca::{decode_segmentation, fuse_features, SegDecoderParams, TpcaParams};

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub vision: VisionEncoder,
    pub text: TextEncoder,
    pub adapters: Adapters,
    pub prompts: PromptParams,
    pub tpca: Option<TpcaParams>,
    pub decoder: SegDecoderParams,
}

/// Text-side tensors shared by every image in a batch.
#[derive(Clone, Copy, Debug)]
pub struct TextFeatures {
    pub normal: Var,
    pub abnormal: Var,
    pub prototypes: Prototypes,
    /// Non-PAD length of the abnormal prompt.
    pub abnormal_content: usize,
}

/// Per-image outputs recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ImageOutputs {
    /// `f_0`, the Det class token, `[D]`.
    pub class_token: Var,
    /// `S`, scalar.
    pub score: Var,
    /// `G`, `H x W`.
    pub map: Var,
}

/// Plain values of one prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub score: f64,
    pub map: Tensor,
}

impl Model {
    /// Builds every parameter from one seeded stream, in a fixed order.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let vision = VisionEncoder::new(&mut store, &config, &mut rng);
        let text = TextEncoder::new(&mut store, &config, &mut rng);
        let adapters = Adapters::new(&mut store, &config, &mut rng);
        let prompts = PromptParams::new(&mut store, &config, &mut rng)?;
        let tpca = config
            .use_tpca
            .then(|| TpcaParams::new(&mut store, &config, &mut rng));
        let decoder = SegDecoderParams::new(&mut store, &config, &mut rng);
        // fail early on templates that do not fit
        build_prompts(&prompts, &store, config.prompt_len)?;
        Ok(Self {
            config,
            store,
            vision,
            text,
            adapters,
            prompts,
            tpca,
            decoder,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> Binding {
        self.store.bind(tape)
    }

    pub fn prompt_sequences(&self) -> Result<(TokenSequence, TokenSequence)> {
        build_prompts(&self.prompts, &self.store, self.config.prompt_len)
    }

    /// `F_0` as a plain tensor. With a frozen encoder this is a pure function
    /// of the image and can be cached.
    pub fn encode_image(&self, image: &Tensor) -> Result<Tensor> {
        self.vision.encode(&self.store, image)
    }

    pub fn encode_text(&self, tape: &mut Tape, b: &Binding) -> Result<TextFeatures> {
        let (normal_seq, abnormal_seq) = self.prompt_sequences()?;
        let tokens = b.var(self.prompts.tokens);
        let normal = self.text.forward(tape, b, &normal_seq, tokens)?;
        let abnormal = self.text.forward(tape, b, &abnormal_seq, tokens)?;
        let prototypes = text_prototypes(tape, normal, abnormal)?;
        Ok(TextFeatures {
            normal,
            abnormal,
            prototypes,
            abnormal_content: abnormal_seq.content_len(),
        })
    }

    /// Puts `F_0` on the tape: the cached value as a constant when the
    /// encoder is frozen, otherwise a full encoder pass.
    pub fn image_features(&self, tape: &mut Tape, b: &Binding, image: &Tensor, cached: Option<&Tensor>) -> Result<Var> {
        match cached {
            Some(f0) if self.config.freeze_encoder => Ok(tape.constant(f0.clone())),
            _ => self.vision.forward(tape, b, image),
        }
    }

    /// Segmentation input: `F_fuse` with TPCA, plain `F_i^s` without.
    pub fn fused_features(&self, tape: &mut Tape, b: &Binding, f0: Var, text: &TextFeatures) -> Result<Var> {
        let patches = self.adapters.seg_features(tape, b, f0)?;
        match &self.tpca {
            Some(tpca) => {
                let active = self.config.mask_pad_queries.then_some(text.abnormal_content);
                let attn = tpca.cross_attention_weights(tape, b, text.abnormal, patches, active)?;
                fuse_features(tape, patches, attn)
            }
            None => Ok(patches),
        }
    }

    pub fn forward_image(&self, tape: &mut Tape, b: &Binding, f0: Var, text: &TextFeatures) -> Result<ImageOutputs> {
        let class_token = self.adapters.det_class_token(tape, b, f0)?;
        let score = anomaly_score(tape, class_token, &text.prototypes)?;
        let fused = self.fused_features(tape, b, f0, text)?;
        let size = self.config.image_size;
        let map = decode_segmentation(tape, b, &self.decoder, fused, size, size)?;
        Ok(ImageOutputs { class_token, score, map })
    }

    /// Inference on a set of images.
    pub fn predict(&self, images: &[&Tensor]) -> Result<Vec<Prediction>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let text = self.encode_text(&mut tape, &b)?;
        let mark = tape.len();
        let mut out = Vec::with_capacity(images.len());
        for image in images {
            let f0 = self.image_features(&mut tape, &b, image, None)?;
            let o = self.forward_image(&mut tape, &b, f0, &text)?;
            out.push(Prediction {
                score: tape.value(o.score).item(),
                map: tape.value(o.map).clone(),
            });
            tape.truncate(mark);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            image_size: 16,
            patch_size: 4,
            embed_dim: 8,
            vision_depth: 1,
            text_depth: 1,
            encoder_heads: 2,
            prompt_len: 10,
            learnable_tokens: 3,
            tpca_heads: 2,
            decoder_hidden: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn predictions_have_expected_shapes_and_ranges() {
        let model = Model::new(small(), 3).unwrap();
        let image = Tensor::full(&[16, 16, 3], 0.4);
        let p = model.predict(&[&image]).unwrap();
        assert_eq!(p[0].map.shape(), &[16, 16]);
        assert!(p[0].score > 0.0 && p[0].score < 1.0);
        assert!(p[0].map.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let wrong = Tensor::zeros(&[8, 8, 3]);
        assert!(model.predict(&[&wrong]).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::new(small(), 9).unwrap();
        let b = Model::new(small(), 9).unwrap();
        let c = Model::new(small(), 10).unwrap();
        assert_eq!(a.store, b.store);
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn tpca_off_decodes_plain_patch_features() {
        let cfg = ModelConfig {
            use_tpca: false,
            ..small()
        };
        let model = Model::new(cfg, 1).unwrap();
        assert!(model.tpca.is_none());
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let text = model.encode_text(&mut tape, &b).unwrap();
        let f0 = model
            .image_features(&mut tape, &b, &Tensor::full(&[16, 16, 3], 0.2), None)
            .unwrap();
        let fused = model.fused_features(&mut tape, &b, f0, &text).unwrap();
        assert_eq!(tape.value(fused).shape(), &[16, 8]);
    }

    #[test]
    fn cached_features_match_direct_pass() {
        let model = Model::new(small(), 4).unwrap();
        let image = Tensor::full(&[16, 16, 3], 0.7);
        let cached = model.encode_image(&image).unwrap();
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let direct = model.image_features(&mut tape, &b, &image, None).unwrap();
        assert_eq!(tape.value(direct), &cached);
    }
}
