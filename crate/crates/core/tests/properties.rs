//! Property tests for the invariants stated per module.

use medsad::classifier::Prototypes;
use medsad::config::ModelConfig;
use medsad::harness::checkpoint::Checkpoint;
use medsad::harness::config::TrainConfig;
use medsad::harness::heatmap::heatmap_pgm;
use medsad::losses::{bce, dice, focal, margin_hinge, mc_loss};
use medsad::metrics::{binarize, dice_score, pixel_pauc, positive_counts, SWEEP_THRESHOLDS};
use medsad::model::Model;
use medsad::numerics::{Tape, Tensor, Var};
use medsad::params::ParamStore;
use medsad::synthdata::{generate_sample, Class, DatasetSpec};
use medsad::tpca::TpcaParams;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn probs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, n)
}

fn bits(n: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..=1, n)
}

fn map_and_mask() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (1usize..64).prop_flat_map(|n| (probs(n), bits(n)))
}

fn mc_value(feats: &[Vec<f64>], tn: &[f64], ta: &[f64], labels: &[u8], tau: f64) -> f64 {
    let mut tape = Tape::new();
    let fs: Vec<Var> = feats.iter().map(|f| tape.constant(Tensor::vector(f.clone()))).collect();
    let protos = Prototypes {
        normal: tape.constant(Tensor::vector(tn.to_vec())),
        abnormal: tape.constant(Tensor::vector(ta.to_vec())),
    };
    let l = mc_loss(&mut tape, &fs, &protos, labels, tau).unwrap();
    tape.value(l).item()
}

fn mc_case() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, Vec<u8>)> {
    (2usize..6, 1usize..5).prop_flat_map(|(d, b)| {
        (
            prop::collection::vec(prop::collection::vec(-2.0..2.0f64, d), b),
            prop::collection::vec(-2.0..2.0f64, d),
            prop::collection::vec(-2.0..2.0f64, d),
            bits(b),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn positives_shrink_as_the_threshold_rises(map in probs(200)) {
        let counts = positive_counts(&map, &SWEEP_THRESHOLDS);
        prop_assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        let at_half = binarize(&map, 0.5).iter().filter(|&&b| b == 1).count();
        prop_assert_eq!(counts[2], at_half);
    }

    #[test]
    fn dice_score_is_symmetric_and_bounded(a in bits(16), b in bits(16)) {
        let ab = dice_score(&a, &b).unwrap();
        prop_assert_eq!(ab, dice_score(&b, &a).unwrap());
        prop_assert!((0.0..=100.0).contains(&ab));
        prop_assert_eq!(dice_score(&a, &a).unwrap(), 100.0);
    }

    #[test]
    fn pauc_ignores_monotone_rescaling((scores, mut labels) in map_and_mask()) {
        labels[0] = 1;
        let mut labels = labels;
        labels.push(0);
        let mut scores = scores;
        scores.push(0.3);
        let base = pixel_pauc(&scores, &labels).unwrap();
        prop_assert!((0.0..=100.0).contains(&base));
        let squashed: Vec<f64> = scores.iter().map(|s| 0.5 * s * s * s + 0.1).collect();
        prop_assert!((pixel_pauc(&squashed, &labels).unwrap() - base).abs() < 1e-9);
        let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        prop_assert!((pixel_pauc(&scores, &flipped).unwrap() - (100.0 - base)).abs() < 1e-9);
    }

    #[test]
    fn loss_ranges((map, mask) in map_and_mask()) {
        let d = dice(&map, &mask).unwrap();
        prop_assert!((0.0..1.0).contains(&d));
        prop_assert!(focal(&map, &mask).unwrap() >= 0.0);
        prop_assert!(bce(&map, &mask).unwrap() >= 0.0);
    }

    #[test]
    fn mc_loss_is_nonnegative_and_monotone_in_tau((feats, tn, ta, labels) in mc_case()) {
        let mut last = 0.0;
        for tau in [0.2, 0.4, 0.6, 0.8, 1.0] {
            let l = mc_value(&feats, &tn, &ta, &labels, tau);
            prop_assert!(l >= 0.0);
            prop_assert!(l >= last);
            last = l;
        }
    }

    #[test]
    fn hinge_is_zero_exactly_when_the_gap_reaches_the_margin(
        sn in -1.0..1.0f64, sa in -1.0..1.0f64, y in 0u8..=1, tau in 0.05..1.0f64,
    ) {
        let signed_gap = if y == 0 { sn - sa } else { sa - sn };
        let h = margin_hinge(sn, sa, y, tau);
        prop_assert_eq!(h == 0.0, signed_gap >= tau);
        prop_assert!(h >= 0.0);
    }

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), scale in 0.01..20.0f64, heads in 1usize..=4) {
        let cfg = ModelConfig { embed_dim: 8, tpca_heads: heads.min(8), prompt_len: 6, image_size: 16, patch_size: 4, ..ModelConfig::default() };
        prop_assume!(cfg.validate().is_ok());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let tpca = TpcaParams::new(&mut store, &cfg, &mut rng);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let text = tape.constant(Tensor::randn(&[6, 8], scale, &mut rng));
        let patches = tape.constant(Tensor::randn(&[16, 8], scale, &mut rng));
        let attn = tpca.cross_attention_weights(&mut tape, &b, text, patches, None).unwrap();
        for row in tape.value(attn).data().chunks(16) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn samples_respect_their_class(seed in any::<u64>(), index in 0u64..1000, abnormal in any::<bool>()) {
        let spec = DatasetSpec { seed, ..DatasetSpec::default() };
        let class = if abnormal { Class::Abnormal } else { Class::Normal };
        let s = generate_sample(&spec, index, class).unwrap();
        prop_assert_eq!(s.label(), u8::from(abnormal));
        let area = s.mask_area();
        if abnormal {
            prop_assert!(area >= spec.min_area && area <= spec.max_area);
        } else {
            prop_assert_eq!(area, 0);
        }
        prop_assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(generate_sample(&spec, index, class).unwrap(), s);
    }

    #[test]
    fn heatmap_payload_is_rounded_intensity(map in probs(12)) {
        let g = Tensor::new(&[3, 4], map.clone()).unwrap();
        let bytes = heatmap_pgm(&g).unwrap();
        let header = b"P5\n4 3\n255\n";
        prop_assert_eq!(&bytes[..header.len()], &header[..]);
        for (b, v) in bytes[header.len()..].iter().zip(&map) {
            prop_assert_eq!(*b, (255.0 * v).round() as u8);
        }
    }

    #[test]
    fn config_text_roundtrips(
        lr in 1e-6..1.0f64, margin in 0.01..1.0f64, epochs in 1usize..100, seed in any::<u64>(),
        contrast in 0.01..1.0f64, use_tpca in any::<bool>(),
    ) {
        let mut cfg = TrainConfig::default();
        cfg.learning_rate = lr;
        cfg.margin = margin;
        cfg.epochs = epochs;
        cfg.seed = seed;
        cfg.data.contrast = contrast;
        cfg.model.use_tpca = use_tpca;
        prop_assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}

fn tiny_checkpoint_bytes() -> Vec<u8> {
    let mut cfg = TrainConfig::default();
    cfg.apply_text(
        "image_size = 16\npatch_size = 4\nembed_dim = 8\nencoder_heads = 2\ntpca_heads = 2\n\
         vision_depth = 1\ntext_depth = 1\nprompt_len = 10\nlearnable_tokens = 2\ndecoder_hidden = 4",
    )
    .unwrap();
    let model = Model::new(cfg.model.clone(), cfg.seed).unwrap();
    Checkpoint::capture(&cfg, 1, &model, None).to_bytes()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn damaged_checkpoints_are_rejected_without_panicking(cut in 0usize..4096, pos in any::<prop::sample::Index>(), byte in any::<u8>()) {
        let bytes = tiny_checkpoint_bytes();
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
        let mut flipped = bytes.clone();
        let i = pos.index(flipped.len());
        flipped[i] = byte;
        // any single-byte change either fails cleanly or still decodes
        let _ = Checkpoint::from_bytes(&flipped);
    }
}
