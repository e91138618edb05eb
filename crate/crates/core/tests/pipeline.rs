//! Training, evaluation and persistence through the library API.

use std::path::{Path, PathBuf};

use medsad::error::Error;
use medsad::harness::ablate::{ablate_components, ablate_margin, ablate_tokens, COMPONENT_ROWS};
use medsad::harness::checkpoint::Checkpoint;
use medsad::harness::config::TrainConfig;
use medsad::harness::evaluate::{predict_samples, score_predictions};
use medsad::harness::gradcheck::micro_config;
use medsad::harness::train::train;
use medsad::model::Model;
use medsad::synthdata::{default_low_contrast, generate_dataset, Dataset};

fn micro() -> (TrainConfig, Dataset) {
    let mut cfg = micro_config();
    cfg.apply_text("train_normal = 4\ntrain_abnormal = 4\ntest_normal = 2\ntest_abnormal = 2\nbatch_size = 4\nepochs = 2\neval_every = 1")
        .unwrap();
    let dataset = generate_dataset(&cfg.data).unwrap();
    (cfg, dataset)
}

fn manifest_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).to_path_buf()
}

#[test]
fn shipped_default_config_matches_the_built_in_defaults() {
    let text = std::fs::read_to_string(manifest_dir().join("configs/default.conf")).unwrap();
    assert_eq!(TrainConfig::parse(&text).unwrap(), TrainConfig::default());
}

#[test]
fn shipped_paper_scale_config_is_valid() {
    let text = std::fs::read_to_string(manifest_dir().join("configs/paper_scale.conf")).unwrap();
    let cfg = TrainConfig::parse(&text).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.model.image_size % cfg.model.patch_size, 0);
}

#[test]
fn training_moves_only_trainable_parameters() {
    let (cfg, dataset) = micro();
    let initial = Model::new(cfg.model.clone(), cfg.seed).unwrap();
    let outcome = train(&cfg, &dataset).unwrap();
    let frozen = |m: &Model| m.store.digest(|p| !p.trainable);
    let trainable = |m: &Model| m.store.digest(|p| p.trainable);
    assert_eq!(frozen(&initial), frozen(&outcome.model));
    assert_ne!(trainable(&initial), trainable(&outcome.model));
    assert_eq!(outcome.log.len(), 2);
    assert!(outcome.log.iter().all(|r| r.eval.is_some() && r.loss.total.is_finite()));
    assert!(outcome.best.is_some());
}

#[test]
fn checkpoint_restores_the_same_predictions() {
    let (cfg, dataset) = micro();
    let outcome = train(&cfg, &dataset).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    outcome.last.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_bytes(), outcome.last.to_bytes());
    assert_eq!(loaded.epochs_completed, 2);
    let (model, adam) = loaded.restore().unwrap();
    assert!(adam.is_some());
    let before = score_predictions(&dataset.test, &predict_samples(&outcome.model, &dataset.test).unwrap()).unwrap();
    let after = score_predictions(&dataset.test, &predict_samples(&model, &dataset.test).unwrap()).unwrap();
    assert_eq!(before, after);
}

#[test]
fn wrong_image_size_is_reported() {
    let (cfg, _) = micro();
    let mut other = cfg.data.clone();
    other.image_size = 32;
    let dataset = generate_dataset(&other).unwrap();
    assert!(matches!(train(&cfg, &dataset), Err(Error::ImageSizeMismatch { expected: 16, .. })));
}

#[test]
fn single_class_training_split_is_rejected() {
    let (cfg, mut dataset) = micro();
    dataset.train.retain(|s| s.label() == 0);
    assert!(matches!(train(&cfg, &dataset), Err(Error::InvalidArgument { .. })));
    let mut spec = cfg.data.clone();
    spec.train_abnormal = 0;
    assert!(generate_dataset(&spec).is_err());
}

#[test]
fn ablation_grids_produce_one_row_per_point() {
    let (mut cfg, dataset) = micro();
    cfg.epochs = 1;
    let margins = ablate_margin(&cfg, &dataset, &[0.2, 0.8], |_| {}).unwrap();
    assert_eq!(margins.rows.len(), 2);
    assert!(margins.to_tsv().starts_with("margin\tdice\taccuracy\tpauc\n"));
    let tokens = ablate_tokens(&cfg, &dataset, &[1, 3], |_| {}).unwrap();
    assert_eq!(tokens.rows.len(), 2);
    let hard = generate_dataset(&default_low_contrast(&cfg.data).unwrap()).unwrap();
    let components = ablate_components(&cfg, &hard, |_| {}).unwrap();
    let labels: Vec<&str> = components.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, COMPONENT_ROWS);
    for row in &components.rows {
        for v in [row.dice_percent, row.accuracy_percent, row.pauc_percent] {
            assert!((0.0..=100.0).contains(&v), "{row:?}");
        }
    }
    assert!(ablate_margin(&cfg, &dataset, &[], |_| {}).is_err());
}
