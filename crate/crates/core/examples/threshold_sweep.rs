//! Briefly trains a model, then shows Dice and predicted-positive pixel
//! counts across the binarization thresholds.

use medsad::harness::config::TrainConfig;
use medsad::harness::evaluate::{predict_samples, score_predictions};
use medsad::harness::train::train;
use medsad::metrics::{positive_counts, SWEEP_THRESHOLDS};
use medsad::synthdata::generate_dataset;

fn main() -> medsad::Result<()> {
    let mut cfg = TrainConfig::default();
    cfg.apply_text("epochs = 10\neval_every = 0")?;
    for arg in std::env::args().skip(1) {
        cfg.apply_text(&arg)?;
    }
    let dataset = generate_dataset(&cfg.data)?;
    let outcome = train(&cfg, &dataset)?;
    let predictions = predict_samples(&outcome.model, &dataset.test)?;
    let report = score_predictions(&dataset.test, &predictions)?;
    print!("{}", report.sweep_tsv());
    println!("headline dice {}", report.dice_percent);
    println!("first abnormal test images, positives per threshold {SWEEP_THRESHOLDS:?}:");
    for (s, p) in dataset.test.iter().zip(&predictions).filter(|(s, _)| s.label() == 1).take(5) {
        println!("  id {} (mask {} px): {:?}", s.id, s.mask_area(), positive_counts(p.map.data(), &SWEEP_THRESHOLDS));
    }
    Ok(())
}
