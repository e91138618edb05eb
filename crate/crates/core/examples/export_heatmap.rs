//! Trains briefly and writes heatmaps plus image | mask | prediction panels
//! for the first few abnormal test images.
//!
//! ```text
//! cargo run --release --example export_heatmap -- /tmp/heatmaps
//! ```

use std::path::PathBuf;

use medsad::harness::config::TrainConfig;
use medsad::harness::evaluate::predict_samples;
use medsad::harness::heatmap::{export_heatmap, export_panel};
use medsad::harness::train::train;
use medsad::synthdata::generate_dataset;

fn main() -> medsad::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs/heatmaps"));
    std::fs::create_dir_all(&dir).map_err(|e| medsad::Error::io(&dir, e))?;
    let mut cfg = TrainConfig::default();
    cfg.apply_text("epochs = 10\neval_every = 0")?;
    let dataset = generate_dataset(&cfg.data)?;
    let outcome = train(&cfg, &dataset)?;
    let abnormal: Vec<_> = dataset.test.iter().filter(|s| s.label() == 1).take(4).cloned().collect();
    let predictions = predict_samples(&outcome.model, &abnormal)?;
    for (s, p) in abnormal.iter().zip(&predictions) {
        let heat = dir.join(format!("heatmap_{}.pgm", s.id));
        let panel = dir.join(format!("panel_{}.ppm", s.id));
        export_heatmap(&p.map, &heat)?;
        export_panel(&s.image, &s.mask, &p.map, &panel)?;
        println!("{} (score {:.3})", panel.display(), p.score);
    }
    Ok(())
}
