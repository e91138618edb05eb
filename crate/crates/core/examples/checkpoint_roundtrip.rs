//! Trains briefly, saves a checkpoint, reloads it and shows that the reloaded
//! model reproduces the metrics bit for bit.

use medsad::harness::checkpoint::Checkpoint;
use medsad::harness::config::TrainConfig;
use medsad::harness::evaluate::evaluate;
use medsad::harness::train::train;
use medsad::synthdata::generate_dataset;

fn main() -> medsad::Result<()> {
    let mut cfg = TrainConfig::default();
    cfg.apply_text("epochs = 3\ntrain_normal = 60\ntrain_abnormal = 60\neval_every = 0")?;
    let dataset = generate_dataset(&cfg.data)?;
    let outcome = train(&cfg, &dataset)?;
    let before = evaluate(&outcome.model, &dataset.test)?;

    let dir = tempfile::tempdir().map_err(|e| medsad::Error::io(std::env::temp_dir(), e))?;
    let path = dir.path().join("last.ckpt");
    outcome.last.save(&path)?;
    let size = std::fs::metadata(&path).map_err(|e| medsad::Error::io(&path, e))?.len();
    let loaded = Checkpoint::load(&path)?;
    let (model, adam) = loaded.restore()?;
    let after = evaluate(&model, &dataset.test)?;

    println!("checkpoint: {size} bytes, {} tensors, optimizer step {}", loaded.tensors.len(), adam.map_or(0, |a| a.t));
    println!("dice before {} after {}", before.dice_percent, after.dice_percent);
    println!("reports identical: {}", before == after);
    println!("re-serialized identical: {}", loaded.to_bytes() == outcome.last.to_bytes());
    Ok(())
}
