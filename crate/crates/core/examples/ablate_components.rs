//! Component ablation on the low-contrast split: baseline, +prompt, +TPCA,
//! +MC-Loss. Extra `key=value` arguments override the base configuration.

use medsad::harness::ablate::ablate_components;
use medsad::harness::config::TrainConfig;
use medsad::synthdata::{default_low_contrast, generate_dataset};

fn main() -> medsad::Result<()> {
    let mut cfg = TrainConfig::default();
    for arg in std::env::args().skip(1) {
        cfg.apply_text(&arg)?;
    }
    let hard = default_low_contrast(&cfg.data)?;
    let dataset = generate_dataset(&hard)?;
    println!("split: contrast {} feather {}", hard.contrast, hard.feather);
    let table = ablate_components(&cfg, &dataset, |r| {
        eprintln!("{}: dice {:.2} accuracy {:.2}", r.label, r.dice_percent, r.accuracy_percent)
    })?;
    print!("{}", table.to_tsv());
    Ok(())
}
