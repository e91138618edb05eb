//! MC-loss margin grid 0.2, 0.4, 0.6, 0.8 on the easy split.
//! Extra `key=value` arguments override the base configuration.

use medsad::harness::ablate::{ablate_margin, MARGIN_GRID};
use medsad::harness::config::TrainConfig;
use medsad::synthdata::generate_dataset;

fn main() -> medsad::Result<()> {
    let mut cfg = TrainConfig::default();
    for arg in std::env::args().skip(1) {
        cfg.apply_text(&arg)?;
    }
    let dataset = generate_dataset(&cfg.data)?;
    let table = ablate_margin(&cfg, &dataset, &MARGIN_GRID, |r| {
        eprintln!("margin {}: dice {:.2} accuracy {:.2}", r.label, r.dice_percent, r.accuracy_percent)
    })?;
    print!("{}", table.to_tsv());
    Ok(())
}
