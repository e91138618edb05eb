//! Learnable-token grid 10, 20, 35 on the easy split. The text sequence is
//! lengthened as needed to hold the anchor words plus the tokens.
//! Extra `key=value` arguments override the base configuration.

use medsad::harness::ablate::{ablate_tokens, TOKEN_GRID};
use medsad::harness::config::TrainConfig;
use medsad::synthdata::generate_dataset;

fn main() -> medsad::Result<()> {
    let mut cfg = TrainConfig::default();
    for arg in std::env::args().skip(1) {
        cfg.apply_text(&arg)?;
    }
    let dataset = generate_dataset(&cfg.data)?;
    let table = ablate_tokens(&cfg, &dataset, &TOKEN_GRID, |r| {
        eprintln!("{} tokens: dice {:.2} accuracy {:.2}", r.label, r.dice_percent, r.accuracy_percent)
    })?;
    print!("{}", table.to_tsv());
    Ok(())
}
