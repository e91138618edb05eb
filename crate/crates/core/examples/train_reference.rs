//! Trains the reference model on the easy synthetic split and prints the
//! epoch log and final test metrics.
//!
//! Extra `key=value` arguments override the default configuration:
//!
//! ```text
//! cargo run --release --example train_reference -- epochs=5 learning_rate=3e-4
//! ```

use std::time::Instant;

use medsad::harness::config::TrainConfig;
use medsad::harness::evaluate::evaluate;
use medsad::harness::train::{train_with, LOG_HEADER};
use medsad::synthdata::generate_dataset;

fn main() -> medsad::Result<()> {
    let mut cfg = TrainConfig::default();
    for arg in std::env::args().skip(1) {
        cfg.apply_text(&arg)?;
    }
    let start = Instant::now();
    let dataset = generate_dataset(&cfg.data)?;
    println!("{LOG_HEADER}");
    let outcome = train_with(&cfg, &dataset, |r| println!("{}", r.to_row()))?;
    let report = evaluate(&outcome.model, &dataset.test)?;
    print!("{}", report.to_text());
    println!("elapsed_seconds: {:.1}", start.elapsed().as_secs_f64());
    Ok(())
}
