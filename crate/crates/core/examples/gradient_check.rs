//! Runs the full gradient suite: every op and loss, then the training
//! objective of a 16x16 micro-model with respect to every trainable tensor.

use std::time::Instant;

use medsad::harness::gradcheck::{gradient_suite, GRADCHECK_TOL};

fn main() -> medsad::Result<()> {
    let start = Instant::now();
    let entries = gradient_suite(7)?;
    println!("check\tcoordinates\texcluded\tmax_rel_error\tstatus");
    for e in &entries {
        println!("{}", e.to_row());
    }
    let passed = entries.iter().filter(|e| e.passed()).count();
    println!(
        "{passed}/{} within {GRADCHECK_TOL:e} in {:.1}s",
        entries.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
