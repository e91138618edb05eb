//! Generates the easy and low-contrast synthetic splits, prints their
//! statistics and digests, and exports a small copy as PGM + manifest.
//!
//! ```text
//! cargo run --release --example generate_dataset -- /tmp/lesions
//! ```

use std::path::PathBuf;

use medsad::synthdata::{default_low_contrast, export_dataset, generate_dataset, load_manifest, DatasetSpec};

fn main() -> medsad::Result<()> {
    let spec = DatasetSpec::default();
    for (name, spec) in [("easy", spec.clone()), ("hard", default_low_contrast(&spec)?)] {
        let ds = generate_dataset(&spec)?;
        let areas: Vec<usize> = ds.train.iter().map(|s| s.mask_area()).filter(|&a| a > 0).collect();
        let mean_area = areas.iter().sum::<usize>() as f64 / areas.len() as f64;
        println!(
            "{name}: contrast {} feather {} | {} train, {} test | mean lesion area {mean_area:.1} px | digest {}",
            spec.contrast,
            spec.feather,
            ds.train.len(),
            ds.test.len(),
            &ds.digest()[..16]
        );
    }

    let Some(dir) = std::env::args().nth(1).map(PathBuf::from) else {
        println!("pass a directory to export a 4 + 4 image sample");
        return Ok(());
    };
    let small = DatasetSpec {
        train_normal: 2,
        train_abnormal: 2,
        test_normal: 2,
        test_abnormal: 2,
        ..DatasetSpec::default()
    };
    let ds = generate_dataset(&small)?;
    export_dataset(&ds, &dir)?;
    let back = load_manifest(&dir, &small.category)?;
    println!("exported to {} and reloaded {} samples", dir.display(), back.train.len() + back.test.len());
    Ok(())
}
