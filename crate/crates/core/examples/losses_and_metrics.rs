//! The objective terms and evaluation metrics on hand-made inputs.

use medsad::losses::{bce, dice, focal, margin_hinge, DEFAULT_MARGIN};
use medsad::metrics::{accuracy, binarize, dice_score, pixel_pauc, threshold_sweep};

fn main() -> medsad::Result<()> {
    let scores = [0.9, 0.2, 0.6, 0.4];
    let labels = [1, 0, 1, 0];
    println!("bce = {:.6}", bce(&scores, &labels)?);

    let map = [0.9, 0.8, 0.3, 0.1, 0.7, 0.2, 0.05, 0.6, 0.4];
    let mask = [1, 1, 0, 0, 1, 0, 0, 1, 0];
    println!("focal = {:.6}", focal(&map, &mask)?);
    println!("soft dice loss = {:.6}", dice(&map, &mask)?);

    for (sn, sa, y) in [(0.9, 0.1, 0), (0.5, 0.4, 0), (0.5, 0.4, 1)] {
        println!(
            "mc hinge (s_n {sn}, s_a {sa}, y {y}) = {:.3}",
            margin_hinge(sn, sa, y, DEFAULT_MARGIN)
        );
    }

    let pred = binarize(&map, 0.5);
    println!("dice@0.5 = {:.2}%", dice_score(&pred, &mask)?);
    println!("accuracy = {:.2}%", accuracy(&binarize(&scores, 0.5), &labels)?);
    println!("pixel AUROC = {:.2}%", pixel_pauc(&map, &mask)?);
    for (t, d) in threshold_sweep(&[map.to_vec()], &[mask.to_vec()])? {
        println!("  t = {t}: dice {d:.2}%");
    }
    Ok(())
}
