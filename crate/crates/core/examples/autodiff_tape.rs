//! Reverse-mode differentiation on the tape: build a small expression,
//! backpropagate, and confirm the result against central differences.

use medsad::numerics::{finite_diff_check, Tape, Tensor};

fn main() -> medsad::Result<()> {
    let x = Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.3, -0.7])?;
    let w = Tensor::new(&[3, 2], vec![1.0, -0.5, 0.25, 0.8, -1.2, 0.4])?;

    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let wv = tape.constant(w.clone());
    let h = tape.matmul(xv, wv)?;
    let s = tape.softmax(h, 1)?;
    let sq = tape.mul(s, s)?;
    let loss = tape.sum(sq)?;
    let grads = tape.backward(loss)?;

    println!("loss = {}", tape.value(loss).item());
    println!("d loss / d x = {:?}", grads.get(xv).expect("leaf has a gradient").data());

    let report = finite_diff_check(
        |t, x| {
            let wv = t.constant(w.clone());
            let h = t.matmul(x, wv)?;
            let s = t.softmax(h, 1)?;
            let sq = t.mul(s, s)?;
            t.sum(sq)
        },
        &x,
        1e-5,
    )?;
    println!(
        "finite differences: {} coordinates, max relative error {:.2e}",
        report.coordinates, report.max_rel_error
    );
    Ok(())
}
