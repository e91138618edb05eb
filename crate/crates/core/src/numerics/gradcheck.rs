//! Central-difference gradient verification.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(input, flat coordinate)` of the worst disagreement.
    pub worst: (usize, usize),
    pub coordinates: usize,
    /// Coordinates skipped because the stencil crossed a kink.
    pub excluded: usize,
}

/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn evaluate<F>(f: &F, xs: &[Tensor], guard: bool) -> Result<(f64, Option<Vec<bool>>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    if guard {
        tape.record_kinks();
    }
    let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.numel() != 1 {
        return Err(Error::NonScalarLoss(value.shape().to_vec()));
    }
    let v = value.item();
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "gradcheck objective" });
    }
    Ok((v, tape.kink_sides().map(<[bool]>::to_vec)))
}

fn check<F>(f: F, xs: &[Tensor], h: f64, guard: bool) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::invalid("h", "step must be positive"));
    }
    let mut tape = Tape::new();
    if guard {
        tape.record_kinks();
    }
    let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).item().is_finite() {
        return Err(Error::NonFinite { op: "gradcheck objective" });
    }
    let sides = tape.kink_sides().map(<[bool]>::to_vec);
    let grads = tape.backward(out)?;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
        excluded: 0,
    };
    let mut probe = xs.to_vec();
    for (j, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(xs[j].shape()));
        for i in 0..xs[j].numel() {
            let base = xs[j].data()[i];
            probe[j].data_mut()[i] = base + h;
            let (plus, plus_sides) = evaluate(&f, &probe, guard)?;
            probe[j].data_mut()[i] = base - h;
            let (minus, minus_sides) = evaluate(&f, &probe, guard)?;
            probe[j].data_mut()[i] = base;
            report.coordinates += 1;
            if plus_sides != sides || minus_sides != sides {
                report.excluded += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic.data()[i], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (j, i);
            }
        }
    }
    Ok(report)
}

/// Checks the gradient of a scalar function of several tensors.
pub fn finite_diff_check_many<F>(f: F, xs: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check(f, xs, h, false)
}

/// Like [`finite_diff_check_many`], but coordinates whose `±h` stencil moves
/// any ReLU or leaky ReLU input across zero are skipped and counted in
/// [`GradCheck::excluded`]. Central differences are meaningless there.
pub fn finite_diff_check_guarded<F>(f: F, xs: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check(f, xs, h, true)
}

/// Checks the gradient of a scalar function of one tensor.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    finite_diff_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}
