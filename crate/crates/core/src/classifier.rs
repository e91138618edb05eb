//! Image-level anomaly score from the Det class token and text prototypes.

use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

/// Token means of the normal and abnormal prompt encodings, each `[D]`.
#[derive(Clone, Copy, Debug)]
pub struct Prototypes {
    pub normal: Var,
    pub abnormal: Var,
}

pub fn text_prototypes(tape: &mut Tape, normal: Var, abnormal: Var) -> Result<Prototypes> {
    let (n, a) = (tape.value(normal).shape().to_vec(), tape.value(abnormal).shape().to_vec());
    if n != a || n.len() != 2 {
        return Err(Error::shape(
            "text_prototypes",
            format!("prompt encodings {n:?} and {a:?} must be matching N_t x D"),
        ));
    }
    Ok(Prototypes {
        normal: tape.mean_axis(normal, 0)?,
        abnormal: tape.mean_axis(abnormal, 0)?,
    })
}

/// The two raw inner products `[f0 . t_n, f0 . t_a]`, shape `[2]`.
pub fn class_logits(tape: &mut Tape, f0: Var, protos: &Prototypes) -> Result<Var> {
    let n = tape.mul(f0, protos.normal)?;
    let n = tape.sum(n)?;
    let a = tape.mul(f0, protos.abnormal)?;
    let a = tape.sum(a)?;
    tape.stack(&[n, a])
}

/// `S`: the abnormal entry of the softmax over [`class_logits`].
pub fn anomaly_score(tape: &mut Tape, f0: Var, protos: &Prototypes) -> Result<Var> {
    let logits = class_logits(tape, f0, protos)?;
    let probs = tape.softmax(logits, 0)?;
    let s = tape.narrow(probs, 0, 1, 1)?;
    tape.reshape(s, &[])
}

/// `S > 0.5` is abnormal; an exact tie is normal.
pub fn predicted_label(score: f64) -> u8 {
    u8::from(score > 0.5)
}
