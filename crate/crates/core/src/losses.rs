//! Training objectives: BCE on the image score, per-image Focal + Dice on the
//! pixel map, and the cosine margin loss on the class token.
//!
//! Each loss has a plain `f64` evaluator and a tape version for training.

use crate::classifier::Prototypes;
use crate::error::{Error, Result};
use crate::numerics::{CustomOp, Tape, Tensor, Var};

/// Probability clamp applied before every logarithm.
pub const PROB_EPS: f64 = 1e-7;
pub const FOCAL_GAMMA: f64 = 2.0;
pub const FOCAL_ALPHA: f64 = 0.25;
pub const DICE_SMOOTH: f64 = 1.0;
pub const DEFAULT_MARGIN: f64 = 0.4;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn inside_clamp(p: f64) -> bool {
    (PROB_EPS..=1.0 - PROB_EPS).contains(&p)
}

fn check_labels(op: &'static str, n: usize, labels: &[u8]) -> Result<()> {
    if n != labels.len() {
        return Err(Error::shape(op, format!("{n} predictions but {} labels", labels.len())));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::invalid("labels", "must be 0 or 1"));
    }
    Ok(())
}

/// `-(1/N) sum [y ln S + (1 - y) ln(1 - S)]` with `S` clamped.
pub fn bce(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("bce batch"));
    }
    check_labels("bce", scores.len(), labels)?;
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let s = clamp_prob(s);
            if y == 1 {
                -s.ln()
            } else {
                -(1.0 - s).ln()
            }
        })
        .sum();
    Ok(total / scores.len() as f64)
}

/// Pixel mean of `-alpha_t (1 - p_t)^gamma ln p_t`.
pub fn focal(pred: &[f64], mask: &[u8]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Empty("focal map"));
    }
    check_labels("focal", pred.len(), mask)?;
    let total: f64 = pred
        .iter()
        .zip(mask)
        .map(|(&g, &m)| {
            let (p, alpha) = focal_terms(g, m);
            let p = clamp_prob(p);
            -alpha * (1.0 - p).powf(FOCAL_GAMMA) * p.ln()
        })
        .sum();
    Ok(total / pred.len() as f64)
}

fn focal_terms(g: f64, m: u8) -> (f64, f64) {
    if m == 1 {
        (g, FOCAL_ALPHA)
    } else {
        (1.0 - g, 1.0 - FOCAL_ALPHA)
    }
}

/// Soft Dice loss `1 - (2 sum GM + 1) / (sum G + sum M + 1)`.
pub fn dice(pred: &[f64], mask: &[u8]) -> Result<f64> {
    check_labels("dice", pred.len(), mask)?;
    let (num, den) = dice_parts(pred, mask);
    Ok(1.0 - num / den)
}

fn dice_parts(pred: &[f64], mask: &[u8]) -> (f64, f64) {
    let mut inter = 0.0;
    let mut sum_g = 0.0;
    let mut sum_m = 0.0;
    for (&g, &m) in pred.iter().zip(mask) {
        let m = f64::from(m);
        inter += g * m;
        sum_g += g;
        sum_m += m;
    }
    (2.0 * inter + DICE_SMOOTH, sum_g + sum_m + DICE_SMOOTH)
}

/// `max(0, tau - y (s_pos - s_neg))` with `y = +1` for normal, `-1` for
/// abnormal.
pub fn margin_hinge(s_normal: f64, s_abnormal: f64, label: u8, tau: f64) -> f64 {
    let sign = if label == 0 { 1.0 } else { -1.0 };
    (tau - sign * (s_normal - s_abnormal)).max(0.0)
}

#[derive(Debug)]
struct BceOp {
    labels: Vec<u8>,
}

impl CustomOp for BceOp {
    fn name(&self) -> &'static str {
        "bce"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let n = self.labels.len() as f64;
        let up = grad.item();
        let g = inputs[0].data().iter().zip(&self.labels).map(|(&s, &y)| {
            if !inside_clamp(s) {
                0.0
            } else if y == 1 {
                -up / (n * s)
            } else {
                up / (n * (1.0 - s))
            }
        });
        vec![Some(Tensor::new(inputs[0].shape(), g.collect()).expect("same shape"))]
    }
}

#[derive(Debug)]
struct FocalOp {
    mask: Vec<u8>,
}

impl CustomOp for FocalOp {
    fn name(&self) -> &'static str {
        "focal"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let n = self.mask.len() as f64;
        let up = grad.item();
        let g = inputs[0].data().iter().zip(&self.mask).map(|(&g, &m)| {
            let (p, alpha) = focal_terms(g, m);
            if !inside_clamp(p) {
                return 0.0;
            }
            let q = 1.0 - p;
            // d/dp of -(1-p)^gamma ln p
            let dp = FOCAL_GAMMA * q.powf(FOCAL_GAMMA - 1.0) * p.ln() - q.powf(FOCAL_GAMMA) / p;
            let dp_dg = if m == 1 { 1.0 } else { -1.0 };
            up * alpha * dp * dp_dg / n
        });
        vec![Some(Tensor::new(inputs[0].shape(), g.collect()).expect("same shape"))]
    }
}

#[derive(Debug)]
struct DiceOp {
    mask: Vec<u8>,
}

impl CustomOp for DiceOp {
    fn name(&self) -> &'static str {
        "dice"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (num, den) = dice_parts(inputs[0].data(), &self.mask);
        let up = grad.item();
        let g = self
            .mask
            .iter()
            .map(|&m| -up * (2.0 * f64::from(m) * den - num) / (den * den));
        vec![Some(Tensor::new(inputs[0].shape(), g.collect()).expect("same shape"))]
    }
}

fn mask_bytes(op: &'static str, pred: &Tensor, mask: &Tensor) -> Result<Vec<u8>> {
    if pred.shape() != mask.shape() {
        return Err(Error::shape(
            op,
            format!("prediction {:?} vs mask {:?}", pred.shape(), mask.shape()),
        ));
    }
    mask.data()
        .iter()
        .map(|&m| match m {
            v if v == 0.0 => Ok(0),
            v if v == 1.0 => Ok(1),
            _ => Err(Error::invalid("mask", "values must be 0 or 1")),
        })
        .collect()
}

/// Batch BCE on a `[N]` vector of scores.
pub fn bce_loss(tape: &mut Tape, scores: Var, labels: &[u8]) -> Result<Var> {
    let value = bce(tape.value(scores).data(), labels)?;
    tape.custom(&[scores], Tensor::scalar(value), Box::new(BceOp { labels: labels.to_vec() }))
}

pub fn focal_loss(tape: &mut Tape, pred: Var, mask: &Tensor) -> Result<Var> {
    let bytes = mask_bytes("focal_loss", tape.value(pred), mask)?;
    let value = focal(tape.value(pred).data(), &bytes)?;
    tape.custom(&[pred], Tensor::scalar(value), Box::new(FocalOp { mask: bytes }))
}

pub fn dice_loss(tape: &mut Tape, pred: Var, mask: &Tensor) -> Result<Var> {
    let bytes = mask_bytes("dice_loss", tape.value(pred), mask)?;
    let value = dice(tape.value(pred).data(), &bytes)?;
    tape.custom(&[pred], Tensor::scalar(value), Box::new(DiceOp { mask: bytes }))
}

/// Batch means of the per-image Focal and Dice terms.
#[derive(Clone, Copy, Debug)]
pub struct SegTerms {
    pub focal: Var,
    pub dice: Var,
    pub total: Var,
}

/// `(1/N) sum_i [Focal(G_i, M_i) + Dice(G_i, M_i)]`.
pub fn seg_loss(tape: &mut Tape, preds: &[Var], masks: &[&Tensor]) -> Result<SegTerms> {
    if preds.len() != masks.len() {
        return Err(Error::shape(
            "seg_loss",
            format!("{} maps but {} masks", preds.len(), masks.len()),
        ));
    }
    if preds.is_empty() {
        return Err(Error::Empty("seg_loss batch"));
    }
    let mut focals = Vec::with_capacity(preds.len());
    let mut dices = Vec::with_capacity(preds.len());
    for (&g, m) in preds.iter().zip(masks) {
        focals.push(focal_loss(tape, g, m)?);
        dices.push(dice_loss(tape, g, m)?);
    }
    let focal = tape.stack(&focals)?;
    let focal = tape.mean(focal)?;
    let dice = tape.stack(&dices)?;
    let dice = tape.mean(dice)?;
    let total = tape.add(focal, dice)?;
    Ok(SegTerms { focal, dice, total })
}

/// Batch mean of the cosine margin hinge against live prototypes.
pub fn mc_loss(tape: &mut Tape, features: &[Var], protos: &Prototypes, labels: &[u8], tau: f64) -> Result<Var> {
    if features.is_empty() {
        return Err(Error::Empty("mc_loss batch"));
    }
    check_labels("mc_loss", features.len(), labels)?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid("tau", format!("margin must be positive, got {tau}")));
    }
    let mut hinges = Vec::with_capacity(features.len());
    for (&f, &y) in features.iter().zip(labels) {
        let pos = tape.cosine(f, protos.normal)?;
        let neg = tape.cosine(f, protos.abnormal)?;
        let gap = tape.sub(pos, neg)?;
        let sign = if y == 0 { 1.0 } else { -1.0 };
        let arg = tape.scale(gap, -sign)?;
        let arg = tape.add_scalar(arg, tau)?;
        hinges.push(tape.relu(arg)?);
    }
    let stacked = tape.stack(&hinges)?;
    tape.mean(stacked)
}

/// Scalar values of every objective term for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub cls: f64,
    pub focal: f64,
    pub dice: f64,
    pub seg: f64,
    pub mc: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Builds the breakdown, `total = cls + seg + mc`, rejecting non-finite
    /// parts by name.
    pub fn new(cls: f64, focal: f64, dice: f64, seg: f64, mc: f64) -> Result<Self> {
        for (term, value) in [("cls", cls), ("focal", focal), ("dice", dice), ("seg", seg), ("mc", mc)] {
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { term, value });
            }
        }
        Ok(Self {
            cls,
            focal,
            dice,
            seg,
            mc,
            total: cls + seg + mc,
        })
    }
}

/// `L = L_cls + L_seg + L_mc` on the tape. Absent terms are skipped.
pub fn total_loss(tape: &mut Tape, cls: Var, seg: Option<&SegTerms>, mc: Option<Var>) -> Result<(Var, LossBreakdown)> {
    let mut total = cls;
    if let Some(seg) = seg {
        total = tape.add(total, seg.total)?;
    }
    if let Some(mc) = mc {
        total = tape.add(total, mc)?;
    }
    let item = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
    let breakdown = LossBreakdown::new(
        item(Some(cls)),
        item(seg.map(|s| s.focal)),
        item(seg.map(|s| s.dice)),
        item(seg.map(|s| s.total)),
        item(mc),
    )?;
    Ok((total, breakdown))
}
