//! Evaluation metrics: per-image Dice, accuracy, pooled pixel AUROC and the
//! threshold sweep.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const SWEEP_THRESHOLDS: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];

/// `1` where `value >= t`.
pub fn binarize(values: &[f64], t: f64) -> Vec<u8> {
    values.iter().map(|&v| u8::from(v >= t)).collect()
}

/// `100 * 2|P & M| / (|P| + |M|)`, or 100 when both are empty.
pub fn dice_score(pred: &[u8], mask: &[u8]) -> Result<f64> {
    if pred.len() != mask.len() {
        return Err(Error::shape(
            "dice_score",
            format!("{} predicted pixels vs {} mask pixels", pred.len(), mask.len()),
        ));
    }
    let (mut inter, mut p, mut m) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.iter().zip(mask) {
        let (a, b) = (a != 0, b != 0);
        inter += usize::from(a && b);
        p += usize::from(a);
        m += usize::from(b);
    }
    if p + m == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * 2.0 * inter as f64 / (p + m) as f64)
}

pub fn accuracy(pred: &[u8], labels: &[u8]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Empty("accuracy over an empty set"));
    }
    if pred.len() != labels.len() {
        return Err(Error::shape(
            "accuracy",
            format!("{} predictions vs {} labels", pred.len(), labels.len()),
        ));
    }
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / pred.len() as f64)
}

/// Rank-based AUROC in percent. Tied score pairs count one half.
pub fn pixel_pauc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "pixel_pauc",
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite { op: "pixel_pauc" });
    }
    let positives = labels.iter().filter(|&&y| y != 0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // For each tie group: every positive beats all negatives below the group
    // and splits with the negatives inside it.
    let mut wins2: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group_pos = order[i..j].iter().filter(|&&k| labels[k] != 0).count() as u128;
        let group_neg = (j - i) as u128 - group_pos;
        wins2 += group_pos * (2 * neg_below + group_neg);
        neg_below += group_neg;
        i = j;
    }
    let pairs = positives as u128 * negatives as u128;
    Ok(100.0 * wins2 as f64 / (2 * pairs) as f64)
}

/// Mean per-image Dice at each threshold in [`SWEEP_THRESHOLDS`].
pub fn threshold_sweep(maps: &[Vec<f64>], masks: &[Vec<u8>]) -> Result<Vec<(f64, f64)>> {
    SWEEP_THRESHOLDS
        .iter()
        .map(|&t| Ok((t, mean_dice(maps, masks, t)?)))
        .collect()
}

/// Predicted-positive pixel count of one map at each threshold.
pub fn positive_counts(map: &[f64], thresholds: &[f64]) -> Vec<usize> {
    thresholds.iter().map(|&t| map.iter().filter(|&&v| v >= t).count()).collect()
}

/// Mean over images of the Dice of `binarize(map, t)` against the mask.
pub fn mean_dice(maps: &[Vec<f64>], masks: &[Vec<u8>], t: f64) -> Result<f64> {
    if maps.is_empty() {
        return Err(Error::Empty("dice over an empty set"));
    }
    if maps.len() != masks.len() {
        return Err(Error::shape(
            "mean_dice",
            format!("{} maps vs {} masks", maps.len(), masks.len()),
        ));
    }
    let mut total = 0.0;
    for (g, m) in maps.iter().zip(masks) {
        total += dice_score(&binarize(g, t), m)?;
    }
    Ok(total / maps.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PixelCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub dice_percent: f64,
    pub accuracy_percent: f64,
    pub pauc_percent: f64,
    pub sweep: Vec<(f64, f64)>,
    pub counts: PixelCounts,
    pub images: usize,
}

impl MetricsReport {
    /// Scores everything from per-image maps, masks, image scores and labels.
    pub fn compute(maps: &[Vec<f64>], masks: &[Vec<u8>], scores: &[f64], labels: &[u8]) -> Result<Self> {
        let sweep = threshold_sweep(maps, masks)?;
        let dice_percent = mean_dice(maps, masks, DEFAULT_THRESHOLD)?;
        let pred: Vec<u8> = scores.iter().map(|&s| crate::classifier::predicted_label(s)).collect();
        let accuracy_percent = accuracy(&pred, labels)?;
        let pooled: Vec<f64> = maps.iter().flatten().copied().collect();
        let pooled_labels: Vec<u8> = masks.iter().flatten().copied().collect();
        let pauc_percent = pixel_pauc(&pooled, &pooled_labels)?;
        let mut counts = PixelCounts::default();
        for (&g, &m) in pooled.iter().zip(&pooled_labels) {
            match (g >= DEFAULT_THRESHOLD, m != 0) {
                (true, true) => counts.tp += 1,
                (true, false) => counts.fp += 1,
                (false, true) => counts.fn_ += 1,
                (false, false) => {}
            }
        }
        Ok(Self {
            dice_percent,
            accuracy_percent,
            pauc_percent,
            sweep,
            counts,
            images: maps.len(),
        })
    }

    /// `key: value` lines. Floats use shortest round-trip formatting so the
    /// text is an exact record.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "images: {}", self.images);
        let _ = writeln!(out, "dice_percent: {}", self.dice_percent);
        let _ = writeln!(out, "accuracy_percent: {}", self.accuracy_percent);
        let _ = writeln!(out, "pauc_percent: {}", self.pauc_percent);
        let _ = writeln!(out, "threshold: {DEFAULT_THRESHOLD}");
        let _ = writeln!(out, "tp_pixels: {}", self.counts.tp);
        let _ = writeln!(out, "fp_pixels: {}", self.counts.fp);
        let _ = writeln!(out, "fn_pixels: {}", self.counts.fn_);
        for (t, d) in &self.sweep {
            let _ = writeln!(out, "dice_at_{t}: {d}");
        }
        out
    }

    /// Tab-separated sweep table, one header row and one value row.
    pub fn sweep_tsv(&self) -> String {
        let header: Vec<String> = self.sweep.iter().map(|(t, _)| format!("dice@{t}")).collect();
        let values: Vec<String> = self.sweep.iter().map(|(_, d)| d.to_string()).collect();
        format!("{}\n{}\n", header.join("\t"), values.join("\t"))
    }
}
