//! Mini-batch training with Adam on the summed objective.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::TrainConfig;
use crate::harness::evaluate::evaluate;
use crate::harness::optim::Adam;
use crate::losses::{bce_loss, mc_loss, seg_loss, total_loss, LossBreakdown, PROB_EPS};
use crate::metrics::MetricsReport;
use crate::model::Model;
use crate::numerics::kernels::cosine_similarity;
use crate::numerics::{Tape, Tensor, Var};
use crate::params::Binding;
use crate::synthdata::{Dataset, Sample};

/// Stream tag mixed into the seed for shuffling and flips, so the data order
/// is independent of parameter initialization.
const ORDER_STREAM: u64 = 0x6f72_6465_72;

/// One epoch: batch-averaged loss terms and optional test metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub loss: LossBreakdown,
    /// Zero-norm vectors seen by the cosine in the MC loss.
    pub degenerate_cosines: usize,
    pub eval: Option<MetricsReport>,
}

pub const LOG_HEADER: &str =
    "epoch\tsteps\tl_cls\tl_focal\tl_dice\tl_seg\tl_mc\tl_total\tdegenerate\ttest_dice\ttest_acc\ttest_pauc";

impl EpochRecord {
    /// One tab-separated log row. Floats are printed in shortest round-trip
    /// form so equal rows mean bit-identical values.
    pub fn to_row(&self) -> String {
        let l = &self.loss;
        let mut row = format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.epoch, self.steps, l.cls, l.focal, l.dice, l.seg, l.mc, l.total, self.degenerate_cosines
        );
        match &self.eval {
            Some(r) => {
                let _ = write!(row, "\t{}\t{}\t{}", r.dice_percent, r.accuracy_percent, r.pauc_percent);
            }
            None => row.push_str("\t-\t-\t-"),
        }
        row
    }
}

pub fn format_log(records: &[EpochRecord]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_row());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub optimizer: Adam,
    pub log: Vec<EpochRecord>,
    pub last: Checkpoint,
    /// Highest test Dice among evaluated epochs, with its checkpoint.
    pub best: Option<(usize, f64, Checkpoint)>,
}

/// A training image with its frozen-encoder features.
struct Prepared<'a> {
    sample: &'a Sample,
    flipped: Sample,
    features: Option<(Tensor, Tensor)>,
}

pub fn train(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    train_with(cfg, dataset, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    cfg: &TrainConfig,
    dataset: &Dataset,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let normals = dataset.train.iter().filter(|s| s.label() == 0).count();
    if normals == 0 || normals == dataset.train.len() {
        return Err(Error::invalid("dataset", "training split needs both classes"));
    }
    let expected = cfg.model.image_size;
    if let Some(s) = dataset.train.iter().find(|s| s.size() != (expected, expected)) {
        let (h, w) = s.size();
        return Err(Error::ImageSizeMismatch {
            expected,
            found_h: h,
            found_w: w,
        });
    }

    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let mut adam = Adam::new(&model.store, cfg.learning_rate);
    let prepared = prepare(&model, &dataset.train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ORDER_STREAM);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Checkpoint)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 5];
        let mut steps = 0;
        let mut degenerate = 0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let flips: Vec<bool> = batch
                .iter()
                .map(|_| cfg.augment_flip && rng.random_bool(0.5))
                .collect();
            let diverged = |reason: String, model: &Model, adam: &Adam| Error::Diverged {
                epoch,
                step,
                reason,
                last_good: Box::new(Checkpoint::capture(cfg, epoch, model, Some(adam))),
            };
            let (parts, cosines) = match train_step(cfg, &mut model, &mut adam, &prepared, batch, &flips) {
                Ok(v) => v,
                Err(e @ (Error::NonFinite { .. } | Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. })) => {
                    return Err(diverged(e.to_string(), &model, &adam));
                }
                Err(e) => return Err(e),
            };
            for (s, p) in sums.iter_mut().zip([parts.cls, parts.focal, parts.dice, parts.seg, parts.mc]) {
                *s += p;
            }
            steps += 1;
            degenerate += cosines;
        }
        let n = steps as f64;
        let loss = LossBreakdown::new(sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n, sums[4] / n)?;
        let evaluate_now = cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0;
        let eval = if evaluate_now {
            Some(evaluate(&model, &dataset.test)?)
        } else {
            None
        };
        if let Some(report) = &eval {
            if best.as_ref().is_none_or(|(_, d, _)| report.dice_percent > *d) {
                let ck = Checkpoint::capture(cfg, epoch + 1, &model, Some(&adam));
                best = Some((epoch + 1, report.dice_percent, ck));
            }
        }
        let record = EpochRecord {
            epoch,
            steps,
            loss,
            degenerate_cosines: degenerate,
            eval,
        };
        on_epoch(&record);
        log.push(record);
    }
    let last = Checkpoint::capture(cfg, cfg.epochs, &model, Some(&adam));
    Ok(TrainOutcome {
        model,
        optimizer: adam,
        log,
        last,
        best,
    })
}

fn prepare<'a>(model: &Model, samples: &'a [Sample]) -> Result<Vec<Prepared<'a>>> {
    samples
        .iter()
        .map(|sample| {
            let flipped = sample.flipped();
            let features = if model.config.freeze_encoder {
                Some((model.encode_image(&sample.image)?, model.encode_image(&flipped.image)?))
            } else {
                None
            };
            Ok(Prepared {
                sample,
                flipped,
                features,
            })
        })
        .collect()
}

/// One image of a mini-batch, with its cached `F_0` when available.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a> {
    pub sample: &'a Sample,
    pub features: Option<&'a Tensor>,
}

/// The training objective on one mini-batch, built on `tape` against the
/// binding `b`.
#[derive(Clone, Debug)]
pub struct Objective {
    pub total: Var,
    pub parts: LossBreakdown,
    /// Image scores `S`, batch order.
    pub scores: Vec<f64>,
    /// MC hinge arguments before the ReLU, batch order; empty when the MC
    /// loss is off.
    pub hinge_args: Vec<f64>,
    /// Smallest distance of any score or map pixel to a probability clamp
    /// bound.
    pub clamp_distance: f64,
}

pub fn objective(cfg: &TrainConfig, model: &Model, tape: &mut Tape, b: &Binding, items: &[BatchItem]) -> Result<Objective> {
    let text = model.encode_text(tape, b)?;
    let mut scores = Vec::with_capacity(items.len());
    let mut maps = Vec::with_capacity(items.len());
    let mut tokens = Vec::with_capacity(items.len());
    let mut masks = Vec::with_capacity(items.len());
    let mut labels = Vec::with_capacity(items.len());
    for item in items {
        let f0 = model.image_features(tape, b, &item.sample.image, item.features)?;
        let out = model.forward_image(tape, b, f0, &text)?;
        scores.push(out.score);
        maps.push(out.map);
        tokens.push(out.class_token);
        masks.push(&item.sample.mask);
        labels.push(item.sample.label());
    }
    let stacked = tape.stack(&scores)?;
    let cls = bce_loss(tape, stacked, &labels)?;
    let seg = seg_loss(tape, &maps, &masks)?;
    let mut hinge_args = Vec::new();
    let mc = if cfg.use_mc_loss {
        let protos = &text.prototypes;
        for (&t, &y) in tokens.iter().zip(&labels) {
            let (pos, _) = cosine_similarity(tape.value(t), tape.value(protos.normal))?;
            let (neg, _) = cosine_similarity(tape.value(t), tape.value(protos.abnormal))?;
            let sign = if y == 0 { 1.0 } else { -1.0 };
            hinge_args.push(cfg.margin - sign * (pos - neg));
        }
        Some(mc_loss(tape, &tokens, protos, &labels, cfg.margin)?)
    } else {
        None
    };
    let (total, parts) = total_loss(tape, cls, Some(&seg), mc)?;
    let scores: Vec<f64> = scores.iter().map(|&s| tape.value(s).item()).collect();
    let clamp_distance = scores
        .iter()
        .chain(maps.iter().flat_map(|&m| tape.value(m).data()))
        .map(|&p| (p - PROB_EPS).abs().min((p - (1.0 - PROB_EPS)).abs()))
        .fold(f64::INFINITY, f64::min);
    Ok(Objective {
        total,
        parts,
        scores,
        hinge_args,
        clamp_distance,
    })
}

/// Forward, backward and one Adam update on a mini-batch.
fn train_step(
    cfg: &TrainConfig,
    model: &mut Model,
    adam: &mut Adam,
    prepared: &[Prepared],
    batch: &[usize],
    flips: &[bool],
) -> Result<(LossBreakdown, usize)> {
    let items: Vec<BatchItem> = batch
        .iter()
        .zip(flips)
        .map(|(&idx, &flip)| {
            let p = &prepared[idx];
            BatchItem {
                sample: if flip { &p.flipped } else { p.sample },
                features: p.features.as_ref().map(|(a, f)| if flip { f } else { a }),
            }
        })
        .collect();
    let mut tape = Tape::new();
    let b = model.bind(&mut tape);
    let obj = objective(cfg, model, &mut tape, &b, &items)?;
    let grads = tape.backward(obj.total)?;
    model.store.accumulate(&b, &grads);
    let stepped = adam.step(&mut model.store);
    model.store.zero_grad();
    stepped?;
    Ok((obj.parts, tape.degenerate_cosines()))
}
