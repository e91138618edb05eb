//! Gradient suite: every differentiable op, every loss, and the full training
//! objective of a 16×16 micro-model against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::Prototypes;
use crate::error::{Error, Result};
use crate::harness::config::TrainConfig;
use crate::harness::train::{objective, BatchItem};
use crate::losses::{bce_loss, dice_loss, focal_loss, mc_loss};
use crate::model::Model;
use crate::numerics::kernels::{LAYER_NORM_EPS, LEAKY_SLOPE};
use crate::numerics::{finite_diff_check_guarded, finite_diff_check_many, GradCheck, Tape, Tensor, Var};
use crate::synthdata::{generate_sample, Class};

/// Central-difference step.
pub const GRADCHECK_H: f64 = 1e-5;
/// Largest accepted `|a - n| / max(1, |a|)`.
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Points this close to a hinge or clamp boundary are not checked.
pub const BOUNDARY_GUARD: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub report: GradCheck,
}

impl GradCheckEntry {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error <= GRADCHECK_TOL
    }

    pub fn to_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.name,
            self.report.coordinates,
            self.report.excluded,
            self.report.max_rel_error,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

type Objective = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    // a fixed random projection catches sign and permutation bugs a plain sum hides
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::randn(tape.value(y).shape(), 1.0, &mut r);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches")
}

fn binary(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect()).expect("shape matches")
}

/// `(name, inputs, objective)` for every tape op and loss.
fn op_cases(seed: u64) -> Vec<(&'static str, Vec<Tensor>, Objective)> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let a = Tensor::randn(&[3, 4], 1.0, &mut r);
    let b = Tensor::randn(&[4, 5], 1.0, &mut r);
    let c = Tensor::randn(&[3, 4], 1.0, &mut r);
    let row = Tensor::randn(&[4], 1.0, &mut r);
    let gain = Tensor::randn(&[4], 1.0, &mut r);
    let grid = Tensor::randn(&[2, 3, 2], 1.0, &mut r);
    let u = Tensor::randn(&[6], 1.0, &mut r);
    let v = Tensor::randn(&[6], 1.0, &mut r);
    // probabilities kept clear of the clamp
    let probs = uniform(&[6], 0.05, 0.95, &mut r);
    let pred = uniform(&[4, 4], 0.05, 0.95, &mut r);
    let mask = binary(&[4, 4], &mut r);
    let labels: Vec<u8> = vec![0, 1, 1, 0, 1, 0];
    let features = Tensor::randn(&[2, 6], 1.0, &mut r);

    let focal_mask = mask.clone();
    let dice_mask = mask;
    vec![
        ("matmul", vec![a.clone(), b], Box::new(|t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y, 1)
        })),
        ("transpose", vec![a.clone()], Box::new(|t, v| {
            let y = t.transpose(v[0])?;
            weighted_sum(t, y, 2)
        })),
        ("add/sub/mul", vec![a.clone(), c.clone()], Box::new(|t, v| {
            let s = t.add(v[0], v[1])?;
            let d = t.sub(v[0], v[1])?;
            let y = t.mul(s, d)?;
            weighted_sum(t, y, 3)
        })),
        ("add_row", vec![a.clone(), row.clone()], Box::new(|t, v| {
            let y = t.add_row(v[0], v[1])?;
            weighted_sum(t, y, 4)
        })),
        ("layer_norm", vec![a.clone(), gain, row], Box::new(|t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS)?;
            weighted_sum(t, y, 5)
        })),
        ("leaky_relu", vec![a.clone()], Box::new(|t, v| {
            let y = t.leaky_relu(v[0], LEAKY_SLOPE)?;
            weighted_sum(t, y, 6)
        })),
        ("quick_gelu", vec![a.clone()], Box::new(|t, v| {
            let y = t.quick_gelu(v[0])?;
            weighted_sum(t, y, 7)
        })),
        ("softmax", vec![a.clone()], Box::new(|t, v| {
            let y = t.softmax(v[0], 1)?;
            weighted_sum(t, y, 8)
        })),
        ("softmax (channels)", vec![grid.clone()], Box::new(|t, v| {
            let y = t.softmax(v[0], 0)?;
            weighted_sum(t, y, 9)
        })),
        ("mean_axis", vec![grid.clone()], Box::new(|t, v| {
            let y = t.mean_axis(v[0], 1)?;
            weighted_sum(t, y, 10)
        })),
        ("concat/narrow", vec![a.clone(), c.clone()], Box::new(|t, v| {
            let y = t.concat(v[0], v[1], 1)?;
            let y = t.narrow(y, 1, 2, 5)?;
            weighted_sum(t, y, 11)
        })),
        ("stack/reshape", vec![a, c], Box::new(|t, v| {
            let y = t.stack(&[v[0], v[1]])?;
            let y = t.reshape(y, &[4, 6])?;
            weighted_sum(t, y, 12)
        })),
        ("cosine", vec![u.clone(), v.clone()], Box::new(|t, v| {
            let c = t.cosine(v[0], v[1])?;
            t.scale(c, 3.0)
        })),
        ("bilinear_upsample", vec![grid], Box::new(|t, v| {
            let y = t.bilinear_upsample(v[0], 5, 7)?;
            weighted_sum(t, y, 13)
        })),
        ("bce_loss", vec![probs], Box::new(move |t, v| bce_loss(t, v[0], &labels))),
        ("focal_loss", vec![pred.clone()], Box::new(move |t, v| focal_loss(t, v[0], &focal_mask))),
        ("dice_loss", vec![pred], Box::new(move |t, v| dice_loss(t, v[0], &dice_mask))),
        ("mc_loss", vec![features, u, v], Box::new(|t, v| {
            let f0 = t.narrow(v[0], 0, 0, 1)?;
            let f0 = t.reshape(f0, &[6])?;
            let f1 = t.narrow(v[0], 0, 1, 1)?;
            let f1 = t.reshape(f1, &[6])?;
            let protos = Prototypes {
                normal: v[1],
                abnormal: v[2],
            };
            mc_loss(t, &[f0, f1], &protos, &[0, 1], 0.4)
        })),
    ]
}

/// The micro-model used for the end-to-end check: 16×16 images, D = 8.
pub fn micro_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.apply_text(
        "image_size = 16\npatch_size = 4\nembed_dim = 8\nencoder_heads = 2\ntpca_heads = 2\n\
         vision_depth = 1\ntext_depth = 1\nprompt_len = 10\nlearnable_tokens = 2\ndecoder_hidden = 4\n\
         axis_min = 2\naxis_max = 4\nmin_area = 8\nmax_area = 120\nlesions_max = 2\ntexture_scale = 8",
    )
    .expect("micro config keys are valid");
    cfg
}

/// Analytic vs numeric gradient of the full objective with respect to every
/// trainable parameter of a micro-model, on one normal and one abnormal image.
/// Coordinates whose stencil crosses an activation kink are excluded; a base
/// point within [`BOUNDARY_GUARD`] of the MC hinge or a probability clamp is
/// rejected outright.
pub fn end_to_end_check(cfg: &TrainConfig) -> Result<GradCheckEntry> {
    let model = Model::new(cfg.model.clone(), cfg.seed)?;
    let samples = [
        generate_sample(&cfg.data, 0, Class::Normal)?,
        generate_sample(&cfg.data, 1, Class::Abnormal)?,
    ];
    let items: Vec<BatchItem> = samples.iter().map(|sample| BatchItem { sample, features: None }).collect();
    let trainable: Vec<_> = model.store.ids().filter(|&id| model.store.get(id).trainable).collect();
    let values: Vec<Tensor> = trainable.iter().map(|&id| model.store.value(id).clone()).collect();

    let build = |tape: &mut Tape, vars: &[Var]| {
        let b = model.bind(tape).with_overrides(trainable.iter().copied().zip(vars.iter().copied()));
        objective(cfg, &model, tape, &b, &items)
    };

    let mut probe = Tape::new();
    let vars: Vec<Var> = values.iter().map(|v| probe.constant(v.clone())).collect();
    let base = build(&mut probe, &vars)?;
    let near_clamp = base.clamp_distance < BOUNDARY_GUARD;
    let near_hinge = base.hinge_args.iter().any(|a| a.abs() < BOUNDARY_GUARD);
    if near_clamp || near_hinge {
        return Err(Error::invalid(
            "gradcheck",
            "micro-model sits on a hinge or clamp boundary; pick another seed",
        ));
    }

    let report = finite_diff_check_guarded(|tape, vars| Ok(build(tape, vars)?.total), &values, GRADCHECK_H)?;
    Ok(GradCheckEntry {
        name: "end-to-end objective".to_string(),
        report,
    })
}

/// Runs every op check followed by the end-to-end check.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradCheckEntry>> {
    let mut entries = Vec::new();
    for (name, inputs, f) in op_cases(seed) {
        let report = finite_diff_check_many(f, &inputs, GRADCHECK_H)?;
        entries.push(GradCheckEntry {
            name: name.to_string(),
            report,
        });
    }
    let mut cfg = micro_config();
    cfg.seed = seed;
    entries.push(end_to_end_check(&cfg)?);
    Ok(entries)
}
