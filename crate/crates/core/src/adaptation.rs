//! Trainable image adapters and the learnable prompt.
//!
//! Each branch (Det, Seg) owns four parallel adapter stages applied to the
//! same frozen features and averaged. A stage is
//! `leaky(LN2(W2 leaky(LN1(W1 x))))`, row-wise.

use rand::Rng;

use crate::config::ModelConfig;
use crate::encoders::{tokenize, TokenSequence, ABNORMAL_TEMPLATE, NORMAL_TEMPLATE};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var, LAYER_NORM_EPS, LEAKY_SLOPE};
use crate::params::{Binding, ParamId, ParamStore};

pub const ADAPTER_STAGES: usize = 4;
const ADAPTER_INIT_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct AdapterStage {
    pub w1: ParamId,
    pub b1: Option<ParamId>,
    pub ln1: (ParamId, ParamId),
    pub w2: ParamId,
    pub b2: Option<ParamId>,
    pub ln2: (ParamId, ParamId),
}

impl AdapterStage {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let mut linear = |store: &mut ParamStore, name: &str| {
            let w = store.add(
                format!("{prefix}.{name}.weight"),
                Tensor::randn(&[dim, dim], ADAPTER_INIT_STD, rng),
                true,
            );
            let b = bias.then(|| store.add(format!("{prefix}.{name}.bias"), Tensor::zeros(&[dim]), true));
            (w, b)
        };
        let (w1, b1) = linear(store, "linear1");
        let ln1 = (
            store.add(format!("{prefix}.ln1.gain"), Tensor::full(&[dim], 1.0), true),
            store.add(format!("{prefix}.ln1.bias"), Tensor::zeros(&[dim]), true),
        );
        let (w2, b2) = linear(store, "linear2");
        let ln2 = (
            store.add(format!("{prefix}.ln2.gain"), Tensor::full(&[dim], 1.0), true),
            store.add(format!("{prefix}.ln2.bias"), Tensor::zeros(&[dim]), true),
        );
        Self {
            w1,
            b1,
            ln1,
            w2,
            b2,
            ln2,
        }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Binding, x: Var) -> Result<Var> {
        let mut h = tape.matmul(x, b.var(self.w1))?;
        if let Some(bias) = self.b1 {
            h = tape.add_row(h, b.var(bias))?;
        }
        let h = tape.layer_norm(h, b.var(self.ln1.0), b.var(self.ln1.1), LAYER_NORM_EPS)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        let mut h = tape.matmul(h, b.var(self.w2))?;
        if let Some(bias) = self.b2 {
            h = tape.add_row(h, b.var(bias))?;
        }
        let h = tape.layer_norm(h, b.var(self.ln2.0), b.var(self.ln2.1), LAYER_NORM_EPS)?;
        tape.leaky_relu(h, LEAKY_SLOPE)
    }
}

/// Four adapter stages whose outputs are averaged.
#[derive(Clone, Debug)]
pub struct AdapterBranch {
    stages: Vec<AdapterStage>,
}

impl AdapterBranch {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Self {
        let stages = (1..=ADAPTER_STAGES)
            .map(|k| AdapterStage::new(store, &format!("{prefix}.stage{k}"), cfg.embed_dim, cfg.adapter_bias, rng))
            .collect();
        Self { stages }
    }

    pub fn stages(&self) -> &[AdapterStage] {
        &self.stages
    }

    /// Applies stage `k` (1-based, as in `A_1..A_4`).
    pub fn apply_stage(&self, tape: &mut Tape, b: &Binding, x: Var, k: usize) -> Result<Var> {
        if !(1..=ADAPTER_STAGES).contains(&k) {
            return Err(Error::invalid("stage", format!("{k} is not in 1..=4")));
        }
        self.stages[k - 1].forward(tape, b, x)
    }

    /// `(1/4) * sum_k A_k(x)`.
    pub fn fuse(&self, tape: &mut Tape, b: &Binding, x: Var) -> Result<Var> {
        let mut total = self.stages[0].forward(tape, b, x)?;
        for stage in &self.stages[1..] {
            let out = stage.forward(tape, b, x)?;
            total = tape.add(total, out)?;
        }
        tape.scale(total, 1.0 / ADAPTER_STAGES as f64)
    }
}

/// The Det and Seg adapter branches.
#[derive(Clone, Debug)]
pub struct Adapters {
    pub det: AdapterBranch,
    pub seg: AdapterBranch,
}

impl Adapters {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        Self {
            det: AdapterBranch::new(store, "adapter.det", cfg, rng),
            seg: AdapterBranch::new(store, "adapter.seg", cfg, rng),
        }
    }

    /// `F_i^d`: all `N_i + 1` rows through the Det branch.
    pub fn det_features(&self, tape: &mut Tape, b: &Binding, f0: Var) -> Result<Var> {
        self.det.fuse(tape, b, f0)
    }

    /// `f_0`, row 0 of `F_i^d`, as a `[D]` vector. Adapters act row-wise, so
    /// only the class row is pushed through the branch.
    pub fn det_class_token(&self, tape: &mut Tape, b: &Binding, f0: Var) -> Result<Var> {
        let cls = tape.narrow(f0, 0, 0, 1)?;
        let out = self.det.fuse(tape, b, cls)?;
        let d = tape.value(out).shape()[1];
        tape.reshape(out, &[d])
    }

    /// `F_i^s`: the patch rows (class row dropped) through the Seg branch.
    pub fn seg_features(&self, tape: &mut Tape, b: &Binding, f0: Var) -> Result<Var> {
        let rows = tape.value(f0).shape()[0];
        if rows < 2 {
            return Err(Error::shape("seg_features", "need a class row and at least one patch"));
        }
        let patches = tape.narrow(f0, 0, 1, rows - 1)?;
        self.seg.fuse(tape, b, patches)
    }
}

/// The shared learnable tokens `p_1..p_K` plus the two anchor templates.
#[derive(Clone, Debug)]
pub struct PromptParams {
    /// `K x D`; the same rows feed both the normal and the abnormal prompt.
    pub tokens: ParamId,
    pub normal_anchor: Vec<usize>,
    pub abnormal_anchor: Vec<usize>,
}

impl PromptParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let tokens = store.add(
            "prompt.tokens",
            Tensor::randn(&[cfg.learnable_tokens, cfg.embed_dim], 0.02, rng),
            true,
        );
        Ok(Self {
            tokens,
            normal_anchor: tokenize(NORMAL_TEMPLATE, &cfg.category)?,
            abnormal_anchor: tokenize(ABNORMAL_TEMPLATE, &cfg.category)?,
        })
    }

    pub fn learnable(&self, store: &ParamStore) -> usize {
        store.value(self.tokens).shape()[0]
    }
}

/// `(T~_norm, T~_abn)`: anchor ids, the K shared learnable slots, PAD.
pub fn build_prompts(
    params: &PromptParams,
    store: &ParamStore,
    prompt_len: usize,
) -> Result<(TokenSequence, TokenSequence)> {
    let k = params.learnable(store);
    Ok((
        TokenSequence::new(&params.normal_anchor, k, prompt_len)?,
        TokenSequence::new(&params.abnormal_anchor, k, prompt_len)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::TokenSlot;
    use crate::numerics::finite_diff_check_many;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ModelConfig, ParamStore, Adapters) {
        let cfg = ModelConfig {
            embed_dim: 8,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let adapters = Adapters::new(&mut store, &cfg, &mut rng);
        (cfg, store, adapters)
    }

    fn features(rows: usize, dim: usize, seed: u64) -> Tensor {
        Tensor::randn(&[rows, dim], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn eval(store: &ParamStore, f: impl Fn(&mut Tape, &Binding) -> Var) -> Tensor {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let out = f(&mut tape, &b);
        tape.value(out).clone()
    }

    #[test]
    fn stage_preserves_shape_and_maps_zero_to_zero() {
        let (_, store, ad) = setup();
        let x = features(5, 8, 1);
        let out = eval(&store, |t, b| {
            let x = t.constant(x.clone());
            ad.det.apply_stage(t, b, x, 2).unwrap()
        });
        assert_eq!(out.shape(), &[5, 8]);
        let zero = eval(&store, |t, b| {
            let x = t.constant(Tensor::zeros(&[3, 8]));
            ad.det.apply_stage(t, b, x, 1).unwrap()
        });
        assert!(zero.data().iter().all(|&v| v == 0.0));
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let xv = tape.constant(x);
        assert!(ad.det.apply_stage(&mut tape, &b, xv, 5).is_err());
    }

    #[test]
    fn fuse_matches_brute_force_average() {
        let (_, store, ad) = setup();
        let x = features(6, 8, 2);
        let fused = eval(&store, |t, b| {
            let x = t.constant(x.clone());
            ad.seg.fuse(t, b, x).unwrap()
        });
        let mut manual = Tensor::zeros(&[6, 8]);
        for k in 1..=4 {
            let part = eval(&store, |t, b| {
                let x = t.constant(x.clone());
                ad.seg.apply_stage(t, b, x, k).unwrap()
            });
            manual.add_assign(&part);
        }
        let manual = manual.map(|v| v / 4.0);
        assert!(fused.max_abs_diff(&manual) < 1e-15);
    }

    #[test]
    fn tied_stages_equal_single_stage() {
        let (_, mut store, ad) = setup();
        let first = &ad.det.stages()[0];
        let copies: Vec<_> = [first.w1, first.ln1.0, first.ln1.1, first.w2, first.ln2.0, first.ln2.1]
            .iter()
            .chain(first.b1.iter())
            .chain(first.b2.iter())
            .map(|id| store.value(*id).clone())
            .collect();
        for stage in &ad.det.stages()[1..] {
            let ids: Vec<ParamId> = [stage.w1, stage.ln1.0, stage.ln1.1, stage.w2, stage.ln2.0, stage.ln2.1]
                .into_iter()
                .chain(stage.b1)
                .chain(stage.b2)
                .collect();
            for (id, value) in ids.into_iter().zip(&copies) {
                store.get_mut(id).value = value.clone();
            }
        }
        let x = features(4, 8, 3);
        let fused = eval(&store, |t, b| {
            let x = t.constant(x.clone());
            ad.det.fuse(t, b, x).unwrap()
        });
        let single = eval(&store, |t, b| {
            let x = t.constant(x.clone());
            ad.det.apply_stage(t, b, x, 1).unwrap()
        });
        assert!(fused.max_abs_diff(&single) < 1e-15);
    }

    #[test]
    fn branches_have_shapes_and_disjoint_parameters() {
        let (_, mut store, ad) = setup();
        let f0 = features(65, 8, 4);
        let det = eval(&store, |t, b| {
            let x = t.constant(f0.clone());
            ad.det_features(t, b, x).unwrap()
        });
        let seg = eval(&store, |t, b| {
            let x = t.constant(f0.clone());
            ad.seg_features(t, b, x).unwrap()
        });
        assert_eq!(det.shape(), &[65, 8]);
        assert_eq!(seg.shape(), &[64, 8]);

        let cls = eval(&store, |t, b| {
            let x = t.constant(f0.clone());
            ad.det_class_token(t, b, x).unwrap()
        });
        assert_eq!(cls.data(), det.row(0));

        let w = ad.seg.stages()[2].w1;
        store.get_mut(w).value = store.value(w).map(|v| v + 0.3);
        let det_after = eval(&store, |t, b| {
            let x = t.constant(f0.clone());
            ad.det_features(t, b, x).unwrap()
        });
        assert_eq!(det, det_after);
    }

    #[test]
    fn adapter_output_is_row_local() {
        let (_, store, ad) = setup();
        let x = features(6, 8, 7);
        let full = eval(&store, |t, b| {
            let x = t.constant(x.clone());
            ad.seg.fuse(t, b, x).unwrap()
        });
        let top = Tensor::new(&[2, 8], x.data()[..16].to_vec()).unwrap();
        let part = eval(&store, |t, b| {
            let x = t.constant(top.clone());
            ad.seg.fuse(t, b, x).unwrap()
        });
        assert_eq!(part.data(), &full.data()[..16]);
    }

    #[test]
    fn adapter_weight_gradient_matches_finite_differences() {
        let (_, store, ad) = setup();
        let stage = &ad.det.stages()[0];
        let x = features(3, 8, 8);
        let proj = features(3, 8, 9);
        let ids = [stage.w1, stage.w2];
        let inputs: Vec<Tensor> = ids.iter().map(|id| store.value(*id).clone()).collect();
        let report = finite_diff_check_many(
            |tape, vars| {
                // rebind with the probed weights substituted
                let mut b = store.bind(tape);
                b = substitute(b, &ids, vars);
                let xv = tape.constant(x.clone());
                let y = ad.det.apply_stage(tape, &b, xv, 1)?;
                let p = tape.constant(proj.clone());
                let y = tape.mul(y, p)?;
                tape.sum(y)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    fn substitute(binding: Binding, ids: &[ParamId], vars: &[Var]) -> Binding {
        binding.with_overrides(ids.iter().copied().zip(vars.iter().copied()))
    }

    #[test]
    fn prompts_share_tokens_and_pad() {
        let cfg = ModelConfig::default();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prompts = PromptParams::new(&mut store, &cfg, &mut rng).unwrap();
        let (n, a) = build_prompts(&prompts, &store, 16).unwrap();
        assert_eq!(n.len(), 16);
        assert_eq!(n.slots().iter().filter(|s| **s == TokenSlot::Pad).count(), 0);
        let differing: Vec<usize> = (0..16).filter(|&i| n.slots()[i] != a.slots()[i]).collect();
        assert_eq!(differing, vec![4]);
        assert!(build_prompts(&prompts, &store, 15).is_err());

        let cfg0 = ModelConfig {
            learnable_tokens: 0,
            ..cfg
        };
        let mut store0 = ParamStore::new();
        let p0 = PromptParams::new(&mut store0, &cfg0, &mut rng).unwrap();
        let (n0, _) = build_prompts(&p0, &store0, 16).unwrap();
        assert_eq!(n0.content_len(), 6);
        assert_eq!(n0.slots().iter().filter(|s| **s == TokenSlot::Pad).count(), 10);
    }
}
