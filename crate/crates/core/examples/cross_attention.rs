//! Token-patch cross-attention in isolation: weight shapes, row sums, and
//! the fused decoder input with and without PAD query masking.

use medsad::config::ModelConfig;
use medsad::numerics::{Tape, Tensor};
use medsad::params::ParamStore;
use medsad::tpca::{fuse_features, TpcaParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> medsad::Result<()> {
    let cfg = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let tpca = TpcaParams::new(&mut store, &cfg, &mut rng);

    let n_t = cfg.prompt_len;
    let n_i = cfg.num_patches();
    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    let text = tape.constant(Tensor::randn(&[n_t, cfg.embed_dim], 1.0, &mut rng));
    let patches = tape.constant(Tensor::randn(&[n_i, cfg.embed_dim], 1.0, &mut rng));

    for active in [None, Some(8)] {
        let attn = tpca.cross_attention_weights(&mut tape, &b, text, patches, active)?;
        let shape = tape.value(attn).shape().to_vec();
        let row_sums: Vec<f64> = tape.value(attn).data().chunks(n_i).map(|r| r.iter().sum()).collect();
        let fused = fuse_features(&mut tape, patches, attn)?;
        println!(
            "active queries {active:?}: weights {shape:?}, first row sums {:.6?}, fused {:?}",
            &row_sums[..3],
            tape.value(fused).shape()
        );
        let masked_rows = row_sums.iter().filter(|&&s| s == 0.0).count();
        println!("  rows zeroed by masking: {masked_rows}");
    }
    Ok(())
}
