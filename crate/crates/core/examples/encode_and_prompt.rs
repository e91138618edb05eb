//! One forward pass through the untrained model: prompt layout, encoder
//! shapes, the image score and the anomaly map range.

use medsad::config::ModelConfig;
use medsad::encoders::TokenSlot;
use medsad::model::Model;
use medsad::synthdata::{generate_sample, Class, DatasetSpec};

fn main() -> medsad::Result<()> {
    let cfg = ModelConfig::default();
    let model = Model::new(cfg.clone(), 7)?;
    let (normal, abnormal) = model.prompt_sequences()?;
    let show = |slots: &[TokenSlot]| {
        slots
            .iter()
            .map(|s| match s {
                TokenSlot::Word(id) => format!("w{id}"),
                TokenSlot::Learnable(k) => format!("p{k}"),
                TokenSlot::Pad => "_".to_string(),
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    println!("normal prompt:   {}", show(normal.slots()));
    println!("abnormal prompt: {}", show(abnormal.slots()));
    println!(
        "parameters: {} tensors, {} trainable",
        model.store.len(),
        model.store.trainable_count()
    );

    let spec = DatasetSpec::default();
    for class in [Class::Normal, Class::Abnormal] {
        let sample = generate_sample(&spec, 0, class)?;
        let f0 = model.encode_image(&sample.image)?;
        let pred = model.predict(&[&sample.image])?.remove(0);
        let (lo, hi) = pred
            .map
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        println!(
            "{class}: F0 {:?}, score {:.4}, map {:?} in [{lo:.3}, {hi:.3}], fused width {}",
            f0.shape(),
            pred.score,
            pred.map.shape(),
            cfg.fused_width()
        );
    }
    Ok(())
}
