//! Test-split inference and scoring.

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{Model, Prediction};
use crate::synthdata::Sample;

const CHUNK: usize = 16;

/// Predictions for every sample, in input order.
pub fn predict_samples(model: &Model, samples: &[Sample]) -> Result<Vec<Prediction>> {
    let expected = model.config.image_size;
    if let Some(s) = samples.iter().find(|s| s.size() != (expected, expected)) {
        let (h, w) = s.size();
        return Err(Error::ImageSizeMismatch {
            expected,
            found_h: h,
            found_w: w,
        });
    }
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(CHUNK) {
        let images: Vec<_> = chunk.iter().map(|s| &s.image).collect();
        out.extend(model.predict(&images)?);
    }
    Ok(out)
}

/// Scores predictions against ground truth.
pub fn score_predictions(samples: &[Sample], predictions: &[Prediction]) -> Result<MetricsReport> {
    let maps: Vec<Vec<f64>> = predictions.iter().map(|p| p.map.data().to_vec()).collect();
    let masks: Vec<Vec<u8>> = samples
        .iter()
        .map(|s| s.mask.data().iter().map(|&m| u8::from(m != 0.0)).collect())
        .collect();
    let scores: Vec<f64> = predictions.iter().map(|p| p.score).collect();
    let labels: Vec<u8> = samples.iter().map(Sample::label).collect();
    MetricsReport::compute(&maps, &masks, &scores, &labels)
}

/// Full forward pass over `samples` followed by every metric at the default
/// threshold plus the sweep.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<MetricsReport> {
    let predictions = predict_samples(model, samples)?;
    score_predictions(samples, &predictions)
}
