//! Segmentation metrics and split evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::model::{predict_mask, predict_pixel, SegmentationNet, SegmentationOutput, DEFAULT_THRESHOLD};

/// Intersection over union. An empty prediction scores 0.
pub fn iou(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    if (pred.height(), pred.width()) != (truth.height(), truth.width()) {
        return Err(Error::shape(
            "iou",
            &[pred.height(), pred.width()],
            &[truth.height(), truth.width()],
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        inter += usize::from(p & t);
        union += usize::from(p | t);
    }
    if truth.is_empty() {
        return Err(Error::invalid("iou", "ground-truth mask is empty"));
    }
    Ok(inter as f64 / union as f64)
}

/// 1 when the most probable pixel lies inside `truth`, else 0.
pub fn accuracy_hit(output: &SegmentationOutput, truth: &BinaryMask) -> Result<u8> {
    if (output.height(), output.width()) != (truth.height(), truth.width()) {
        return Err(Error::shape(
            "accuracy_hit",
            &[output.height(), output.width()],
            &[truth.height(), truth.width()],
        ));
    }
    let (r, c) = predict_pixel(output);
    Ok(u8::from(truth.get(r, c)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub count: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub count: usize,
    pub miou: f64,
    pub accuracy: f64,
    /// Accuracy per expression family, for samples that record one.
    pub families: BTreeMap<String, FamilyReport>,
}

/// Anything that maps a sample to per-pixel probabilities.
pub trait Predictor {
    fn predict(&self, sample: &Sample) -> Result<SegmentationOutput>;
}

impl Predictor for SegmentationNet {
    fn predict(&self, sample: &Sample) -> Result<SegmentationOutput> {
        self.forward(&sample.image, &sample.elements, &sample.expression)
    }
}

impl<F: Fn(&Sample) -> Result<SegmentationOutput>> Predictor for F {
    fn predict(&self, sample: &Sample) -> Result<SegmentationOutput> {
        self(sample)
    }
}

/// Sum that does not depend on the order of `values`.
fn ordered_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

pub fn evaluate(predictor: &impl Predictor, split: &str, samples: &[Sample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluate", format!("split {split} is empty")));
    }
    let mut ious = Vec::with_capacity(samples.len());
    let mut hits = 0usize;
    let mut families: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (index, sample) in samples.iter().enumerate() {
        let wrap = |e| Error::Sample {
            index,
            source: Box::new(e),
        };
        let out = predictor.predict(sample).map_err(wrap)?;
        let pred = predict_mask(&out, DEFAULT_THRESHOLD).map_err(wrap)?;
        ious.push(iou(&pred, &sample.mask).map_err(wrap)?);
        let hit = usize::from(accuracy_hit(&out, &sample.mask).map_err(wrap)?);
        hits += hit;
        if let Some(f) = &sample.family {
            let e = families.entry(f.clone()).or_default();
            e.0 += 1;
            e.1 += hit;
        }
    }
    let n = samples.len();
    Ok(EvalReport {
        split: split.to_string(),
        count: n,
        miou: ordered_sum(ious) / n as f64,
        accuracy: hits as f64 / n as f64,
        families: families
            .into_iter()
            .map(|(k, (count, h))| {
                (
                    k,
                    FamilyReport {
                        count,
                        accuracy: h as f64 / count as f64,
                    },
                )
            })
            .collect(),
    })
}
