//! Recall at IoU thresholds, mean IoU and a random calibration baseline.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ParagraphSample;
use crate::error::{Error, Result};
use crate::interval::{iou, Interval};
use crate::model::GroundingPrediction;

pub const ACTIVITYNET_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];
pub const TACOS_THRESHOLDS: [f64; 3] = [0.1, 0.3, 0.5];

/// Predictions keyed by video id.
pub type Predictions = BTreeMap<String, GroundingPrediction>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub video_id: String,
    pub ious: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `"R@m"` → fraction of sentences with IoU ≥ m.
    pub recall: BTreeMap<String, f64>,
    pub miou: f64,
    pub num_sentences: usize,
    pub samples: Vec<SampleRecord>,
}

impl EvalReport {
    pub fn recall_at(&self, m: f64) -> Option<f64> {
        self.recall.get(&recall_key(m)).copied()
    }

    /// `video_id,sentence,iou` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("video_id,sentence,iou\n");
        for s in &self.samples {
            for (j, v) in s.ious.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", s.video_id, j, v));
            }
        }
        out
    }
}

pub fn recall_key(m: f64) -> String {
    format!("R@{m}")
}

/// Scores every sentence of `samples`. Samples are visited in id order, so
/// the report does not depend on the order they were passed in.
pub fn evaluate(predictions: &Predictions, samples: &[ParagraphSample], thresholds: &[f64]) -> Result<EvalReport> {
    let missing: Vec<String> =
        samples.iter().filter(|s| !predictions.contains_key(&s.video_id)).map(|s| s.video_id.clone()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingPredictions(missing));
    }
    let mut order: Vec<&ParagraphSample> = samples.iter().collect();
    order.sort_by(|a, b| a.video_id.cmp(&b.video_id));

    let mut records = Vec::with_capacity(order.len());
    for s in order {
        let gt = s.gt_intervals().ok_or_else(|| Error::sample(&s.video_id, "no ground-truth intervals"))?;
        let pred = &predictions[&s.video_id];
        if pred.sentences.len() != gt.len() {
            return Err(Error::sample(
                &s.video_id,
                format!("{} predicted intervals for {} sentences", pred.sentences.len(), gt.len()),
            ));
        }
        let ious = pred.sentences.iter().zip(gt).map(|(p, g)| iou(p, g)).collect();
        records.push(SampleRecord { video_id: s.video_id.clone(), ious });
    }

    let all: Vec<f64> = records.iter().flat_map(|r| r.ious.iter().copied()).collect();
    let n = all.len();
    let miou = if n == 0 { 0.0 } else { all.iter().sum::<f64>() / n as f64 };
    let recall = thresholds
        .iter()
        .map(|&m| {
            let hits = all.iter().filter(|&&v| v >= m).count();
            (recall_key(m), if n == 0 { 0.0 } else { hits as f64 / n as f64 })
        })
        .collect();
    Ok(EvalReport { recall, miou, num_sentences: n, samples: records })
}

/// N ordered intervals per sample from 2N sorted uniform draws, paired
/// consecutively.
pub fn random_baseline(samples: &[ParagraphSample], seed: u64) -> Predictions {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples
        .iter()
        .map(|s| {
            let n = s.num_sentences();
            let mut draws: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>()).collect();
            draws.sort_by(f64::total_cmp);
            let sentences: Vec<Interval> =
                draws.chunks(2).map(|p| Interval::new(p[0], p[1]).expect("sorted pair")).collect();
            let paragraph = Interval::new(draws[0], draws[2 * n - 1]).expect("sorted draws");
            (s.video_id.clone(), GroundingPrediction { paragraph, sentences })
        })
        .collect()
}

/// Mean and standard deviation of the random baseline's mIoU over seeds
/// `0..seeds`.
pub fn calibrate_random_baseline(samples: &[ParagraphSample], seeds: u64) -> Result<(f64, f64)> {
    let mut vals = Vec::with_capacity(seeds as usize);
    for seed in 0..seeds {
        vals.push(evaluate(&random_baseline(samples, seed), samples, &[])?.miou);
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
    Ok((mean, var.sqrt()))
}
