//! Settings shared by the integration tests. They mirror the bundled
//! synthetic profile.
#![allow(dead_code)]

use siamgtr::compose::ComposeConfig;
use siamgtr::dataset::{generate_synthetic, SynthConfig, SyntheticDataset};
use siamgtr::evaluation::{evaluate, EvalReport, ACTIVITYNET_THRESHOLDS};
use siamgtr::losses::LossWeights;
use siamgtr::model::ModelConfig;
use siamgtr::trainer::{Mode, TrainConfig, TrainData, Trainer};

pub fn default_dataset() -> SyntheticDataset {
    let cfg = SynthConfig::default();
    generate_synthetic(&cfg, cfg.seed).expect("default synthetic config is feasible")
}

pub fn synthetic_model(seed: u64) -> ModelConfig {
    ModelConfig {
        d_model: 32,
        heads: 4,
        ffn_dim: 64,
        video_layers: 2,
        query_layers: 2,
        decoder_layers: 3,
        gru_hidden: 32,
        dropout: 0.1,
        feature_dim: 32,
        word_dim: 32,
        init_seed: seed,
    }
}

pub fn synthetic_train(mode: Mode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        learning_rate: 1e-3,
        batch_size: 8,
        epochs: 30,
        seed,
        labeled_fraction: 0.3,
        grad_clip: 1.0,
        compose: ComposeConfig { t: 64, ..ComposeConfig::default() },
        weights: LossWeights::default(),
    }
}

pub fn train(data: &SyntheticDataset, model: ModelConfig, cfg: TrainConfig) -> Trainer {
    let mut t = Trainer::new(model, cfg).expect("valid config");
    let td = TrainData { samples: &data.train, embeddings: &data.embeddings, concepts: &data.concepts };
    t.fit(&td, &mut |_| {}).expect("training succeeds");
    t
}

pub fn test_report(data: &SyntheticDataset, t: &Trainer) -> EvalReport {
    evaluate(&t.predict_all(&data.test, &data.embeddings), &data.test, &ACTIVITYNET_THRESHOLDS).expect("test split has labels")
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean over in-interval clips of whether the clip is closest, by cosine,
/// to its own sentence's planted signal.
pub fn per_clip_cosine_accuracy(data: &SyntheticDataset, samples: &[siamgtr::dataset::ParagraphSample]) -> f64 {
    let map = &data.planted_map;
    let (mut hit, mut total) = (0usize, 0usize);
    for s in samples {
        let gt = s.gt_intervals().expect("synthetic samples carry labels");
        let signals: Vec<Vec<f64>> = s
            .sentences
            .iter()
            .map(|sent| {
                let e = data.embeddings.lookup(&sent.tokens);
                let mut mean = vec![0.0; e.cols()];
                for r in 0..e.rows() {
                    for (m, x) in mean.iter_mut().zip(e.row(r)) {
                        *m += x / e.rows() as f64;
                    }
                }
                (0..map.rows()).map(|i| map.row(i).iter().zip(&mean).map(|(a, b)| a * b).sum()).collect()
            })
            .collect();
        let len = s.features.len();
        for (j, iv) in gt.iter().enumerate() {
            for c in 0..len {
                let center = (c as f64 + 0.5) / len as f64;
                if !iv.contains(center) {
                    continue;
                }
                let x: Vec<f64> = s.features.row(c).iter().map(|&v| f64::from(v)).collect();
                let best = (0..signals.len())
                    .max_by(|&a, &b| cosine(&x, &signals[a]).total_cmp(&cosine(&x, &signals[b])))
                    .expect("at least one sentence");
                hit += usize::from(best == j);
                total += 1;
            }
        }
    }
    hit as f64 / total.max(1) as f64
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-12)
}
