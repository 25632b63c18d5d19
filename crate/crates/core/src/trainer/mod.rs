//! Two-branch training loop, inference and checkpoints.

mod adam;
mod checkpoint;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compose::{pick_background, ComposeConfig, PseudoComposer, VideoRef};
use crate::dataset::{concept_labels, ConceptDictionary, EmbeddingTable, ParagraphSample};
use crate::error::{Error, Result};
use crate::evaluation::Predictions;
use crate::losses::{fully_supervised, weakly_supervised_terms, LossBreakdown, LossWeights, WeakInputs};
use crate::model::{Forward, GroundingModel, GroundingPrediction, ModelConfig};
use crate::tensor::{Mat, Var};

pub use adam::{clip_global_norm, Adam};
pub use checkpoint::{config_hash, Checkpoint, CheckpointHeader, ParamMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Video-paragraph pairs only.
    Ws,
    /// Timestamps on a fixed fraction of the training videos.
    Ss,
    /// Timestamps on every training video.
    Fs,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ws" => Ok(Mode::Ws),
            "ss" => Ok(Mode::Ss),
            "fs" => Ok(Mode::Fs),
            other => Err(Error::Config(format!("unknown mode `{other}` (expected ws, ss or fs)"))),
        }
    }
}

fn default_clip() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub labeled_fraction: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    pub compose: ComposeConfig,
    pub weights: LossWeights,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.labeled_fraction) {
            return Err(Error::Config(format!("labeled_fraction must lie in [0, 1], got {}", self.labeled_fraction)));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config("grad_clip must be non-negative".into()));
        }
        self.compose.validate()?;
        self.weights.validate()
    }
}

/// Everything a training step reads besides the model.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub samples: &'a [ParagraphSample],
    pub embeddings: &'a EmbeddingTable,
    pub concepts: &'a ConceptDictionary,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

/// splitmix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator for a tagged purpose.
pub fn derived_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let s = parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ p));
    ChaCha8Rng::seed_from_u64(s)
}

const TAG_SHUFFLE: u64 = 1;
const TAG_SAMPLE: u64 = 2;
const TAG_DROPOUT: u64 = 3;
const TAG_LABELED: u64 = 4;

pub struct Trainer {
    model: GroundingModel,
    config: TrainConfig,
    optimizer: Adam,
    composer: PseudoComposer,
    epoch: usize,
    step: u64,
}

impl Trainer {
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = GroundingModel::new(model_config)?;
        let optimizer = Adam::new(config.learning_rate, model.store().values());
        let composer = PseudoComposer::new(config.compose.clone())?;
        Ok(Self { model, config, optimizer, composer, epoch: 0, step: 0 })
    }

    pub fn model(&self) -> &GroundingModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut GroundingModel {
        &mut self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Changes the epoch budget, e.g. to extend a resumed run.
    pub fn set_epochs(&mut self, epochs: usize) {
        self.config.epochs = epochs;
    }

    pub fn composer(&self) -> &PseudoComposer {
        &self.composer
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config_hash(&self) -> String {
        config_hash(self.model.config(), &self.config)
    }

    /// Which training samples carry supervision in this mode. SS picks a
    /// seeded subset once; it does not change across epochs.
    pub fn labeled_mask(&self, n: usize) -> Vec<bool> {
        match self.config.mode {
            Mode::Ws => vec![false; n],
            Mode::Fs => vec![true; n],
            Mode::Ss => {
                let k = (self.config.labeled_fraction * n as f64).round() as usize;
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(&mut derived_rng(self.config.seed, &[TAG_LABELED]));
                let mut mask = vec![false; n];
                for &i in &idx[..k.min(n)] {
                    mask[i] = true;
                }
                mask
            }
        }
    }

    /// Checks that every supervised sample has timestamps, without reading
    /// any timestamps of unsupervised ones.
    pub fn check_supervision(&self, samples: &[ParagraphSample], labeled: &[bool]) -> Result<()> {
        for (s, &l) in samples.iter().zip(labeled) {
            if l && !s.has_gt() {
                return Err(Error::sample(
                    &s.video_id,
                    format!("{:?} mode needs timestamps but the annotation has none", self.config.mode),
                ));
            }
        }
        Ok(())
    }

    /// Loss and parameter gradients for one sample.
    pub fn sample_gradients(
        &self,
        data: &TrainData<'_>,
        index: usize,
        supervised: bool,
    ) -> Result<(LossBreakdown, Vec<Mat>)> {
        let sample = &data.samples[index];
        let mut rng = derived_rng(self.config.seed, &[TAG_SAMPLE, self.step, index as u64]);
        let bg_index = pick_background(data.samples.len(), index, &mut rng)
            .ok_or_else(|| Error::InvalidArgument("training needs at least two videos".into()))?;
        let bg = &data.samples[bg_index];
        let comp = self.composer.compose(
            VideoRef { id: &sample.video_id, features: &sample.features },
            VideoRef { id: &bg.video_id, features: &bg.features },
            &mut rng,
        )?;

        let dropout_rng = derived_rng(self.config.seed, &[TAG_DROPOUT, self.step, index as u64]);
        let mut fw = Forward::train(self.model.store(), self.model.config().dropout, dropout_rng);
        let queries = self.model.encode_text(&mut fw, &sample.sentences, data.embeddings);
        let aug = self.model.branch(&mut fw, &comp.features.to_mat(), queries);
        let inf = self.model.branch(&mut fw, &sample.features.to_mat(), queries);
        let logits = self.model.concept_logits(&mut fw, queries, data.concepts);
        let labels = concept_labels(sample, data.concepts).to_mat();
        let inputs = WeakInputs {
            aug: &aug.state,
            inf: &inf.state,
            concept_logits: logits,
            concept_labels: &labels,
            pseudo_interval: &comp.pseudo_interval,
            pseudo_len: comp.features.len(),
        };
        let mut terms = weakly_supervised_terms(&mut fw.graph, &inputs, &self.config.weights);
        if supervised {
            let gt = sample.gt_intervals().ok_or_else(|| Error::sample(&sample.video_id, "missing timestamps"))?;
            let maps: Vec<Var> = inf.state.layers.iter().map(|l| l.attention).collect();
            terms.fs = Some(fully_supervised(&mut fw.graph, inf.state.intervals, &maps, gt));
        }
        let total = terms.total(&mut fw.graph, &self.config.weights);
        let breakdown = terms.breakdown(&fw.graph, total);
        if !breakdown.is_finite() {
            return Err(Error::NonFiniteLoss {
                sample: sample.video_id.clone(),
                detail: serde_json::to_string(&breakdown).unwrap_or_default(),
            });
        }
        let grads = fw.graph.backward(total).into_param_grads(self.model.store());
        Ok((breakdown, grads))
    }

    /// One optimizer update over `batch` (indices into `data.samples`).
    /// Per-sample gradients are reduced in batch order.
    pub fn train_step(&mut self, data: &TrainData<'_>, batch: &[usize], labeled: &[bool]) -> Result<StepLog> {
        let start = Instant::now();
        let mut sum: Option<Vec<Mat>> = None;
        let mut loss = LossBreakdown::default();
        for &i in batch {
            let (b, grads) = self.sample_gradients(data, i, labeled[i])?;
            loss.add_assign(&b);
            match sum.as_mut() {
                None => sum = Some(grads),
                Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
            }
        }
        let mut grads = sum.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let inv = 1.0 / batch.len() as f64;
        grads.iter_mut().for_each(|g| g.scale_assign(inv));
        loss.scale(inv);
        let grad_norm = clip_global_norm(&mut grads, self.config.grad_clip);
        self.optimizer.step(self.model.store_mut().values_mut(), &grads);
        self.step += 1;
        Ok(StepLog {
            step: self.step,
            epoch: self.epoch,
            loss,
            grad_norm,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Runs one epoch over a seeded shuffle and returns the mean breakdown.
    pub fn train_epoch(&mut self, data: &TrainData<'_>, log: &mut dyn FnMut(&StepLog)) -> Result<LossBreakdown> {
        let n = data.samples.len();
        let labeled = self.labeled_mask(n);
        self.check_supervision(data.samples, &labeled)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut derived_rng(self.config.seed, &[TAG_SHUFFLE, self.epoch as u64]));
        let mut mean = LossBreakdown::default();
        let mut batches = 0;
        for batch in order.chunks(self.config.batch_size) {
            let entry = self.train_step(data, batch, &labeled)?;
            mean.add_assign(&entry.loss);
            batches += 1;
            log(&entry);
        }
        mean.scale(1.0 / batches.max(1) as f64);
        self.epoch += 1;
        Ok(mean)
    }

    /// Trains until `config.epochs` epochs are complete.
    pub fn fit(&mut self, data: &TrainData<'_>, log: &mut dyn FnMut(&StepLog)) -> Result<Vec<LossBreakdown>> {
        let mut out = Vec::new();
        while self.epoch < self.config.epochs {
            out.push(self.train_epoch(data, log)?);
        }
        Ok(out)
    }

    /// Inference branch only: no composition, no concept head.
    pub fn infer(&self, sample: &ParagraphSample, table: &EmbeddingTable) -> GroundingPrediction {
        self.model.infer(sample, table)
    }

    pub fn predict_all(&self, samples: &[ParagraphSample], table: &EmbeddingTable) -> Predictions {
        predict_all(&self.model, samples, table)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let store = self.model.store();
        let params = store
            .ids()
            .map(|id| {
                let v = store.value(id);
                ParamMeta { name: store.name(id).to_string(), rows: v.rows(), cols: v.cols() }
            })
            .collect();
        Checkpoint {
            header: CheckpointHeader {
                model: self.model.config().clone(),
                train: self.config.clone(),
                config_hash: self.config_hash(),
                epoch: self.epoch,
                step: self.step,
                adam_t: self.optimizer.t,
                params,
            },
            params: store.values().to_vec(),
            adam_m: self.optimizer.m.clone(),
            adam_v: self.optimizer.v.clone(),
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    /// Rebuilds a trainer from a checkpoint. With `expected_hash`, a
    /// configuration mismatch is an error.
    pub fn from_checkpoint(ckpt: Checkpoint, expected_hash: Option<&str>) -> Result<Self> {
        if let Some(h) = expected_hash {
            ckpt.check_hash(h)?;
        }
        let h = ckpt.header;
        let mut trainer = Trainer::new(h.model, h.train)?;
        {
            let store = trainer.model.store_mut();
            if store.len() != ckpt.params.len() {
                return Err(Error::Checkpoint("parameter count differs from the model".into()));
            }
            for ((id, meta), value) in store.ids().collect::<Vec<_>>().into_iter().zip(&h.params).zip(ckpt.params) {
                if store.name(id) != meta.name || store.value(id).shape() != value.shape() {
                    return Err(Error::Checkpoint(format!("parameter `{}` does not match the model", meta.name)));
                }
                *store.value_mut(id) = value;
            }
        }
        trainer.optimizer.t = h.adam_t;
        trainer.optimizer.m = ckpt.adam_m;
        trainer.optimizer.v = ckpt.adam_v;
        trainer.epoch = h.epoch;
        trainer.step = h.step;
        Ok(trainer)
    }

    pub fn load_checkpoint(path: &Path, expected_hash: Option<&str>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?, expected_hash)
    }
}

pub fn predict_all(model: &GroundingModel, samples: &[ParagraphSample], table: &EmbeddingTable) -> Predictions {
    samples.iter().map(|s| (s.video_id.clone(), model.infer(s, table))).collect()
}
