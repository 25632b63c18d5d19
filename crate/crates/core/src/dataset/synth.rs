//! Synthetic paragraph-grounding corpus with a planted video/text alignment.
//!
//! Every sentence is a small bag of tokens around one latent topic token.
//! Clips inside sentence `i`'s interval carry `A · mean_embedding(i)` plus
//! Gaussian noise for one fixed random map `A`; clips outside every
//! interval are pure noise.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{build_concept_dictionary, ConceptDictionary, EmbeddingTable, FeatureSequence, ParagraphSample, Sentence};
use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub num_train: usize,
    pub num_val: usize,
    pub num_test: usize,
    pub n_sentences_range: [usize; 2],
    pub clip_len_range: [usize; 2],
    pub feature_dim: usize,
    pub vocab_size: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default = "defaults::word_dim")]
    pub word_dim: usize,
    #[serde(default = "defaults::num_topics")]
    pub num_topics: usize,
    #[serde(default = "defaults::words_per_topic")]
    pub words_per_topic: usize,
    /// Fraction of each video covered by sentence intervals.
    #[serde(default = "defaults::coverage_range")]
    pub coverage_range: [f64; 2],
    #[serde(default = "defaults::signal_gain")]
    pub signal_gain: f64,
}

mod defaults {
    pub fn word_dim() -> usize {
        32
    }
    pub fn num_topics() -> usize {
        40
    }
    pub fn words_per_topic() -> usize {
        4
    }
    pub fn coverage_range() -> [f64; 2] {
        [0.6, 0.9]
    }
    pub fn signal_gain() -> f64 {
        1.4
    }
}

/// Filler words appended to each sentence, inclusive range.
const FILLER_WORDS: [usize; 2] = [1, 2];
/// Topic-cluster words per sentence besides the topic token, inclusive range.
const CLUSTER_WORDS: [usize; 2] = [1, 3];
const CLUSTER_SPREAD: f64 = 0.5;
const MIN_INTERVAL_CLIPS: usize = 2;

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_train: 200,
            num_val: 50,
            num_test: 50,
            n_sentences_range: [2, 4],
            clip_len_range: [48, 96],
            feature_dim: 32,
            vocab_size: 300,
            noise_sigma: 1.0,
            seed: 7,
            word_dim: defaults::word_dim(),
            num_topics: defaults::num_topics(),
            words_per_topic: defaults::words_per_topic(),
            coverage_range: defaults::coverage_range(),
            signal_gain: defaults::signal_gain(),
        }
    }
}

impl SynthConfig {
    fn first_filler(&self) -> usize {
        1 + self.num_topics * (1 + self.words_per_topic)
    }

    pub fn validate(&self) -> Result<()> {
        let gen = |m: String| Err(Error::Generation(m));
        let [n_lo, n_hi] = self.n_sentences_range;
        let [l_lo, l_hi] = self.clip_len_range;
        let [c_lo, c_hi] = self.coverage_range;
        if n_lo == 0 || n_lo > n_hi {
            return gen(format!("bad n_sentences_range {:?}", self.n_sentences_range));
        }
        if l_lo == 0 || l_lo > l_hi {
            return gen(format!("bad clip_len_range {:?}", self.clip_len_range));
        }
        if !(c_lo > 0.0 && c_lo <= c_hi) {
            return gen(format!("bad coverage_range {:?}", self.coverage_range));
        }
        if c_hi > 1.0 {
            return gen(format!("requested interval coverage {c_hi} exceeds the whole video"));
        }
        if ((c_lo * l_lo as f64).floor() as usize) < MIN_INTERVAL_CLIPS * n_hi {
            return gen(format!(
                "{n_hi} sentences of at least {MIN_INTERVAL_CLIPS} clips do not fit in {c_lo} of {l_lo} clips"
            ));
        }
        if self.num_topics < n_hi {
            return gen(format!("need at least {n_hi} topics, have {}", self.num_topics));
        }
        if self.vocab_size < self.first_filler() + FILLER_WORDS[1] {
            return gen(format!("vocab_size {} too small for {} topics", self.vocab_size, self.num_topics));
        }
        if self.words_per_topic < CLUSTER_WORDS[1] {
            return gen(format!("words_per_topic must be at least {}", CLUSTER_WORDS[1]));
        }
        if self.feature_dim == 0 || self.word_dim == 0 || !(self.noise_sigma >= 0.0) {
            return gen("feature_dim, word_dim must be positive and noise_sigma non-negative".into());
        }
        Ok(())
    }

    /// Token ids that act as latent topics (and concepts).
    pub fn topic_tokens(&self) -> Vec<u32> {
        (1..=self.num_topics as u32).collect()
    }
}

/// Output of [`generate_synthetic`].
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub train: Vec<ParagraphSample>,
    pub val: Vec<ParagraphSample>,
    pub test: Vec<ParagraphSample>,
    pub embeddings: EmbeddingTable,
    pub concepts: ConceptDictionary,
    /// The planted `D_v x D_w` map from sentence embedding to clip signal.
    pub planted_map: Mat,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect()
}

/// Splits `total` into `weights.len()` non-negative integers proportional to
/// `weights` (largest remainder), each at least `floor`.
fn apportion(total: usize, weights: &[f64], floor: usize) -> Vec<usize> {
    let spare = total - floor * weights.len();
    let wsum: f64 = weights.iter().sum();
    let raw: Vec<f64> = if wsum > 0.0 {
        weights.iter().map(|w| spare as f64 * w / wsum).collect()
    } else {
        vec![spare as f64 / weights.len() as f64; weights.len()]
    };
    let mut parts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let mut left = spare - parts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).expect("finite").then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        parts[i] += 1;
        left -= 1;
    }
    parts.iter().map(|p| p + floor).collect()
}

struct World<'a> {
    cfg: &'a SynthConfig,
    table: &'a EmbeddingTable,
    map: &'a Mat,
}

impl World<'_> {
    fn sentence(&self, rng: &mut ChaCha8Rng, topic: u32) -> Sentence {
        let cfg = self.cfg;
        let cluster_base = 1 + cfg.num_topics + (topic as usize - 1) * cfg.words_per_topic;
        let n_cluster = rng.random_range(CLUSTER_WORDS[0]..=CLUSTER_WORDS[1]);
        let n_filler = rng.random_range(FILLER_WORDS[0]..=FILLER_WORDS[1]);
        let mut tokens = vec![topic];
        for i in sample_indices(rng, cfg.words_per_topic, n_cluster) {
            tokens.push((cluster_base + i) as u32);
        }
        let first_filler = cfg.first_filler();
        for _ in 0..n_filler {
            tokens.push(rng.random_range(first_filler..cfg.vocab_size) as u32);
        }
        // Fisher-Yates keeps the topic token from always leading.
        for i in (1..tokens.len()).rev() {
            let j = rng.random_range(0..=i);
            tokens.swap(i, j);
        }
        Sentence::new(tokens).expect("non-empty")
    }

    /// `A · mean(word vectors)` for one sentence.
    fn signal(&self, sentence: &Sentence) -> Vec<f64> {
        let emb = self.table.lookup(&sentence.tokens);
        let mut mean = vec![0.0; emb.cols()];
        for i in 0..emb.rows() {
            for (m, x) in mean.iter_mut().zip(emb.row(i)) {
                *m += x / emb.rows() as f64;
            }
        }
        Mat::gemm(self.map, false, &Mat::col_vector(&mean), false).into_data()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, id: String) -> Result<ParagraphSample> {
        let cfg = self.cfg;
        let len = rng.random_range(cfg.clip_len_range[0]..=cfg.clip_len_range[1]);
        let n = rng.random_range(cfg.n_sentences_range[0]..=cfg.n_sentences_range[1]);
        let coverage = rng.random_range(cfg.coverage_range[0]..=cfg.coverage_range[1]);
        let covered = ((coverage * len as f64).round() as usize).clamp(MIN_INTERVAL_CLIPS * n, len);
        let seg_weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let gap_weights: Vec<f64> = (0..=n).map(|_| rng.random_range(0.0..1.0)).collect();
        let segs = apportion(covered, &seg_weights, MIN_INTERVAL_CLIPS);
        let gaps = apportion(len - covered, &gap_weights, 0);

        let topics: Vec<u32> = sample_indices(rng, cfg.num_topics, n).into_iter().map(|t| t as u32 + 1).collect();
        let sentences: Vec<Sentence> = topics.iter().map(|&t| self.sentence(rng, t)).collect();

        let mut clip_owner = vec![None; len];
        let mut spans = Vec::with_capacity(n);
        let mut cursor = 0;
        for i in 0..n {
            cursor += gaps[i];
            let (s, e) = (cursor, cursor + segs[i]);
            for owner in &mut clip_owner[s..e] {
                *owner = Some(i);
            }
            spans.push(Interval::new(s as f64 / len as f64, e as f64 / len as f64)?);
            cursor = e;
        }

        let signals: Vec<Vec<f64>> = sentences.iter().map(|s| self.signal(s)).collect();
        let dim = cfg.feature_dim;
        let mut values = Vec::with_capacity(len * dim);
        for owner in &clip_owner {
            let noise = normal_vec(rng, dim, cfg.noise_sigma);
            match owner {
                Some(i) => values.extend(signals[*i].iter().zip(&noise).map(|(s, z)| (s + z) as f32)),
                None => values.extend(noise.iter().map(|&z| z as f32)),
            }
        }
        let features = FeatureSequence::new(len, dim, values)?;
        ParagraphSample::new(id, len as f64, features, sentences, Some(spans))
    }
}

/// Generates train/val/test splits, the word-vector table and the topic
/// concept dictionary. Deterministic in `seed`.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wd = config.word_dim;
    let unit = 1.0 / (wd as f64).sqrt();

    let mut vectors: Vec<Vec<f32>> = vec![vec![0.0; wd]];
    let topic_vecs: Vec<Vec<f64>> = (0..config.num_topics).map(|_| normal_vec(&mut rng, wd, unit)).collect();
    for t in &topic_vecs {
        vectors.push(t.iter().map(|&x| x as f32).collect());
    }
    for t in &topic_vecs {
        for _ in 0..config.words_per_topic {
            let jitter = normal_vec(&mut rng, wd, unit * CLUSTER_SPREAD);
            vectors.push(t.iter().zip(&jitter).map(|(a, b)| (a + b) as f32).collect());
        }
    }
    while vectors.len() < config.vocab_size {
        vectors.push(normal_vec(&mut rng, wd, unit).into_iter().map(|x| x as f32).collect());
    }
    let table = EmbeddingTable::new(wd, vectors)?;
    let map = Mat::from_vec(config.feature_dim, wd, normal_vec(&mut rng, config.feature_dim * wd, config.signal_gain));

    let world = World { cfg: config, table: &table, map: &map };
    let mut split = |name: &str, count: usize| -> Result<Vec<ParagraphSample>> {
        (0..count).map(|i| world.sample(&mut rng, format!("{name}_{i:04}"))).collect()
    };
    let mut train = split("train", config.num_train)?;
    let mut val = split("val", config.num_val)?;
    let mut test = split("test", config.num_test)?;

    let topics = config.topic_tokens();
    let concepts = build_concept_dictionary(&train, &table, topics.len(), Some(&topics))?;
    for s in train.iter_mut().chain(val.iter_mut()).chain(test.iter_mut()) {
        s.assign_concepts(&concepts);
    }
    Ok(SyntheticDataset { train, val, test, embeddings: table, concepts, planted_map: map })
}
