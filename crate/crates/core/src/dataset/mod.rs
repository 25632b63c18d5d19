//! Data model for paragraph grounding samples, file formats, synthetic data
//! with planted alignments, and concept dictionaries.

mod concepts;
mod io;
mod synth;

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::tensor::Mat;

pub use concepts::{build_concept_dictionary, concept_labels, ConceptLabels};
pub use io::{
    load_dataset, load_split_dir, read_annotations, read_concepts, read_embeddings, read_feature_file,
    write_annotations, write_concepts, write_embeddings, write_feature_file, write_split_dir, Annotation,
    AnnotationFile, AnnotationSentence, LoadedSplit, FEATURE_MAGIC,
};
pub use synth::{generate_synthetic, SynthConfig, SyntheticDataset};

/// `L x D_v` clip features; clip `i` covers normalized time `[i/L, (i+1)/L)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    len: usize,
    dim: usize,
    values: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(len: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if len == 0 || dim == 0 {
            return Err(Error::InvalidArgument(format!("feature sequence must be non-empty, got {len}x{dim}")));
        }
        if values.len() != len * dim {
            return Err(Error::InvalidArgument(format!(
                "feature buffer has {} values, expected {len}x{dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature sequence has non-finite entries".into()));
        }
        Ok(Self { len, dim, values })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument("ragged feature rows".into()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false: sequences hold at least one clip.
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_mat(&self) -> Mat {
        Mat::from_vec(self.len, self.dim, self.values.iter().map(|&v| f64::from(v)).collect())
    }

    /// Rows `start..end`; may be empty, unlike a full sequence.
    pub fn rows_range(&self, start: usize, end: usize) -> &[f32] {
        &self.values[start * self.dim..end * self.dim]
    }
}

/// One tokenized sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<u32>,
    /// Indices into the active [`ConceptDictionary`].
    pub concept_ids: BTreeSet<usize>,
}

impl Sentence {
    pub fn new(tokens: Vec<u32>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("sentence has no tokens".into()));
        }
        Ok(Self { tokens, concept_ids: BTreeSet::new() })
    }
}

/// Counts reads of a guarded field.
#[derive(Debug, Default)]
pub struct AccessCounter(AtomicUsize);

impl AccessCounter {
    pub fn hit(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn count(&self) -> usize {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

impl Clone for AccessCounter {
    fn clone(&self) -> Self {
        Self(AtomicUsize::new(self.count()))
    }
}

/// A video with its ordered paragraph and optional sentence timestamps.
#[derive(Clone, Debug)]
pub struct ParagraphSample {
    pub video_id: String,
    pub duration_s: f64,
    pub features: FeatureSequence,
    pub sentences: Vec<Sentence>,
    gt_intervals: Option<Vec<Interval>>,
    pub paragraph_concept_ids: BTreeSet<usize>,
    gt_reads: AccessCounter,
}

impl PartialEq for ParagraphSample {
    fn eq(&self, other: &Self) -> bool {
        self.video_id == other.video_id
            && self.duration_s == other.duration_s
            && self.features == other.features
            && self.sentences == other.sentences
            && self.gt_intervals == other.gt_intervals
            && self.paragraph_concept_ids == other.paragraph_concept_ids
    }
}

impl ParagraphSample {
    pub fn new(
        video_id: impl Into<String>,
        duration_s: f64,
        features: FeatureSequence,
        sentences: Vec<Sentence>,
        gt_intervals: Option<Vec<Interval>>,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if sentences.is_empty() {
            return Err(Error::sample(&video_id, "paragraph has no sentences"));
        }
        if let Some(gt) = &gt_intervals {
            if gt.len() != sentences.len() {
                return Err(Error::sample(
                    &video_id,
                    format!("{} intervals for {} sentences", gt.len(), sentences.len()),
                ));
            }
            if gt.windows(2).any(|w| w[0].start() > w[1].start()) {
                return Err(Error::sample(&video_id, "sentences are not in temporal order"));
            }
        }
        Ok(Self {
            video_id,
            duration_s,
            features,
            sentences,
            gt_intervals,
            paragraph_concept_ids: BTreeSet::new(),
            gt_reads: AccessCounter::default(),
        })
    }

    pub fn num_sentences(&self) -> usize {
        self.sentences.len()
    }

    pub fn has_gt(&self) -> bool {
        self.gt_intervals.is_some()
    }

    /// Ground-truth sentence intervals. Every call is counted.
    pub fn gt_intervals(&self) -> Option<&[Interval]> {
        self.gt_reads.hit();
        self.gt_intervals.as_deref()
    }

    /// How many times [`Self::gt_intervals`] has been called.
    pub fn gt_read_count(&self) -> usize {
        self.gt_reads.count()
    }

    pub fn reset_gt_read_count(&self) {
        self.gt_reads.reset();
    }

    /// Copy with timestamps removed.
    pub fn without_gt(&self) -> Self {
        let mut s = self.clone();
        s.gt_intervals = None;
        s
    }

    /// Recomputes sentence and paragraph concept indices against `dict`.
    pub fn assign_concepts(&mut self, dict: &ConceptDictionary) {
        let labels = concept_labels(self, dict);
        for (s, row) in self.sentences.iter_mut().zip(&labels.sentences) {
            s.concept_ids = row.iter().enumerate().filter(|(_, &v)| v > 0.5).map(|(k, _)| k).collect();
        }
        self.paragraph_concept_ids =
            labels.paragraph.iter().enumerate().filter(|(_, &v)| v > 0.5).map(|(k, _)| k).collect();
    }
}

/// Word vectors indexed by token id. Unknown ids map to the zero vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: Vec<Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, vectors: Vec<Vec<f32>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be positive".into()));
        }
        if let Some((i, _)) = vectors.iter().enumerate().find(|(_, v)| v.len() != dim) {
            return Err(Error::InvalidArgument(format!("embedding row {i} has wrong width")));
        }
        Ok(Self { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vectors.len()
    }

    pub fn contains(&self, token: u32) -> bool {
        (token as usize) < self.vectors.len()
    }

    /// Vector for `token`, or `None` when out of vocabulary.
    pub fn get(&self, token: u32) -> Option<&[f32]> {
        self.vectors.get(token as usize).map(Vec::as_slice)
    }

    /// `len x dim` matrix of the token vectors, zeros for unknown tokens.
    pub fn lookup(&self, tokens: &[u32]) -> Mat {
        let mut m = Mat::zeros(tokens.len(), self.dim);
        for (i, &t) in tokens.iter().enumerate() {
            if let Some(v) = self.get(t) {
                for (o, &x) in m.row_mut(i).iter_mut().zip(v) {
                    *o = f64::from(x);
                }
            }
        }
        m
    }
}

/// Ordered concept tokens and their word vectors (`K x D_w`).
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptDictionary {
    pub concepts: Vec<u32>,
    pub embeddings: Mat,
}

impl ConceptDictionary {
    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }
}
