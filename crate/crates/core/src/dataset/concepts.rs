use std::collections::{BTreeMap, HashMap};

use super::{ConceptDictionary, EmbeddingTable, ParagraphSample};
use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Selects `k` concept tokens.
///
/// An explicit list is used verbatim. Otherwise tokens are ranked by how
/// often they occur in the training sentences, ties going to the smaller id.
pub fn build_concept_dictionary(
    samples: &[ParagraphSample],
    embeddings: &EmbeddingTable,
    k: usize,
    explicit_list: Option<&[u32]>,
) -> Result<ConceptDictionary> {
    if k == 0 {
        return Err(Error::InvalidArgument("concept dictionary size must be at least 1".into()));
    }
    let concepts: Vec<u32> = match explicit_list {
        Some(list) => list.to_vec(),
        None => {
            let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
            for s in samples {
                for sent in &s.sentences {
                    for &t in &sent.tokens {
                        *counts.entry(t).or_default() += 1;
                    }
                }
            }
            if k > counts.len() {
                return Err(Error::InvalidArgument(format!(
                    "requested {k} concepts but only {} distinct tokens were observed",
                    counts.len()
                )));
            }
            let mut ranked: Vec<(u32, usize)> = counts.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            ranked.into_iter().take(k).map(|(t, _)| t).collect()
        }
    };
    let embeddings = embeddings.lookup(&concepts);
    Ok(ConceptDictionary { concepts, embeddings })
}

/// Multi-hot concept targets of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptLabels {
    pub paragraph: Vec<f64>,
    pub sentences: Vec<Vec<f64>>,
}

impl ConceptLabels {
    /// `(N + 1) x K` matrix: paragraph row first, then one row per sentence.
    pub fn to_mat(&self) -> Mat {
        let mut rows = vec![self.paragraph.clone()];
        rows.extend(self.sentences.iter().cloned());
        Mat::from_rows(&rows)
    }
}

pub fn concept_labels(sample: &ParagraphSample, dict: &ConceptDictionary) -> ConceptLabels {
    let index: HashMap<u32, usize> = dict.concepts.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let k = dict.len();
    let sentences: Vec<Vec<f64>> = sample
        .sentences
        .iter()
        .map(|s| {
            let mut v = vec![0.0; k];
            for t in &s.tokens {
                if let Some(&i) = index.get(t) {
                    v[i] = 1.0;
                }
            }
            v
        })
        .collect();
    let mut paragraph = vec![0.0; k];
    for s in &sentences {
        for (p, &x) in paragraph.iter_mut().zip(s) {
            *p = f64::max(*p, x);
        }
    }
    ConceptLabels { paragraph, sentences }
}
