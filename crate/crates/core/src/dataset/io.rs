use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use super::{EmbeddingTable, FeatureSequence, ParagraphSample, Sentence};
use crate::error::{Error, Result};
use crate::interval::Interval;

pub const FEATURE_MAGIC: &[u8; 4] = b"SGFT";
const HEADER_LEN: usize = 16;

pub fn write_feature_file(path: &Path, seq: &FeatureSequence) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + seq.values().len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for v in seq.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<FeatureSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::FeatureFormat { path: path.to_path_buf(), reason };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4-byte slice")) as usize;
    let (len, dim) = (word(4), word(8));
    let expected = HEADER_LEN + len * dim * 4;
    if bytes.len() != expected {
        return Err(bad(format!("{len}x{dim} header needs {expected} bytes, file has {}", bytes.len())));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    FeatureSequence::new(len, dim, values).map_err(|e| bad(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationSentence {
    pub text_tokens: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span_s: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub id: String,
    pub duration_s: f64,
    pub sentences: Vec<AnnotationSentence>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFile {
    pub videos: Vec<Annotation>,
}

pub fn read_annotations(path: &Path) -> Result<AnnotationFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn write_annotations(path: &Path, file: &AnnotationFile) -> Result<()> {
    write_json(path, file)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::json(path.display().to_string(), e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Samples of one split plus loader diagnostics.
#[derive(Clone, Debug)]
pub struct LoadedSplit {
    pub samples: Vec<ParagraphSample>,
    /// Timestamps that fell outside `[0, duration]` and were clamped.
    pub clamped_timestamps: usize,
}

fn sample_from_annotation(ann: &Annotation, features: FeatureSequence, clamped: &mut usize) -> Result<ParagraphSample> {
    let id = ann.id.as_str();
    if ann.sentences.is_empty() {
        return Err(Error::sample(id, "paragraph has no sentences"));
    }
    if !(ann.duration_s.is_finite() && ann.duration_s > 0.0) {
        return Err(Error::sample(id, format!("duration_s must be positive, got {}", ann.duration_s)));
    }
    let mut sentences = Vec::with_capacity(ann.sentences.len());
    for (i, s) in ann.sentences.iter().enumerate() {
        let sent = Sentence::new(s.text_tokens.clone()).map_err(|_| Error::sample(id, format!("sentence {i} has no tokens")))?;
        sentences.push(sent);
    }
    let with_span = ann.sentences.iter().filter(|s| s.span_s.is_some()).count();
    let gt = if with_span == 0 {
        None
    } else if with_span < ann.sentences.len() {
        return Err(Error::sample(id, "either all sentences or none must carry span_s"));
    } else {
        let mut gt = Vec::with_capacity(with_span);
        for (i, s) in ann.sentences.iter().enumerate() {
            let [a, b] = s.span_s.expect("checked above");
            if !(a.is_finite() && b.is_finite()) || a > b {
                return Err(Error::sample(id, format!("sentence {i} has an invalid span [{a}, {b}]")));
            }
            let mut norm = |x: f64| {
                let t = x / ann.duration_s;
                if !(0.0..=1.0).contains(&t) {
                    *clamped += 1;
                    warn!("{id}: timestamp {x}s outside [0, {}]s clamped", ann.duration_s);
                }
                t.clamp(0.0, 1.0)
            };
            let (s0, s1) = (norm(a), norm(b));
            gt.push(Interval::new(s0, s1)?);
        }
        if gt.windows(2).any(|w| w[0].start() > w[1].start()) {
            return Err(Error::sample(id, "sentence spans are not in temporal order"));
        }
        Some(gt)
    };
    ParagraphSample::new(id, ann.duration_s, features, sentences, gt)
}

/// Loads every annotated video, reading `<features_dir>/<id>.sgft`.
pub fn load_dataset(features_dir: &Path, annotations: &Path) -> Result<LoadedSplit> {
    let file = read_annotations(annotations)?;
    let mut samples = Vec::with_capacity(file.videos.len());
    let mut clamped = 0;
    for ann in &file.videos {
        let path = features_dir.join(format!("{}.sgft", ann.id));
        if !path.exists() {
            return Err(Error::sample(&ann.id, format!("missing feature file {}", path.display())));
        }
        let feats = read_feature_file(&path)?;
        samples.push(sample_from_annotation(ann, feats, &mut clamped)?);
    }
    Ok(LoadedSplit { samples, clamped_timestamps: clamped })
}

/// Loads `<dir>/features/*.sgft` with `<dir>/annotations.json`.
pub fn load_split_dir(dir: &Path) -> Result<LoadedSplit> {
    load_dataset(&dir.join("features"), &dir.join("annotations.json"))
}

fn annotation_of(sample: &ParagraphSample) -> Annotation {
    let spans = sample.gt_intervals();
    Annotation {
        id: sample.video_id.clone(),
        duration_s: sample.duration_s,
        sentences: sample
            .sentences
            .iter()
            .enumerate()
            .map(|(i, s)| AnnotationSentence {
                text_tokens: s.tokens.clone(),
                span_s: spans.map(|g| [g[i].start() * sample.duration_s, g[i].end() * sample.duration_s]),
            })
            .collect(),
    }
}

/// Writes `<dir>/features/<id>.sgft` and `<dir>/annotations.json`.
pub fn write_split_dir(dir: &Path, samples: &[ParagraphSample]) -> Result<()> {
    let feat_dir: PathBuf = dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    for s in samples {
        write_feature_file(&feat_dir.join(format!("{}.sgft", s.video_id)), &s.features)?;
    }
    let file = AnnotationFile { videos: samples.iter().map(annotation_of).collect() };
    write_annotations(&dir.join("annotations.json"), &file)
}

pub fn write_embeddings(path: &Path, table: &EmbeddingTable) -> Result<()> {
    write_json(path, table)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let t: EmbeddingTable = read_json(path)?;
    EmbeddingTable::new(t.dim(), (0..t.vocab_size()).map(|i| t.get(i as u32).expect("in range").to_vec()).collect())
}

#[derive(Serialize, Deserialize)]
struct ConceptList {
    concepts: Vec<u32>,
}

pub fn write_concepts(path: &Path, concepts: &[u32]) -> Result<()> {
    write_json(path, &ConceptList { concepts: concepts.to_vec() })
}

pub fn read_concepts(path: &Path) -> Result<Vec<u32>> {
    Ok(read_json::<ConceptList>(path)?.concepts)
}
