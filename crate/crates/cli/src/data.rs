//! Dataset directory layout:
//! `{train,val,test}/{features/*.sgft, annotations.json}`, `embeddings.json`
//! and optionally `concepts.json`.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use siamgtr::dataset::{
    build_concept_dictionary, load_split_dir, read_concepts, read_embeddings, ConceptDictionary, EmbeddingTable,
    ParagraphSample,
};

use crate::error::CliError;

pub const DATA_ROOT_ENV: &str = "SIAMGTR_DATA_ROOT";
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// `--data` wins; a relative `--data` is resolved against the data root
/// when the environment variable is set.
pub fn resolve_data_dir(flag: Option<&Path>) -> Result<PathBuf, CliError> {
    let root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
    match (flag, root) {
        (Some(p), Some(r)) if p.is_relative() => Ok(r.join(p)),
        (Some(p), _) => Ok(p.to_path_buf()),
        (None, Some(r)) => Ok(r),
        (None, None) => Err(CliError::Usage(format!("no dataset given: pass --data or set {DATA_ROOT_ENV}"))),
    }
}

pub fn load_split(dir: &Path, split: &str) -> Result<Vec<ParagraphSample>, CliError> {
    let path = dir.join(split);
    if !path.is_dir() {
        return Err(CliError::Runtime(format!("split directory {} not found", path.display())));
    }
    let loaded = load_split_dir(&path)?;
    if loaded.clamped_timestamps > 0 {
        log::warn!("{split}: {} timestamps clamped into the video", loaded.clamped_timestamps);
    }
    Ok(loaded.samples)
}

pub fn load_embeddings(dir: &Path) -> Result<EmbeddingTable, CliError> {
    Ok(read_embeddings(&dir.join("embeddings.json"))?)
}

/// The dataset's concept list if present, otherwise the `top_k` most
/// frequent training tokens. Also tags `train` with its concept ids.
pub fn concept_dictionary(
    dir: &Path,
    train: &mut [ParagraphSample],
    table: &EmbeddingTable,
    top_k: usize,
) -> Result<ConceptDictionary, CliError> {
    let path = dir.join("concepts.json");
    let explicit = if path.exists() { Some(read_concepts(&path)?) } else { None };
    let k = explicit.as_ref().map_or(top_k, Vec::len);
    let dict = build_concept_dictionary(train, table, k, explicit.as_deref())?;
    for s in train.iter_mut() {
        s.assign_concepts(&dict);
    }
    Ok(dict)
}

/// SHA-256 over relative paths and contents of every file under `paths`,
/// visited in sorted order.
pub fn content_hash(paths: &[&Path]) -> Result<String, CliError> {
    let mut files = Vec::new();
    for p in paths {
        collect(p, p, &mut files)?;
    }
    let mut h = Sha256::new();
    for (rel, full) in files {
        let bytes = fs::read(&full).map_err(|e| CliError::Runtime(format!("{}: {e}", full.display())))?;
        h.update(rel.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn collect(base: &Path, p: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", p.display()));
    if p.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(p).map_err(io)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>().map_err(io)?;
        entries.sort();
        for e in entries {
            collect(base, &e, out)?;
        }
    } else {
        let rel = p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned();
        let name = if rel.is_empty() { p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default() } else { rel };
        out.push((name, p.to_path_buf()));
    }
    Ok(())
}
