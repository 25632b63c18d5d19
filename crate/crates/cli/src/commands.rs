use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use siamgtr::compose::{pick_background, PseudoComposer, VideoRef};
use siamgtr::dataset::{generate_synthetic, write_concepts, write_embeddings, write_split_dir};
use siamgtr::evaluation::{evaluate, EvalReport, Predictions};
use siamgtr::losses::LossBreakdown;
use siamgtr::model::attention_centroid;
use siamgtr::trainer::{config_hash, predict_all, Checkpoint, Mode, StepLog, TrainData, Trainer};

use crate::config::RunConfig;
use crate::data::{concept_dictionary, content_hash, load_embeddings, load_split, SPLITS};
use crate::error::CliError;
use crate::manifest::RunManifest;

pub const CHECKPOINT_FILE: &str = "checkpoint.sgck";
pub const LOG_FILE: &str = "train_log.jsonl";

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, text).map_err(io_err(path))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Manifest path for a single-file output: `<file>.manifest.json`.
fn file_manifest_dir(out: &Path) -> Result<(PathBuf, String), CliError> {
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    create_dir(&dir)?;
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok((dir, format!("{name}.manifest.json")))
}

fn write_file_manifest(manifest: &RunManifest, out: &Path) -> Result<(), CliError> {
    let (dir, name) = file_manifest_dir(out)?;
    write_json(&dir.join(name), manifest)
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

pub fn synth_gen(config: &RunConfig, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let synth = config.synth()?;
    let seed = seed.unwrap_or(synth.seed);
    let data = generate_synthetic(synth, seed)?;
    create_dir(out)?;
    for (name, samples) in SPLITS.iter().zip([&data.train, &data.val, &data.test]) {
        write_split_dir(&out.join(name), samples)?;
    }
    write_embeddings(&out.join("embeddings.json"), &data.embeddings)?;
    write_concepts(&out.join("concepts.json"), &data.concepts.concepts)?;
    let mut m = RunManifest::new("synth-gen", to_value(synth), Some(seed));
    m.outputs = vec![out.to_path_buf()];
    m.write(out)?;
    log::info!(
        "wrote {} train / {} val / {} test videos to {}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LogLine<'a> {
    Step(&'a StepLog),
    Epoch { epoch: usize, mean: &'a LossBreakdown, val_miou: Option<f64> },
}

pub struct TrainArgs<'a> {
    pub data: &'a Path,
    pub mode: Option<Mode>,
    pub out: &'a Path,
    pub resume: Option<&'a Path>,
    pub epochs: Option<usize>,
}

pub fn train(config: &RunConfig, args: TrainArgs<'_>) -> Result<(), CliError> {
    let mut train_cfg = config.train.clone();
    if let Some(m) = args.mode {
        train_cfg.mode = m;
    }
    if let Some(e) = args.epochs {
        train_cfg.epochs = e;
    }
    if train_cfg.mode == Mode::Ss && train_cfg.labeled_fraction <= 0.0 {
        return Err(CliError::Usage("ss mode needs train.labeled_fraction > 0".into()));
    }

    let mut samples = load_split(args.data, "train")?;
    let table = load_embeddings(args.data)?;
    let val = if args.data.join("val").is_dir() { load_split(args.data, "val")? } else { Vec::new() };
    check_dims(config, &samples, table.dim())?;
    let dict = concept_dictionary(args.data, &mut samples, &table, config.concepts.top_k)?;

    let mut trainer = match args.resume {
        Some(path) => {
            let hash = config_hash(&config.model, &train_cfg);
            let mut t = Trainer::load_checkpoint(path, Some(&hash))?;
            t.set_epochs(train_cfg.epochs);
            log::info!("resumed from {} at epoch {}", path.display(), t.epoch());
            t
        }
        None => Trainer::new(config.model.clone(), train_cfg.clone())?,
    };

    create_dir(args.out)?;
    let log_path = args.out.join(LOG_FILE);
    let mut log_file = BufWriter::new(
        fs::OpenOptions::new()
            .create(true)
            .append(args.resume.is_some())
            .write(true)
            .truncate(args.resume.is_none())
            .open(&log_path)
            .map_err(io_err(&log_path))?,
    );
    let ckpt_path = args.out.join(CHECKPOINT_FILE);
    let data = TrainData { samples: &samples, embeddings: &table, concepts: &dict };
    let val_scored = !val.is_empty() && val.iter().all(|s| s.has_gt());

    while trainer.epoch() < trainer.config().epochs {
        let mut write_err = None;
        let mean = trainer.train_epoch(&data, &mut |entry| {
            let line = serde_json::to_string(&LogLine::Step(entry)).expect("log line serializes");
            if let Err(e) = writeln!(log_file, "{line}") {
                write_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = write_err {
            return Err(io_err(&log_path)(e));
        }
        let val_miou = if val_scored {
            Some(evaluate(&trainer.predict_all(&val, &table), &val, &config.eval.thresholds)?.miou)
        } else {
            None
        };
        let epoch = trainer.epoch();
        let line = serde_json::to_string(&LogLine::Epoch { epoch, mean: &mean, val_miou }).expect("serializes");
        writeln!(log_file, "{line}").map_err(io_err(&log_path))?;
        log_file.flush().map_err(io_err(&log_path))?;
        trainer.save_checkpoint(&ckpt_path)?;
        match val_miou {
            Some(v) => log::info!("epoch {epoch}: loss {:.4}, val mIoU {v:.4}", mean.total),
            None => log::info!("epoch {epoch}: loss {:.4}", mean.total),
        }
    }
    trainer.save_checkpoint(&ckpt_path)?;

    let mut resolved = config.clone();
    resolved.train = trainer.config().clone();
    let mut m = RunManifest::new("train", to_value(&resolved), Some(resolved.train.seed));
    let mut inputs = vec![args.data.to_path_buf()];
    inputs.extend(args.resume.map(Path::to_path_buf));
    m.input_hash = content_hash(&inputs.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    m.inputs = inputs;
    m.outputs = vec![ckpt_path, log_path];
    m.write(args.out)?;
    Ok(())
}

fn check_dims(config: &RunConfig, samples: &[siamgtr::dataset::ParagraphSample], word_dim: usize) -> Result<(), CliError> {
    if let Some(s) = samples.first() {
        if s.features.dim() != config.model.feature_dim {
            return Err(CliError::Usage(format!(
                "model.feature_dim = {} but the features have {} channels",
                config.model.feature_dim,
                s.features.dim()
            )));
        }
    }
    if word_dim != config.model.word_dim {
        return Err(CliError::Usage(format!(
            "model.word_dim = {} but the embedding table has dimension {word_dim}",
            config.model.word_dim
        )));
    }
    Ok(())
}

/// Loads a checkpoint, optionally requiring it to match `config`.
fn load_trainer(ckpt: &Path, config: Option<&RunConfig>) -> Result<Trainer, CliError> {
    let c = Checkpoint::load(ckpt)?;
    let expected = config.map(|cfg| {
        let mut train = cfg.train.clone();
        // The mode is chosen on the command line, so take it from the checkpoint.
        train.mode = c.header.train.mode;
        config_hash(&cfg.model, &train)
    });
    Trainer::from_checkpoint(c, expected.as_deref()).map_err(|e| match e {
        siamgtr::Error::Checkpoint(m) if m.contains("hash") => CliError::Usage(m),
        other => other.into(),
    })
}

pub fn predict(data: &Path, split: &str, ckpt: &Path, out: &Path, config: Option<&RunConfig>) -> Result<(), CliError> {
    let trainer = load_trainer(ckpt, config)?;
    let samples = load_split(data, split)?;
    let table = load_embeddings(data)?;
    let preds = predict_all(trainer.model(), &samples, &table);
    file_manifest_dir(out)?;
    write_json(out, &preds)?;
    let mut m = RunManifest::new("predict", to_value(trainer.config()), Some(trainer.config().seed));
    m.input_hash = content_hash(&[data.join(split).as_path(), ckpt])?;
    m.inputs = vec![data.join(split), ckpt.to_path_buf()];
    m.outputs = vec![out.to_path_buf()];
    write_file_manifest(&m, out)
}

pub struct EvalArgs<'a> {
    pub data: &'a Path,
    pub split: &'a str,
    pub ckpt: Option<&'a Path>,
    pub predictions: Option<&'a Path>,
    pub out: &'a Path,
    pub csv: Option<&'a Path>,
    pub thresholds: Vec<f64>,
    pub config: Option<&'a RunConfig>,
}

pub fn eval(args: EvalArgs<'_>) -> Result<EvalReport, CliError> {
    let samples = load_split(args.data, args.split)?;
    let mut inputs = vec![args.data.join(args.split)];
    let (preds, seed) = match (args.predictions, args.ckpt) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            let preds: Predictions =
                serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
            inputs.push(p.to_path_buf());
            (preds, None)
        }
        (None, Some(c)) => {
            let trainer = load_trainer(c, args.config)?;
            let table = load_embeddings(args.data)?;
            inputs.push(c.to_path_buf());
            (predict_all(trainer.model(), &samples, &table), Some(trainer.config().seed))
        }
        (None, None) => return Err(CliError::Usage("eval needs --ckpt or --predictions".into())),
    };
    let report = evaluate(&preds, &samples, &args.thresholds)?;
    file_manifest_dir(args.out)?;
    write_json(args.out, &report)?;
    let mut outputs = vec![args.out.to_path_buf()];
    if let Some(csv) = args.csv {
        fs::write(csv, report.to_csv()).map_err(io_err(csv))?;
        outputs.push(csv.to_path_buf());
    }
    let mut m = RunManifest::new("eval", serde_json::json!({ "thresholds": args.thresholds }), seed);
    m.input_hash = content_hash(&inputs.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    m.inputs = inputs;
    m.outputs = outputs;
    write_file_manifest(&m, args.out)?;
    Ok(report)
}

#[derive(Serialize)]
struct ComposeRecord {
    t: usize,
    pseudo_interval: siamgtr::interval::Interval,
    provenance: siamgtr::compose::Provenance,
}

pub fn inspect_compose(
    config: &RunConfig,
    data: &Path,
    split: &str,
    index: usize,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let samples = load_split(data, split)?;
    if index >= samples.len() {
        return Err(CliError::Usage(format!("--index {index} out of range for {} videos", samples.len())));
    }
    let composer = PseudoComposer::new(config.train.compose.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = pick_background(samples.len(), index, &mut rng)
        .ok_or_else(|| CliError::Runtime("composition needs at least two videos".into()))?;
    let (f, b) = (&samples[index], &samples[bg]);
    let comp = composer.compose(
        VideoRef { id: &f.video_id, features: &f.features },
        VideoRef { id: &b.video_id, features: &b.features },
        &mut rng,
    )?;
    let record = ComposeRecord { t: comp.features.len(), pseudo_interval: comp.pseudo_interval, provenance: comp.provenance };
    file_manifest_dir(out)?;
    write_json(out, &record)?;
    let mut m = RunManifest::new("inspect compose", to_value(&config.train.compose), Some(seed));
    m.input_hash = content_hash(&[data.join(split).as_path()])?;
    m.inputs = vec![data.join(split)];
    m.outputs = vec![out.to_path_buf()];
    write_file_manifest(&m, out)
}

/// One row per (layer, query): query 0 is the paragraph.
pub fn inspect_decode(data: &Path, split: &str, ckpt: &Path, video: Option<&str>, out: &Path) -> Result<(), CliError> {
    let trainer = load_trainer(ckpt, None)?;
    let samples = load_split(data, split)?;
    let table = load_embeddings(data)?;
    let sample = match video {
        Some(id) => samples
            .iter()
            .find(|s| s.video_id == id)
            .ok_or_else(|| CliError::Usage(format!("video `{id}` not in split {split}")))?,
        None => samples.first().ok_or_else(|| CliError::Runtime(format!("split {split} is empty")))?,
    };
    let trace = trainer.model().trace(sample, &table);
    file_manifest_dir(out)?;
    let file = File::create(out).map_err(io_err(out))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "video_id,layer,query,anchor_start,anchor_end,centroid_clip,centroid")?;
        for (l, layer) in trace.layers.iter().enumerate() {
            let t = layer.attention.cols() as f64;
            for (q, b) in trace.anchor_boxes(l).iter().enumerate() {
                let iv = b.to_interval();
                let c = attention_centroid(&layer.attention, q);
                writeln!(w, "{},{l},{q},{},{},{c},{}", sample.video_id, iv.start(), iv.end(), (c - 0.5) / t)?;
            }
        }
        w.flush()
    };
    write().map_err(io_err(out))?;
    let mut m = RunManifest::new("inspect decode", to_value(trainer.config()), Some(trainer.config().seed));
    m.input_hash = content_hash(&[data.join(split).as_path(), ckpt])?;
    m.inputs = vec![data.join(split), ckpt.to_path_buf()];
    m.outputs = vec![out.to_path_buf()];
    write_file_manifest(&m, out)
}
