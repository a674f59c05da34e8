//! Joint training, union decoding, evaluation and ablation runs.

mod ablation;
mod config;
mod eval;
mod model;
mod window;

use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spatex_nn::NnError;

use crate::cls_model::ClsError;
use crate::corpus::{split_dataset, CanonicalLink, Document};
use crate::cte::{Tagger, TaggerError};
use crate::fsutil::write_atomic;
use crate::rfx::RfxError;

pub use ablation::{ablation_matrix, ablation_table, run_ablation, AblationRow};
pub use config::{ConfigError, ElementSource, HybridConfig};
pub use eval::{evaluate, evaluate_links, EvalError, EvalReport, Prf, Subset};
pub use model::{
    encoder_dims, load_lexicon, union_links, DocumentPrediction, Example, HybridModel, StepLosses, Vocabs,
};
pub use window::{build_window, encode_mlm, encode_s2s, DocAnalysis, Window};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("model: {0}")]
    Model(#[from] ClsError),
    #[error("reflexivity: {0}")]
    Rfx(#[from] RfxError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("tagger: {0}")]
    Tagger(#[from] TaggerError),
    #[error("weights: {0}")]
    Weights(#[from] NnError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("loss diverged (total = {}) on batch {batch:?}", losses.total)]
    Diverged { losses: StepLosses, batch: Vec<String> },
    #[error("training set yields no examples")]
    NoExamples,
    #[error("checkpoint schema version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub total: f64,
    pub cls: Option<f64>,
    pub gen: Option<f64>,
    pub rfx: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_f1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub tagger_losses: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub train_documents: usize,
    pub dev_documents: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    schema_version: u32,
    config: HybridConfig,
    edge_weights: Option<Vec<f64>>,
    report: TrainReport,
}

/// Train-side documents and the dev carve-out. No dev set when the carve-out
/// would be empty.
pub fn dev_split(config: &HybridConfig, docs: &[Document]) -> (Vec<Document>, Vec<Document>) {
    let n_dev = (config.dev_fraction * docs.len() as f64).round() as usize;
    if n_dev == 0 || docs.len() < 2 {
        return (docs.to_vec(), Vec::new());
    }
    match split_dataset(docs, 1.0 - config.dev_fraction, config.seed) {
        Ok(split) => split,
        Err(_) => (docs.to_vec(), Vec::new()),
    }
}

fn snapshot(model: &HybridModel) -> Result<Vec<u8>, PipelineError> {
    let mut bytes = Vec::new();
    model.params.save(&mut bytes)?;
    Ok(bytes)
}

/// Full training run: tagger first when decoding uses predicted elements,
/// then the joint objective with early stopping on dev micro-F1. When
/// `checkpoint_dir` is given a checkpoint is written after every epoch and
/// the final one holds the best weights.
pub fn train(
    config: &HybridConfig,
    docs: &[Document],
    checkpoint_dir: Option<&Path>,
) -> Result<(HybridModel, TrainReport), PipelineError> {
    config.validate()?;
    let (fit_docs, dev_docs) = dev_split(config, docs);
    let mut model = HybridModel::from_training_docs(config.clone(), &fit_docs)?;
    let mut report = TrainReport {
        train_documents: fit_docs.len(),
        dev_documents: dev_docs.len(),
        ..Default::default()
    };
    if config.decode_elements == ElementSource::Tagger {
        report.tagger_losses = model.fit_tagger(&fit_docs);
    }
    let examples = model.examples(&fit_docs);
    if examples.is_empty() {
        return Err(PipelineError::NoExamples);
    }
    info!("{} training windows, {} dev documents", examples.len(), dev_docs.len());

    let mut opt = model.optimizer();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut best: Option<(f64, Vec<u8>)> = None;
    let mut stale = 0;
    let mut step = 0;
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut n = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let losses = match model.train_step(&mut opt, &batch) {
                Ok(Some(l)) => l,
                Ok(None) => continue,
                Err(e) => {
                    if let (PipelineError::Diverged { losses, batch }, Some(dir)) = (&e, checkpoint_dir) {
                        let dump =
                            serde_json::json!({ "epoch": epoch, "step": step, "losses": losses, "batch": batch });
                        std::fs::create_dir_all(dir)?;
                        write_atomic(&dir.join("divergence.json"), &serde_json::to_vec_pretty(&dump)?)?;
                    }
                    return Err(e);
                }
            };
            report.steps.push(StepRecord {
                epoch,
                step,
                total: losses.total,
                cls: losses.cls,
                gen: losses.gen,
                rfx: losses.rfx,
            });
            sum += losses.total;
            n += 1;
            step += 1;
        }
        let mean_loss = sum / n.max(1) as f64;

        let dev_f1 = if dev_docs.is_empty() {
            None
        } else {
            let pred: Vec<CanonicalLink> = model.decode(&dev_docs)?.into_iter().flat_map(|p| p.links).collect();
            Some(evaluate(&pred, &dev_docs, Subset::All)?.overall.f1)
        };
        info!("epoch {epoch}: loss {mean_loss:.4}, dev F1 {dev_f1:?}");
        report.epochs.push(EpochRecord {
            epoch,
            mean_loss,
            dev_f1,
        });
        if let Some(f1) = dev_f1 {
            if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                best = Some((f1, snapshot(&model)?));
                report.best_epoch = Some(epoch);
                stale = 0;
            } else {
                stale += 1;
            }
        }
        if let Some(dir) = checkpoint_dir {
            save_checkpoint(dir, &model, &report)?;
        }
        if dev_f1.is_some() && stale >= config.patience {
            info!("no dev improvement for {stale} epochs; stopping");
            break;
        }
    }
    if let Some((_, bytes)) = best {
        model.params.load(bytes.as_slice())?;
    }
    if let Some(dir) = checkpoint_dir {
        save_checkpoint(dir, &model, &report)?;
    }
    Ok((model, report))
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| PipelineError::Io(e.into_error()))
}

/// Write `config.json`, `vocab.json`, `weights.bin`, the tagger files and
/// the loss history (`metrics.csv`, `epochs.csv`). Every file is replaced
/// atomically.
pub fn save_checkpoint(dir: &Path, model: &HybridModel, report: &TrainReport) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)?;
    let meta = CheckpointMeta {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        config: model.config.clone(),
        edge_weights: model.cls.gcn.as_ref().map(|g| g.edge_weights(&model.params)),
        report: report.clone(),
    };
    write_atomic(&dir.join("config.json"), &serde_json::to_vec_pretty(&meta)?)?;
    write_atomic(&dir.join("vocab.json"), &serde_json::to_vec(&model.vocabs)?)?;
    write_atomic(&dir.join("weights.bin"), &snapshot(model)?)?;
    if let Some(tagger) = &model.tagger {
        tagger.save(dir)?;
    }
    write_atomic(&dir.join("metrics.csv"), &csv_bytes(&report.steps)?)?;
    write_atomic(&dir.join("epochs.csv"), &csv_bytes(&report.epochs)?)?;
    Ok(())
}

/// Rebuild a model from a checkpoint directory.
pub fn load_checkpoint(dir: &Path) -> Result<(HybridModel, TrainReport), PipelineError> {
    let raw: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("config.json"))?)?;
    let found = raw.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != CHECKPOINT_SCHEMA_VERSION {
        return Err(PipelineError::Version {
            found,
            expected: CHECKPOINT_SCHEMA_VERSION,
        });
    }
    let meta: CheckpointMeta = serde_json::from_value(raw)?;
    let mut vocabs: Vocabs = serde_json::from_slice(&std::fs::read(dir.join("vocab.json"))?)?;
    vocabs.reindex();
    let mut model = HybridModel::new(meta.config, vocabs)?;
    model
        .params
        .load(std::io::BufReader::new(std::fs::File::open(dir.join("weights.bin"))?))?;
    if dir.join("tagger.json").exists() {
        model.tagger = Some(Tagger::load(dir)?);
    } else if model.config.decode_elements == ElementSource::Tagger {
        warn!("checkpoint has no tagger; decoding will use gold elements");
    }
    Ok((model, meta.report))
}
