//! Command implementations behind the `spatex` binary.

pub mod manifest;

use std::fmt;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;
use spatex_core::corpus::{count_links, load_xml_dir, read_jsonl, split_dataset, write_jsonl, CanonicalLink, Document};
use spatex_core::gen_model::write_diagnostics;
use spatex_core::pipeline::{
    ablation_table, evaluate, load_checkpoint, run_ablation, train, ConfigError, HybridConfig, PipelineError, Subset,
};

use manifest::RunManifest;

pub const CORPUS_ROOT_VAR: &str = "SPATEX_CORPUS_ROOT";
pub const CHECKPOINT_ROOT_VAR: &str = "SPATEX_CHECKPOINT_ROOT";

/// Bad input from the caller: exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// 2 for usage and configuration errors, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let config = err.chain().any(|e| {
        e.is::<UsageError>()
            || e.is::<ConfigError>()
            || matches!(e.downcast_ref::<PipelineError>(), Some(PipelineError::Config(_)))
    });
    if config {
        2
    } else {
        1
    }
}

#[derive(Parser)]
#[command(name = "spatex", version, about = "Spatial relation extraction from annotated text")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// TOML configuration file; unset keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// KEY=VALUE applied after the config file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for splitting and training; wins over the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(Subcommand)]
pub enum Command {
    /// Parse a directory of annotated XML into a JSON-lines corpus.
    Ingest {
        input: PathBuf,
        #[arg(long, default_value = "ingested")]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint directory.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "checkpoint")]
        out: PathBuf,
    },
    /// Decode a corpus with a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "predictions")]
        out: PathBuf,
    },
    /// Score predictions against gold links.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        /// Decode with this checkpoint.
        #[arg(long, conflicts_with_all = ["predictions", "gold_as_predictions"])]
        checkpoint: Option<PathBuf>,
        /// Score an existing predictions file instead of decoding.
        #[arg(long, conflicts_with = "gold_as_predictions")]
        predictions: Option<PathBuf>,
        /// Score the gold links against themselves.
        #[arg(long)]
        gold_as_predictions: bool,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long, default_value = "all")]
        subset: Subset,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "evaluation")]
        out: PathBuf,
    },
    /// Train and score every module combination.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "all")]
        subset: Subset,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "ablation")]
        out: PathBuf,
    },
}

/// `path` as given when absolute or when the root variable is unset,
/// otherwise joined onto the root.
fn under_root(var: &str, path: &Path) -> PathBuf {
    match std::env::var_os(var) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

pub fn resolve_config(args: &ConfigArgs) -> anyhow::Result<HybridConfig> {
    let mut config = match &args.config {
        Some(p) => HybridConfig::load(p)?,
        None => HybridConfig::default(),
    };
    for o in &args.overrides {
        config.apply_override(o)?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

/// Resolve a corpus argument against the corpus root; it must exist.
fn corpus_path(path: &Path) -> anyhow::Result<PathBuf> {
    let path = under_root(CORPUS_ROOT_VAR, path);
    if !path.exists() {
        return Err(usage(format!("corpus {} does not exist", path.display())));
    }
    Ok(path)
}

/// A JSON-lines corpus file or a directory of XML documents.
pub fn load_corpus(path: &Path) -> anyhow::Result<Vec<Document>> {
    let docs = if path.is_dir() {
        load_xml_dir(path)?
    } else {
        let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        read_jsonl(BufReader::new(f))?
    };
    if docs.is_empty() {
        return Err(usage(format!("no input documents in {}", path.display())));
    }
    Ok(docs)
}

/// The requested side of the seeded document split. Corpora too small to
/// split are used whole.
pub fn select_split(docs: Vec<Document>, split: Split, config: &HybridConfig) -> anyhow::Result<Vec<Document>> {
    if split == Split::All {
        return Ok(docs);
    }
    if docs.len() < 2 {
        warn!("corpus has {} document(s); using it whole for {split:?}", docs.len());
        return Ok(docs);
    }
    let (train_docs, test_docs) = split_dataset(&docs, config.split_ratio, config.seed)?;
    Ok(if split == Split::Train { train_docs } else { test_docs })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    spatex_core::write_atomic(path, &serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn write_links(path: &Path, links: &[CanonicalLink]) -> anyhow::Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for l in links {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_links(path: &Path) -> anyhow::Result<Vec<CanonicalLink>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}: line {}", path.display(), i + 1)))
        .collect()
}

#[derive(Debug, Serialize)]
pub struct IngestReport {
    pub documents: usize,
    pub elements: usize,
    pub links: usize,
    pub null_role_links: usize,
    pub null_role_fraction: f64,
    pub links_by_type: std::collections::BTreeMap<String, usize>,
}

pub fn ingest(input: &Path, out: &Path) -> anyhow::Result<IngestReport> {
    let input = under_root(CORPUS_ROOT_VAR, input);
    if !input.is_dir() {
        return Err(usage(format!("{} is not a directory", input.display())));
    }
    let manifest = RunManifest::start("ingest").with_corpus(&input)?;
    let docs = load_xml_dir(&input)?;
    if docs.is_empty() {
        return Err(usage(format!("no input documents in {}", input.display())));
    }
    let hist = count_links(&docs);
    let report = IngestReport {
        documents: docs.len(),
        elements: docs.iter().map(|d| d.elements.len()).sum(),
        links: hist.total,
        null_role_links: hist.null_role,
        null_role_fraction: hist.null_role_fraction(),
        links_by_type: hist.by_type.iter().map(|(t, n)| (t.tag().to_string(), *n)).collect(),
    };
    std::fs::create_dir_all(out)?;
    let mut bytes = Vec::new();
    write_jsonl(&docs, &mut bytes)?;
    spatex_core::write_atomic(&out.join("corpus.jsonl"), &bytes)?;
    write_json(&out.join("ingest.json"), &report)?;
    manifest.finish(out)?;
    Ok(report)
}

pub fn run_train(corpus: &Path, split: Split, args: &ConfigArgs, out: &Path) -> anyhow::Result<()> {
    let config = resolve_config(args)?;
    let corpus = corpus_path(corpus)?;
    let out = under_root(CHECKPOINT_ROOT_VAR, out);
    let manifest = RunManifest::start("train")
        .with_config(&config, &args.overrides)
        .with_corpus(&corpus)?;
    let docs = select_split(load_corpus(&corpus)?, split, &config)?;
    info!("training on {} documents", docs.len());
    let (_, report) = train(&config, &docs, Some(&out))?;
    if let (Some(first), Some(last)) = (report.steps.first(), report.steps.last()) {
        println!(
            "trained {} steps over {} epochs: loss {:.4} -> {:.4}",
            report.steps.len(),
            report.epochs.len(),
            first.total,
            last.total
        );
    }
    manifest.finish(&out)?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn decode_split(
    checkpoint: &Path,
    corpus: &Path,
    split: Split,
    seed: Option<u64>,
) -> anyhow::Result<(
    HybridConfig,
    Vec<Document>,
    Vec<spatex_core::pipeline::DocumentPrediction>,
)> {
    let (model, _) = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let mut config = model.config.clone();
    if let Some(s) = seed {
        config.seed = s;
    }
    let docs = select_split(load_corpus(corpus)?, split, &config)?;
    let preds = model.decode(&docs)?;
    Ok((config, docs, preds))
}

pub fn run_predict(
    checkpoint: &Path,
    corpus: &Path,
    split: Split,
    seed: Option<u64>,
    out: &Path,
) -> anyhow::Result<()> {
    let corpus = corpus_path(corpus)?;
    let checkpoint = under_root(CHECKPOINT_ROOT_VAR, checkpoint);
    let manifest = RunManifest::start("predict").with_corpus(&corpus)?;
    let (config, _, preds) = decode_split(&checkpoint, &corpus, split, seed)?;
    let manifest = manifest.with_config(&config, &[]);
    std::fs::create_dir_all(out)?;
    let links: Vec<CanonicalLink> = preds.iter().flat_map(|p| p.links.iter().cloned()).collect();
    write_links(&out.join("predictions.jsonl"), &links)?;
    let generations: Vec<_> = preds.iter().flat_map(|p| p.generations.iter().cloned()).collect();
    write_diagnostics(
        &generations,
        BufWriter::new(std::fs::File::create(out.join("generations.jsonl"))?),
    )?;
    manifest.finish(out)?;
    println!(
        "{} links for {} documents written to {}",
        links.len(),
        preds.len(),
        out.display()
    );
    Ok(())
}

pub struct EvaluateArgs<'a> {
    pub corpus: &'a Path,
    pub checkpoint: Option<&'a Path>,
    pub predictions: Option<&'a Path>,
    pub gold_as_predictions: bool,
    pub split: Split,
    pub subset: Subset,
    pub config: &'a ConfigArgs,
    pub out: &'a Path,
}

pub fn run_evaluate(a: EvaluateArgs<'_>) -> anyhow::Result<spatex_core::pipeline::EvalReport> {
    let corpus = corpus_path(a.corpus)?;
    let manifest = RunManifest::start("evaluate").with_corpus(&corpus)?;
    let (config, docs, pred) = match (a.checkpoint, a.predictions) {
        (Some(ckpt), _) => {
            let ckpt = under_root(CHECKPOINT_ROOT_VAR, ckpt);
            let (config, docs, preds) = decode_split(&ckpt, &corpus, a.split, a.config.seed)?;
            (config, docs, preds.into_iter().flat_map(|p| p.links).collect())
        }
        (None, predictions) => {
            let config = resolve_config(a.config)?;
            let docs = select_split(load_corpus(&corpus)?, a.split, &config)?;
            let pred: Vec<CanonicalLink> = match predictions {
                Some(p) => read_links(p)?,
                None if a.gold_as_predictions => docs.iter().flat_map(Document::canonical_links).collect(),
                None => bail!(usage(
                    "evaluate needs --checkpoint, --predictions or --gold-as-predictions"
                )),
            };
            (config, docs, pred)
        }
    };
    let manifest = manifest.with_config(&config, &a.config.overrides);
    let report = evaluate(&pred, &docs, a.subset)?;
    std::fs::create_dir_all(a.out)?;
    write_json(&a.out.join("report.json"), &report)?;
    spatex_core::write_atomic(&a.out.join("report.txt"), report.to_table().as_bytes())?;
    manifest.finish(a.out)?;
    Ok(report)
}

pub fn run_ablate(corpus: &Path, subset: Subset, args: &ConfigArgs, out: &Path) -> anyhow::Result<String> {
    let config = resolve_config(args)?;
    let corpus = corpus_path(corpus)?;
    let manifest = RunManifest::start("ablate")
        .with_config(&config, &args.overrides)
        .with_corpus(&corpus)?;
    let docs = load_corpus(&corpus)?;
    let train_docs = select_split(docs.clone(), Split::Train, &config)?;
    let test_docs = select_split(docs, Split::Test, &config)?;
    let rows = run_ablation(&config, &train_docs, &test_docs, subset)?;
    let table = ablation_table(&rows);
    std::fs::create_dir_all(out)?;
    write_json(&out.join("ablation.json"), &rows)?;
    spatex_core::write_atomic(&out.join("ablation.txt"), table.as_bytes())?;
    manifest.finish(out)?;
    Ok(table)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest { input, out } => {
            let r = ingest(&input, &out)?;
            println!(
                "{} documents, {} elements, {} links ({} null-role, {:.1}%)",
                r.documents,
                r.elements,
                r.links,
                r.null_role_links,
                100.0 * r.null_role_fraction
            );
            for (t, n) in &r.links_by_type {
                println!("  {t}: {n}");
            }
        }
        Command::Train {
            corpus,
            split,
            config,
            out,
        } => run_train(&corpus, split, &config, &out)?,
        Command::Predict {
            checkpoint,
            corpus,
            split,
            seed,
            out,
        } => run_predict(&checkpoint, &corpus, split, seed, &out)?,
        Command::Evaluate {
            corpus,
            checkpoint,
            predictions,
            gold_as_predictions,
            split,
            subset,
            config,
            out,
        } => {
            let report = run_evaluate(EvaluateArgs {
                corpus: &corpus,
                checkpoint: checkpoint.as_deref(),
                predictions: predictions.as_deref(),
                gold_as_predictions,
                split,
                subset,
                config: &config,
                out: &out,
            })?;
            println!("subset: {}", report.subset);
            print!("{}", report.to_table());
        }
        Command::Ablate {
            corpus,
            subset,
            config,
            out,
        } => print!("{}", run_ablate(&corpus, subset, &config, &out)?),
    }
    Ok(())
}
