#![allow(dead_code)]

pub mod gradcheck;
pub mod oracle;

use std::path::PathBuf;

use spatex_core::corpus::{parse_document, Document};
use spatex_core::pipeline::{ElementSource, HybridConfig};

pub fn fixture(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/fixtures")
        .join(path)
}

pub fn load(path: &str) -> Document {
    let p = fixture(path);
    let id = p.file_stem().unwrap().to_string_lossy().into_owned();
    parse_document(&id, &std::fs::read(&p).unwrap()).unwrap()
}

pub fn recess() -> Document {
    load("recess/recess.xml")
}

/// Every document of the fixture corpus, sorted by file name.
pub fn corpus() -> Vec<Document> {
    let mut paths: Vec<_> = std::fs::read_dir(fixture("corpus"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| load(&format!("corpus/{}", p.file_name().unwrap().to_string_lossy())))
        .collect()
}

/// The five single-sentence documents.
pub fn five_sentences() -> Vec<Document> {
    ["recess", "cattle", "dogs", "bird", "hikers"]
        .iter()
        .map(|n| load(&format!("corpus/{n}.xml")))
        .collect()
}

/// A model small enough to overfit on a handful of sentences in seconds.
pub fn tiny_config() -> HybridConfig {
    HybridConfig {
        hidden_size: 32,
        attention_heads: 4,
        ffn_size: 64,
        encoder_layers: 1,
        decoder_layers: 1,
        max_seq_len: 64,
        window_overlap: 16,
        max_decode_len: 256,
        learning_rate: 3e-3,
        tagger_learning_rate: 1e-2,
        batch_size: 5,
        max_epochs: 3,
        tagger_epochs: 3,
        s2s_min_freq: 1,
        dev_fraction: 0.0,
        decode_elements: ElementSource::Gold,
        ..HybridConfig::default()
    }
}
