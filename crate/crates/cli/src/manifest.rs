use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spatex_core::corpus::xml_files;
use spatex_core::pipeline::HybridConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to rerun a command: one is written per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Option<HybridConfig>,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub corpus: Option<String>,
    pub corpus_fingerprint: Option<String>,
    pub code_version: String,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.into(),
            args: std::env::args().skip(1).collect(),
            config: None,
            overrides: Vec::new(),
            seed: None,
            corpus: None,
            corpus_fingerprint: None,
            code_version: env!("CARGO_PKG_VERSION").into(),
            started_at: now(),
            finished_at: String::new(),
        }
    }

    pub fn with_config(mut self, config: &HybridConfig, overrides: &[String]) -> Self {
        self.seed = Some(config.seed);
        self.config = Some(config.clone());
        self.overrides = overrides.to_vec();
        self
    }

    pub fn with_corpus(mut self, path: &Path) -> std::io::Result<Self> {
        self.corpus = Some(path.display().to_string());
        self.corpus_fingerprint = Some(fingerprint(path)?);
        Ok(self)
    }

    pub fn finish(mut self, dir: &Path) -> anyhow::Result<()> {
        self.finished_at = now();
        std::fs::create_dir_all(dir)?;
        spatex_core::write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&self)?)?;
        Ok(())
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// SHA-256 over a corpus file, or over the relative path and contents of
/// every XML file of a corpus directory in path order.
pub fn fingerprint(path: &Path) -> std::io::Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        for file in xml_files(path)? {
            let rel = file
                .strip_prefix(path)
                .unwrap_or(&file)
                .to_string_lossy()
                .replace('\\', "/");
            let bytes = std::fs::read(&file)?;
            h.update(rel.as_bytes());
            h.update([0]);
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    } else {
        std::io::copy(&mut std::fs::File::open(path)?, &mut h)?;
    }
    Ok(format!("{:x}", h.finalize()))
}
