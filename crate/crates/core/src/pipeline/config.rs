use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("at least one of use_cls and use_gen must be enabled")]
    NoBranch,
    #[error("use_rfx is enabled but lexicon_path is empty")]
    MissingLexicon,
    #[error("lexicon file {0} does not exist")]
    LexiconNotFound(String),
    #[error("unknown optimizer {0:?} (only \"adamw\" is supported)")]
    Optimizer(String),
    #[error("unknown analysis provider {0:?}")]
    Provider(String),
    #[error("invalid value for {key}: {message}")]
    Value { key: String, message: String },
    #[error("override {0:?} is not of the form KEY=VALUE")]
    OverrideSyntax(String),
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Toml(#[from] toml::de::Error),
}

/// Where decoding takes its spatial elements from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementSource {
    Tagger,
    Gold,
}

/// Flat run configuration. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridConfig {
    pub use_cls: bool,
    pub use_gen: bool,
    pub use_rfx: bool,
    pub use_gcn: bool,
    pub use_cross_attention: bool,

    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden_size: usize,
    pub optimizer_name: String,
    pub max_epochs: usize,

    pub attention_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_size: usize,
    pub gcn_layers: usize,
    pub max_seq_len: usize,
    pub window_overlap: usize,
    pub max_decode_len: usize,
    pub weight_decay: f64,
    pub max_grad_norm: f64,

    pub loss_weight_cls: f64,
    pub loss_weight_gen: f64,
    pub loss_weight_rfx: f64,
    pub rfx_positive_only: bool,

    pub dev_fraction: f64,
    pub patience: usize,
    pub split_ratio: f64,

    pub mlm_min_freq: usize,
    pub s2s_min_freq: usize,
    pub max_vocab: usize,

    pub tagger_epochs: usize,
    pub tagger_learning_rate: f64,
    pub decode_elements: ElementSource,

    pub provider: String,
    /// TSV antonym file, or `builtin` for the shipped seed list.
    pub lexicon_path: String,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            use_cls: true,
            use_gen: true,
            use_rfx: true,
            use_gcn: true,
            use_cross_attention: true,
            learning_rate: 2e-5,
            batch_size: 4,
            seed: 1024,
            hidden_size: 768,
            optimizer_name: "adamw".into(),
            max_epochs: 20,
            attention_heads: 8,
            encoder_layers: 1,
            decoder_layers: 1,
            ffn_size: 1536,
            gcn_layers: 2,
            max_seq_len: 512,
            window_overlap: 64,
            max_decode_len: 160,
            weight_decay: 0.01,
            max_grad_norm: 1.0,
            loss_weight_cls: 1.0,
            loss_weight_gen: 1.0,
            loss_weight_rfx: 1.0,
            rfx_positive_only: false,
            dev_fraction: 0.1,
            patience: 5,
            split_ratio: 0.8,
            mlm_min_freq: 1,
            s2s_min_freq: 2,
            max_vocab: 30000,
            tagger_epochs: 20,
            tagger_learning_rate: 2e-5,
            decode_elements: ElementSource::Tagger,
            provider: "rule-based".into(),
            lexicon_path: "builtin".into(),
        }
    }
}

fn bad(key: &str, message: &str) -> ConfigError {
    ConfigError::Value {
        key: key.into(),
        message: message.into(),
    }
}

impl HybridConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Apply `KEY=VALUE`. The value is read as a TOML literal, falling back
    /// to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::OverrideSyntax(assignment.into()))?;
        let key = key.trim();
        let mut table = toml::Table::try_from(&*self).expect("config is a table");
        if !table.contains_key(key) {
            return Err(ConfigError::UnknownKey(key.into()));
        }
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.trim().to_string()));
        table.insert(key.to_string(), parsed);
        *self = table.try_into().map_err(|e: toml::de::Error| bad(key, e.message()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.use_cls && !self.use_gen {
            return Err(ConfigError::NoBranch);
        }
        if self.optimizer_name.to_lowercase() != "adamw" {
            return Err(ConfigError::Optimizer(self.optimizer_name.clone()));
        }
        if crate::analysis::provider_by_name(&self.provider).is_none() {
            return Err(ConfigError::Provider(self.provider.clone()));
        }
        if self.use_rfx {
            if self.lexicon_path.trim().is_empty() {
                return Err(ConfigError::MissingLexicon);
            }
            if self.lexicon_path != "builtin" && !Path::new(&self.lexicon_path).exists() {
                return Err(ConfigError::LexiconNotFound(self.lexicon_path.clone()));
            }
        }
        if self.hidden_size == 0 || self.attention_heads == 0 || !self.hidden_size.is_multiple_of(self.attention_heads)
        {
            return Err(bad("hidden_size", "must be a positive multiple of attention_heads"));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be positive"));
        }
        if self.learning_rate <= 0.0 || self.tagger_learning_rate <= 0.0 {
            return Err(bad("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(bad("dev_fraction", "must lie in [0, 1)"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(bad("split_ratio", "must lie in (0, 1)"));
        }
        if self.max_seq_len < 2 || self.max_decode_len == 0 {
            return Err(bad("max_seq_len", "sequence limits must be positive"));
        }
        Ok(())
    }
}
