use std::path::Path;

use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spatex_nn::{
    AdamW, AdamWConfig, Crf, Linear, NnError, ParamStore, Tape, TransformerConfig, TransformerEncoder, Var,
};

use super::bio::TagScheme;
use super::{gold_elements, TaggedElement};
use crate::corpus::{Document, ElementKind, SpatialRole};
use crate::fsutil::write_atomic;
use crate::vocab::WordPieceVocab;

pub const TAGGER_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TaggerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("weights: {0}")]
    Weights(#[from] NnError),
    #[error("metadata: {0}")]
    Json(#[from] serde_json::Error),
    #[error("tagger schema version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggerConfig {
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub window_overlap: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        Self {
            hidden: 768,
            heads: 8,
            layers: 1,
            ffn: 1536,
            max_len: 512,
            window_overlap: 64,
            learning_rate: 2e-5,
            epochs: 20,
            batch_size: 4,
            seed: 1024,
        }
    }
}

/// Per-token BIO tags from the element head and the role head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleTagSequence {
    pub element_tags: Vec<usize>,
    pub role_tags: Vec<usize>,
}

impl RoleTagSequence {
    /// Elements from the element head; each takes the role tagged at its
    /// head token, `None` where the role head says `O`. `offset` is the
    /// document index of the first token.
    pub fn elements(&self, offset: usize, sentence_id: usize) -> Vec<TaggedElement> {
        let kinds = TagScheme::elements();
        let roles = TagScheme::roles();
        kinds
            .spans(&self.element_tags)
            .into_iter()
            .map(|(s, e, ty)| {
                let role = roles
                    .decode(self.role_tags[e - 1])
                    .map_or(SpatialRole::None, |(_, r)| SpatialRole::TAGGED[r]);
                TaggedElement {
                    id: None,
                    start: offset + s,
                    end: offset + e,
                    kind: ElementKind::ALL[ty],
                    role,
                    sentence_id,
                }
            })
            .collect()
    }
}

/// Gold tags of one sentence. Elements with no role get `O` on the role
/// head; nested elements cannot be represented and are skipped.
pub fn gold_tags(doc: &Document, sentence_id: usize) -> RoleTagSequence {
    let s = doc.sentences[sentence_id];
    let elements = gold_elements(doc, sentence_id);
    let kind_spans: Vec<_> = elements
        .iter()
        .map(|e| (e.start - s.start, e.end - s.start, kind_index(e.kind)))
        .collect();
    let role_spans: Vec<_> = elements
        .iter()
        .filter_map(|e| role_index(e.role).map(|r| (e.start - s.start, e.end - s.start, r)))
        .collect();
    RoleTagSequence {
        element_tags: TagScheme::elements().encode(s.len(), &kind_spans),
        role_tags: TagScheme::roles().encode(s.len(), &role_spans),
    }
}

fn kind_index(k: ElementKind) -> usize {
    ElementKind::ALL.iter().position(|&x| x == k).unwrap()
}

fn role_index(r: SpatialRole) -> Option<usize> {
    SpatialRole::TAGGED.iter().position(|&x| x == r)
}

#[derive(Serialize, Deserialize)]
struct TaggerMeta {
    schema_version: u32,
    config: TaggerConfig,
    vocab: WordPieceVocab,
}

/// Shared encoder with two CRF heads.
pub struct Tagger {
    pub config: TaggerConfig,
    pub vocab: WordPieceVocab,
    pub params: ParamStore,
    encoder: TransformerEncoder,
    element_head: Linear,
    role_head: Linear,
    element_crf: Crf,
    role_crf: Crf,
}

impl Tagger {
    pub fn new(config: TaggerConfig, vocab: WordPieceVocab) -> Self {
        let mut ps = ParamStore::new(config.seed);
        let kinds = TagScheme::elements();
        let roles = TagScheme::roles();
        let encoder = TransformerEncoder::new(
            &mut ps,
            "tagger.encoder",
            TransformerConfig {
                vocab_size: vocab.len(),
                hidden: config.hidden,
                heads: config.heads,
                layers: config.layers,
                ffn: config.ffn,
                max_len: config.max_len,
            },
        );
        Self {
            element_head: Linear::new(&mut ps, "tagger.element_head", config.hidden, kinds.num_tags()),
            role_head: Linear::new(&mut ps, "tagger.role_head", config.hidden, roles.num_tags()),
            element_crf: Crf::new(&mut ps, "tagger.element_crf", kinds.num_tags()),
            role_crf: Crf::new(&mut ps, "tagger.role_crf", roles.num_tags()),
            encoder,
            params: ps,
            vocab,
            config,
        }
    }

    /// Word-level emissions of both heads from one encoder pass. Each word
    /// is represented by its first piece.
    fn emissions(&self, t: &mut Tape, words: &[&str]) -> (Var, Var) {
        let (pieces, ranges) = self.vocab.encode_words(words);
        let mut ids = Vec::with_capacity(pieces.len() + 1);
        ids.push(self.vocab.cls());
        ids.extend(pieces);
        let h = self.encoder.forward_windowed(t, &ids, self.config.window_overlap);
        let firsts: Vec<usize> = ranges.iter().map(|r| r.start + 1).collect();
        let words_h = t.gather_rows(h, &firsts);
        let e = self.element_head.forward(t, words_h);
        let r = self.role_head.forward(t, words_h);
        (e, r)
    }

    /// Sum of both CRF negative log-likelihoods.
    pub fn loss(&self, t: &mut Tape, words: &[&str], gold: &RoleTagSequence) -> Var {
        let (e, r) = self.emissions(t, words);
        let a = self.element_crf.nll(t, e, &gold.element_tags);
        let b = self.role_crf.nll(t, r, &gold.role_tags);
        t.add(a, b)
    }

    /// Constrained Viterbi decode of both heads.
    pub fn tag_roles(&self, words: &[&str]) -> RoleTagSequence {
        if words.is_empty() {
            return RoleTagSequence {
                element_tags: Vec::new(),
                role_tags: Vec::new(),
            };
        }
        let mut t = Tape::new(&self.params);
        let (e, r) = self.emissions(&mut t, words);
        let e: Array2<f64> = t.value(e).clone();
        let r: Array2<f64> = t.value(r).clone();
        RoleTagSequence {
            element_tags: self
                .element_crf
                .viterbi(&self.params, &e, Some(&TagScheme::elements().constraints())),
            role_tags: self
                .role_crf
                .viterbi(&self.params, &r, Some(&TagScheme::roles().constraints())),
        }
    }

    /// Predicted elements of one document sentence.
    pub fn predict_elements(&self, doc: &Document, sentence_id: usize) -> Vec<TaggedElement> {
        let s = doc.sentences[sentence_id];
        let words: Vec<&str> = doc.sentence_tokens(&s).iter().map(|t| t.text.as_str()).collect();
        self.tag_roles(&words).elements(s.start, sentence_id)
    }

    /// Train on every sentence of `docs`. Returns the mean loss per epoch.
    pub fn fit(&mut self, docs: &[Document]) -> Vec<f64> {
        let mut examples: Vec<(Vec<&str>, RoleTagSequence)> = Vec::new();
        for d in docs {
            for s in &d.sentences {
                let words = d.sentence_tokens(s).iter().map(|t| t.text.as_str()).collect();
                examples.push((words, gold_tags(d, s.id)));
            }
        }
        let mut opt = AdamW::new(AdamWConfig {
            lr: self.config.learning_rate,
            ..AdamWConfig::default()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut history = Vec::new();
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(self.config.batch_size.max(1)) {
                let grads = {
                    let mut t = Tape::new(&self.params);
                    let losses: Vec<Var> = batch
                        .iter()
                        .map(|&i| self.loss(&mut t, &examples[i].0, &examples[i].1))
                        .collect();
                    let sum = t.concat_rows(&losses);
                    let loss = t.mean_all(sum);
                    total += t.scalar(loss) * batch.len() as f64;
                    t.backward(loss).into_params()
                };
                opt.step(&mut self.params, &grads);
            }
            let mean = total / examples.len().max(1) as f64;
            info!("tagger epoch {epoch}: loss {mean:.4}");
            history.push(mean);
        }
        history
    }

    pub fn save(&self, dir: &Path) -> Result<(), TaggerError> {
        let mut weights = Vec::new();
        self.params.save(&mut weights)?;
        write_atomic(&dir.join("tagger.bin"), &weights)?;
        let meta = TaggerMeta {
            schema_version: TAGGER_SCHEMA_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
        };
        write_atomic(&dir.join("tagger.json"), &serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, TaggerError> {
        let meta: TaggerMeta = serde_json::from_slice(&std::fs::read(dir.join("tagger.json"))?)?;
        if meta.schema_version != TAGGER_SCHEMA_VERSION {
            return Err(TaggerError::Version {
                found: meta.schema_version,
                expected: TAGGER_SCHEMA_VERSION,
            });
        }
        let mut vocab = meta.vocab;
        vocab.reindex();
        let mut tagger = Self::new(meta.config, vocab);
        tagger
            .params
            .load(std::io::BufReader::new(std::fs::File::open(dir.join("tagger.bin"))?))?;
        Ok(tagger)
    }
}

/// True when both sequences are valid BIO.
pub fn is_well_formed(seq: &RoleTagSequence) -> bool {
    TagScheme::elements().is_valid(&seq.element_tags)
        && TagScheme::roles().is_valid(&seq.role_tags)
        && seq.element_tags.len() == seq.role_tags.len()
}
