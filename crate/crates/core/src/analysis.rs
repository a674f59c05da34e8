//! Linguistic analyses consumed by graph construction: dependency heads and
//! coreference clusters. The trait lets an external parser be plugged in;
//! [`RuleBasedProvider`] is a small deterministic stand-in.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;

#[derive(Debug, thiserror::Error)]
#[error("analysis provider failed: {0}")]
pub struct ProviderError(pub String);

/// A mention as a half-open token range in document coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
}

impl Mention {
    pub fn last(&self) -> usize {
        self.end - 1
    }
}

/// Coreference clusters; within a cluster mentions are in document order
/// and the first one is the antecedent.
pub type Clusters = Vec<Vec<Mention>>;

pub trait AnalysisProvider: Send + Sync {
    /// Head of every token of sentence `sentence_id` as a document token
    /// index, `None` for the root.
    fn dependency_heads(&self, doc: &Document, sentence_id: usize) -> Result<Vec<Option<usize>>, ProviderError>;

    /// All coreference clusters of the document.
    fn coreference(&self, doc: &Document) -> Result<Clusters, ProviderError>;

    fn name(&self) -> &str;
}

const CLOSED_CLASS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "of", "in", "on", "at", "to", "from", "by", "with", "into",
    "onto", "over", "under", "above", "below", "near", "across", "through", "along", "behind", "beside", "between",
    "inside", "outside", "out", "off", "up", "down", "for", "and", "or", "but", "is", "are", "was", "were", "be",
    "been", "being", "am", "has", "have", "had", "do", "does", "did", "will", "would", "can", "could", "should", "may",
    "might", "must", "not", "as", "than", "very", "so", "there",
];

const SINGULAR_PRONOUNS: &[&str] = &["it", "its", "he", "him", "his", "she", "her", "itself"];
const PLURAL_PRONOUNS: &[&str] = &["they", "them", "their", "themselves"];
const RELATIVE_PRONOUNS: &[&str] = &["who", "whom", "which", "whose"];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Number {
    Singular,
    Plural,
    Any,
}

fn lower(s: &str) -> String {
    s.to_lowercase()
}

fn is_pronoun(word: &str) -> bool {
    let w = lower(word);
    SINGULAR_PRONOUNS.contains(&w.as_str())
        || PLURAL_PRONOUNS.contains(&w.as_str())
        || RELATIVE_PRONOUNS.contains(&w.as_str())
}

fn pronoun_number(word: &str) -> Option<Number> {
    let w = lower(word);
    if SINGULAR_PRONOUNS.contains(&w.as_str()) {
        Some(Number::Singular)
    } else if PLURAL_PRONOUNS.contains(&w.as_str()) {
        Some(Number::Plural)
    } else if RELATIVE_PRONOUNS.contains(&w.as_str()) {
        Some(Number::Any)
    } else {
        None
    }
}

fn is_content(word: &str) -> bool {
    word.chars().any(char::is_alphanumeric) && !CLOSED_CLASS.contains(&lower(word).as_str())
}

/// Crude number guess for a content word: a trailing "s" (but not "ss")
/// means plural.
fn noun_number(word: &str) -> Number {
    let w = lower(word);
    if w.len() > 2 && w.ends_with('s') && !w.ends_with("ss") {
        Number::Plural
    } else {
        Number::Singular
    }
}

/// Deterministic heuristics. Dependencies: closed-class tokens and
/// punctuation attach to the next content word (the previous one at the end
/// of a sentence); content words attach to the first content word, which is
/// the root. Coreference: a pronoun refers to the nearest preceding
/// non-pronoun content word of compatible number in the same or previous
/// sentence.
#[derive(Clone, Debug, Default)]
pub struct RuleBasedProvider;

impl AnalysisProvider for RuleBasedProvider {
    fn dependency_heads(&self, doc: &Document, sentence_id: usize) -> Result<Vec<Option<usize>>, ProviderError> {
        let s = doc
            .sentences
            .get(sentence_id)
            .ok_or_else(|| ProviderError(format!("no sentence {sentence_id} in {}", doc.doc_id)))?;
        let tokens = doc.sentence_tokens(s);
        let content: Vec<usize> = tokens.iter().filter(|t| is_content(&t.text)).map(|t| t.index).collect();
        let Some(&root) = content.first() else {
            // no content word: chain everything to the first token
            return Ok(tokens.iter().map(|t| (t.index != s.start).then_some(s.start)).collect());
        };
        Ok(tokens
            .iter()
            .map(|t| {
                if t.index == root {
                    None
                } else if is_content(&t.text) {
                    Some(root)
                } else {
                    content
                        .iter()
                        .copied()
                        .find(|&c| c > t.index)
                        .or_else(|| content.iter().copied().rev().find(|&c| c < t.index))
                }
            })
            .collect())
    }

    fn coreference(&self, doc: &Document) -> Result<Clusters, ProviderError> {
        let mut cluster_of: HashMap<usize, usize> = HashMap::new();
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for tok in &doc.tokens {
            let Some(number) = pronoun_number(&tok.text) else {
                continue;
            };
            let lo_sentence = tok.sentence_id.saturating_sub(1);
            let lo = doc.sentences[lo_sentence].start;
            let antecedent = (lo..tok.index).rev().find(|&j| {
                let w = &doc.tokens[j].text;
                is_content(w) && !is_pronoun(w) && (number == Number::Any || noun_number(w) == number)
            });
            let Some(a) = antecedent else { continue };
            let c = match cluster_of.get(&a) {
                Some(&c) => c,
                None => {
                    clusters.push(vec![a]);
                    cluster_of.insert(a, clusters.len() - 1);
                    clusters.len() - 1
                }
            };
            clusters[c].push(tok.index);
            cluster_of.insert(tok.index, c);
        }
        Ok(clusters
            .into_iter()
            .map(|c| c.into_iter().map(|i| Mention { start: i, end: i + 1 }).collect())
            .collect())
    }

    fn name(&self) -> &str {
        "rule-based"
    }
}

/// A provider that always fails; graph construction falls back to empty
/// matrices for the affected edge types.
#[derive(Clone, Debug, Default)]
pub struct NullProvider;

impl AnalysisProvider for NullProvider {
    fn dependency_heads(&self, _: &Document, _: usize) -> Result<Vec<Option<usize>>, ProviderError> {
        Err(ProviderError("no dependency parser configured".into()))
    }

    fn coreference(&self, _: &Document) -> Result<Clusters, ProviderError> {
        Err(ProviderError("no coreference resolver configured".into()))
    }

    fn name(&self) -> &str {
        "none"
    }
}

pub fn provider_by_name(name: &str) -> Option<Box<dyn AnalysisProvider>> {
    match name {
        "rule-based" => Some(Box::new(RuleBasedProvider)),
        "none" => Some(Box::new(NullProvider)),
        _ => None,
    }
}
