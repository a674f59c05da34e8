use std::ops::Range;

use log::warn;

use crate::analysis::{AnalysisProvider, Clusters};
use crate::cls_model::{build_graph, GraphInput, SpatialGraph};
use crate::corpus::Document;
use crate::cte::{enumerate_candidates, partition_roles, CandidateTriplet, TaggedElement};
use crate::vocab::WordPieceVocab;

/// Provider output for one document. `None` marks a failed analysis.
pub struct DocAnalysis {
    pub heads: Vec<Option<Vec<Option<usize>>>>,
    pub clusters: Option<Clusters>,
}

impl DocAnalysis {
    pub fn run(doc: &Document, provider: &dyn AnalysisProvider) -> Self {
        let heads = doc
            .sentences
            .iter()
            .map(|s| match provider.dependency_heads(doc, s.id) {
                Ok(h) if h.len() == s.len() => Some(h),
                Ok(h) => {
                    warn!(
                        "{}: parser returned {} heads for {} tokens",
                        doc.doc_id,
                        h.len(),
                        s.len()
                    );
                    None
                }
                Err(e) => {
                    warn!("{}: sentence {}: {e}; dependency edges left empty", doc.doc_id, s.id);
                    None
                }
            })
            .collect();
        let clusters = match provider.coreference(doc) {
            Ok(c) => Some(c),
            Err(e) => {
                warn!("{}: {e}; coreference edges left empty", doc.doc_id);
                None
            }
        };
        Self { heads, clusters }
    }
}

/// One encoding unit: a sentence, preceded by the sentences holding the
/// antecedents of its coreferent mentions.
#[derive(Clone, Debug)]
pub struct Window {
    pub doc_id: String,
    pub sentence_id: usize,
    /// Document index of `words[0]`.
    pub offset: usize,
    pub words: Vec<String>,
    /// Every element of the window, in document coordinates.
    pub elements: Vec<TaggedElement>,
    /// The same elements as window-local ranges.
    pub spans: Vec<(usize, usize)>,
    /// Candidates of the focus sentence, indexing `elements`.
    pub candidates: Vec<CandidateTriplet>,
    /// Coreference clusters restricted to the window, window-local.
    pub clusters: Vec<Vec<(usize, usize)>>,
    pub graph: SpatialGraph,
    /// `[CLS]` + pieces.
    pub mlm_ids: Vec<usize>,
    /// Piece range of every word in `mlm_ids`.
    pub mlm_words: Vec<Range<usize>>,
    /// Pieces + `[SEP]`.
    pub s2s_ids: Vec<usize>,
}

impl Window {
    pub fn word_refs(&self) -> Vec<&str> {
        self.words.iter().map(String::as_str).collect()
    }

    /// Window-local span of a document span, if it lies inside the window.
    pub fn local(&self, start: usize, end: usize) -> Option<(usize, usize)> {
        (start >= self.offset && end <= self.offset + self.words.len())
            .then(|| (start - self.offset, end - self.offset))
    }
}

pub fn encode_mlm(vocab: &WordPieceVocab, words: &[&str]) -> (Vec<usize>, Vec<Range<usize>>) {
    let (pieces, ranges) = vocab.encode_words(words);
    let mut ids = Vec::with_capacity(pieces.len() + 1);
    ids.push(vocab.cls());
    ids.extend(pieces);
    (ids, ranges.into_iter().map(|r| r.start + 1..r.end + 1).collect())
}

pub fn encode_s2s(vocab: &WordPieceVocab, words: &[&str]) -> Vec<usize> {
    let (mut ids, _) = vocab.encode_words(words);
    ids.push(vocab.sep());
    ids
}

pub fn build_window(
    doc: &Document,
    sentence_id: usize,
    elements_by_sentence: &[Vec<TaggedElement>],
    analysis: &DocAnalysis,
    mlm: &WordPieceVocab,
    s2s: &WordPieceVocab,
) -> Window {
    let sentence_of = |tok: usize| doc.tokens[tok].sentence_id;
    let mut lo = sentence_id;
    if let Some(clusters) = &analysis.clusters {
        for c in clusters {
            if c.iter().any(|m| sentence_of(m.start) == sentence_id) {
                for m in c {
                    let s = sentence_of(m.start);
                    if s < lo {
                        lo = s;
                    }
                }
            }
        }
    }
    let offset = doc.sentences[lo].start;
    let end = doc.sentences[sentence_id].end;
    let words: Vec<String> = doc.tokens[offset..end].iter().map(|t| t.text.clone()).collect();
    let token_sentence: Vec<usize> = doc.tokens[offset..end].iter().map(|t| t.sentence_id).collect();

    let elements: Vec<TaggedElement> = elements_by_sentence[lo..=sentence_id]
        .iter()
        .flatten()
        .cloned()
        .collect();
    let spans: Vec<(usize, usize)> = elements.iter().map(|e| (e.start - offset, e.end - offset)).collect();

    let focus: Vec<usize> = (0..elements.len())
        .filter(|&i| elements[i].sentence_id == sentence_id)
        .collect();
    let roles: Vec<_> = focus.iter().map(|&i| elements[i].role).collect();
    let candidates = enumerate_candidates(&partition_roles(&roles), sentence_id)
        .into_iter()
        .map(|c| CandidateTriplet {
            tm: focus[c.tm],
            tr: focus[c.tr],
            lg: focus[c.lg],
            sentence_id,
        })
        .collect();

    let heads = (lo..=sentence_id)
        .map(|s| analysis.heads[s].clone())
        .collect::<Option<Vec<_>>>()
        .map(|per_sentence| {
            per_sentence
                .into_iter()
                .flatten()
                .map(|h| h.and_then(|h| (h >= offset && h < end).then(|| h - offset)))
                .collect()
        });
    let clusters: Option<Vec<Vec<(usize, usize)>>> = analysis.clusters.as_ref().map(|cs| {
        cs.iter()
            .map(|c| {
                c.iter()
                    .filter(|m| m.start >= offset && m.end <= end)
                    .map(|m| (m.start - offset, m.end - offset))
                    .collect::<Vec<_>>()
            })
            .filter(|c| c.len() > 1)
            .collect()
    });
    let graph = build_graph(&GraphInput {
        token_sentence,
        elements: spans.clone(),
        heads,
        clusters: clusters.clone(),
    });

    let refs: Vec<&str> = words.iter().map(String::as_str).collect();
    let (mlm_ids, mlm_words) = encode_mlm(mlm, &refs);
    let s2s_ids = encode_s2s(s2s, &refs);
    Window {
        doc_id: doc.doc_id.clone(),
        sentence_id,
        offset,
        words,
        elements,
        spans,
        candidates,
        clusters: clusters.unwrap_or_default(),
        graph,
        mlm_ids,
        mlm_words,
        s2s_ids,
    }
}
