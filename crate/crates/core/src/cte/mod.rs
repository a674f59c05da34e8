//! Candidate triplet extraction: element and role tagging, role partition,
//! and enumeration of null-free (tm, tr, lg) candidates.

mod bio;
mod tagger;

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, ElementKind, LinkType, SpatialRole};

pub use bio::{TagScheme, OUTSIDE};
pub use tagger::{gold_tags, is_well_formed, RoleTagSequence, Tagger, TaggerConfig, TaggerError};

/// An element located by token span, with the role it plays in its sentence.
/// `id` is the gold element id when the element comes from annotation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedElement {
    pub id: Option<String>,
    pub start: usize,
    pub end: usize,
    pub kind: ElementKind,
    pub role: SpatialRole,
    pub sentence_id: usize,
}

impl TaggedElement {
    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    /// Last token, used to read the role tag.
    pub fn head(&self) -> usize {
        self.end - 1
    }
}

/// Gold elements of one sentence with roles implied by the gold links.
pub fn gold_elements(doc: &Document, sentence_id: usize) -> Vec<TaggedElement> {
    let roles = doc.gold_roles();
    let mut out: Vec<TaggedElement> = doc
        .elements
        .iter()
        .zip(roles)
        .filter(|(e, _)| doc.element_sentence(e) == sentence_id)
        .map(|(e, role)| TaggedElement {
            id: Some(e.id.clone()),
            start: e.start,
            end: e.end,
            kind: e.kind,
            role,
            sentence_id,
        })
        .collect();
    out.sort_by_key(|e| (e.start, e.end));
    out
}

/// Indices into an element list, split by role.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RolePartition {
    pub tm: Vec<usize>,
    pub tr: Vec<usize>,
    pub lg: Vec<usize>,
}

pub fn partition_roles(roles: &[SpatialRole]) -> RolePartition {
    let mut p = RolePartition::default();
    for (i, role) in roles.iter().enumerate() {
        match role {
            SpatialRole::Trajector | SpatialRole::Mover => p.tm.push(i),
            SpatialRole::Landmark | SpatialRole::Goal => p.lg.push(i),
            SpatialRole::Trigger => p.tr.push(i),
            SpatialRole::None => {}
        }
    }
    p
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidateTriplet {
    pub tm: usize,
    pub tr: usize,
    pub lg: usize,
    pub sentence_id: usize,
}

impl CandidateTriplet {
    pub fn slots(&self) -> [usize; 3] {
        [self.tm, self.tr, self.lg]
    }
}

/// `TM x TR x LG`, TM-major.
pub fn enumerate_candidates(p: &RolePartition, sentence_id: usize) -> Vec<CandidateTriplet> {
    let mut out = Vec::with_capacity(p.tm.len() * p.tr.len() * p.lg.len());
    for &tm in &p.tm {
        for &tr in &p.tr {
            for &lg in &p.lg {
                out.push(CandidateTriplet {
                    tm,
                    tr,
                    lg,
                    sentence_id,
                });
            }
        }
    }
    out
}

/// A gold link resolved to token spans.
pub type SpanLink = (LinkType, [Option<(usize, usize)>; 3]);

pub fn gold_span_links(doc: &Document) -> Vec<SpanLink> {
    doc.links
        .iter()
        .map(|l| {
            let span = |id: Option<&str>| id.and_then(|id| doc.element(id)).map(|e| (e.start, e.end));
            let [a, b, c] = l.slots();
            (l.link_type, [span(a), span(b), span(c)])
        })
        .collect()
}

/// A candidate takes the type of the first gold link whose three slots
/// equal its spans; otherwise NULL.
pub fn label_candidates(
    candidates: &[CandidateTriplet],
    elements: &[TaggedElement],
    gold: &[SpanLink],
) -> Vec<LinkType> {
    candidates
        .iter()
        .map(|c| {
            let spans = c.slots().map(|i| Some(elements[i].span()));
            let mut matches = gold.iter().filter(|(_, g)| *g == spans);
            let label = matches.next().map_or(LinkType::Null, |(t, _)| *t);
            if matches.next().is_some() {
                warn!("candidate {spans:?} matches more than one gold link; keeping the first");
            }
            label
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub doc_id: String,
    pub sentence_id: usize,
    pub tm_span: (usize, usize),
    pub tr_span: (usize, usize),
    pub lg_span: (usize, usize),
    pub label: LinkType,
}

pub fn candidate_records(
    doc_id: &str,
    candidates: &[CandidateTriplet],
    elements: &[TaggedElement],
    labels: &[LinkType],
) -> Vec<CandidateRecord> {
    candidates
        .iter()
        .zip(labels)
        .map(|(c, &label)| CandidateRecord {
            doc_id: doc_id.to_string(),
            sentence_id: c.sentence_id,
            tm_span: elements[c.tm].span(),
            tr_span: elements[c.tr].span(),
            lg_span: elements[c.lg].span(),
            label,
        })
        .collect()
}

pub fn write_candidates<W: Write>(records: &[CandidateRecord], mut w: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Gold-element candidates of every sentence of a document, labelled.
pub fn document_candidates(doc: &Document) -> Vec<CandidateRecord> {
    let gold = gold_span_links(doc);
    let mut out = Vec::new();
    for s in &doc.sentences {
        let elements = gold_elements(doc, s.id);
        let roles: Vec<SpatialRole> = elements.iter().map(|e| e.role).collect();
        let cands = enumerate_candidates(&partition_roles(&roles), s.id);
        let labels = label_candidates(&cands, &elements, &gold);
        out.extend(candidate_records(&doc.doc_id, &cands, &elements, &labels));
    }
    out
}
