//! Document model for ISO-Space style annotated text.
//!
//! Documents are ingested from SpaceEval-style standoff XML, re-tokenized on
//! whitespace and punctuation, and stored canonically as JSON lines.

mod io;
mod tokenize;
mod xml;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use io::{count_links, load_xml_dir, read_jsonl, split_dataset, write_jsonl, xml_files, LinkHistogram};
pub use tokenize::{split_sentences, tokenize};
pub use xml::{parse_document, to_xml};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("malformed XML at byte {offset}: {message}")]
    Xml { offset: u64, message: String },
    #[error("link {link_id} references unknown element {element_id}")]
    DanglingReference { link_id: String, element_id: String },
    #[error("invalid document {doc_id}: {message}")]
    Invalid { doc_id: String, message: String },
    #[error("need at least 2 documents to split, got {0}")]
    TooFewDocuments(usize),
    #[error("split ratio {0} outside (0, 1)")]
    BadRatio(f64),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: {source}")]
    InFile {
        path: String,
        #[source]
        source: Box<CorpusError>,
    },
    #[error("json error on line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub index: usize,
    /// Character (not byte) offsets into the document text.
    pub char_start: usize,
    pub char_end: usize,
    pub sentence_id: usize,
}

/// Half-open token range `start..end` of one sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: usize,
    pub start: usize,
    pub end: usize,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, token: usize) -> bool {
        (self.start..self.end).contains(&token)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ElementKind {
    SpatialEntity,
    Place,
    Path,
    Motion,
    SpatialSignal,
    MotionSignal,
    Measure,
    NonmotionEvent,
}

impl ElementKind {
    pub const ALL: [ElementKind; 8] = [
        ElementKind::SpatialEntity,
        ElementKind::Place,
        ElementKind::Path,
        ElementKind::Motion,
        ElementKind::SpatialSignal,
        ElementKind::MotionSignal,
        ElementKind::Measure,
        ElementKind::NonmotionEvent,
    ];

    /// XML tag name.
    pub fn tag(self) -> &'static str {
        match self {
            ElementKind::SpatialEntity => "SPATIAL_ENTITY",
            ElementKind::Place => "PLACE",
            ElementKind::Path => "PATH",
            ElementKind::Motion => "MOTION",
            ElementKind::SpatialSignal => "SPATIAL_SIGNAL",
            ElementKind::MotionSignal => "MOTION_SIGNAL",
            ElementKind::Measure => "MEASURE",
            ElementKind::NonmotionEvent => "NONMOTION_EVENT",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SpatialRole {
    Trajector,
    Mover,
    Landmark,
    Goal,
    Trigger,
    None,
}

impl SpatialRole {
    /// Roles that can be tagged (everything but `None`).
    pub const TAGGED: [SpatialRole; 5] = [
        SpatialRole::Trajector,
        SpatialRole::Mover,
        SpatialRole::Landmark,
        SpatialRole::Goal,
        SpatialRole::Trigger,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SpatialRole::Trajector => "TRAJECTOR",
            SpatialRole::Mover => "MOVER",
            SpatialRole::Landmark => "LANDMARK",
            SpatialRole::Goal => "GOAL",
            SpatialRole::Trigger => "TRIGGER",
            SpatialRole::None => "NONE",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LinkType {
    Qslink,
    Olink,
    Movelink,
    Null,
}

impl LinkType {
    /// Classifier label order.
    pub const CLASSES: [LinkType; 4] = [LinkType::Qslink, LinkType::Olink, LinkType::Movelink, LinkType::Null];
    pub const RELATIONS: [LinkType; 3] = [LinkType::Qslink, LinkType::Olink, LinkType::Movelink];

    pub fn class_index(self) -> usize {
        self as usize
    }

    pub fn from_class_index(i: usize) -> Self {
        Self::CLASSES[i]
    }

    pub fn tag(self) -> &'static str {
        match self {
            LinkType::Qslink => "QSLINK",
            LinkType::Olink => "OLINK",
            LinkType::Movelink => "MOVELINK",
            LinkType::Null => "NULL",
        }
    }

    /// Role carried by each of the (tm, tr, lg) slots.
    pub fn slot_roles(self) -> [SpatialRole; 3] {
        match self {
            LinkType::Movelink => [SpatialRole::Mover, SpatialRole::Trigger, SpatialRole::Goal],
            _ => [SpatialRole::Trajector, SpatialRole::Trigger, SpatialRole::Landmark],
        }
    }
}

impl fmt::Display for LinkType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialElement {
    pub id: String,
    pub kind: ElementKind,
    /// Half-open token range.
    pub start: usize,
    pub end: usize,
    /// Covered tokens joined by single spaces.
    pub text: String,
}

/// A relation over three optional slots. For MOVELINK the slots hold
/// (mover, trigger, goal); otherwise (trajector, trigger, landmark).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialLink {
    pub id: String,
    pub link_type: LinkType,
    pub tm: Option<String>,
    pub tr: Option<String>,
    pub lg: Option<String>,
}

impl SpatialLink {
    pub fn slots(&self) -> [Option<&str>; 3] {
        [self.tm.as_deref(), self.tr.as_deref(), self.lg.as_deref()]
    }

    pub fn is_null_role(&self) -> bool {
        self.slots().iter().any(Option::is_none)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub tokens: Vec<Token>,
    pub sentences: Vec<Sentence>,
    pub elements: Vec<SpatialElement>,
    pub links: Vec<SpatialLink>,
}

/// Character span `[start, end)` in document text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

/// Document-level identity of a link: its type and the character spans of
/// its three slots. Two links are the same prediction iff these are equal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CanonicalLink {
    pub doc_id: String,
    pub link_type: LinkType,
    pub tm: Option<CharSpan>,
    pub tr: Option<CharSpan>,
    pub lg: Option<CharSpan>,
}

impl CanonicalLink {
    pub fn slots(&self) -> [Option<CharSpan>; 3] {
        [self.tm, self.tr, self.lg]
    }

    pub fn is_null_role(&self) -> bool {
        self.slots().iter().any(Option::is_none)
    }
}

/// Join token texts with single spaces.
pub fn join_tokens(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
}

impl Document {
    pub fn empty(doc_id: &str) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            text: String::new(),
            tokens: Vec::new(),
            sentences: Vec::new(),
            elements: Vec::new(),
            links: Vec::new(),
        }
    }

    pub fn element(&self, id: &str) -> Option<&SpatialElement> {
        self.elements.iter().find(|e| e.id == id)
    }

    pub fn element_index(&self) -> HashMap<&str, usize> {
        self.elements
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.as_str(), i))
            .collect()
    }

    pub fn sentence_tokens(&self, sentence: &Sentence) -> &[Token] {
        &self.tokens[sentence.start..sentence.end]
    }

    pub fn sentence_of_token(&self, token: usize) -> usize {
        self.tokens[token].sentence_id
    }

    pub fn element_sentence(&self, element: &SpatialElement) -> usize {
        self.tokens[element.start].sentence_id
    }

    /// Character span covered by a token range.
    pub fn span_chars(&self, start: usize, end: usize) -> CharSpan {
        CharSpan {
            start: self.tokens[start].char_start,
            end: self.tokens[end - 1].char_end,
        }
    }

    pub fn element_chars(&self, element: &SpatialElement) -> CharSpan {
        self.span_chars(element.start, element.end)
    }

    pub fn canonical(&self, link: &SpatialLink) -> CanonicalLink {
        let span = |id: Option<&String>| id.and_then(|id| self.element(id)).map(|e| self.element_chars(e));
        CanonicalLink {
            doc_id: self.doc_id.clone(),
            link_type: link.link_type,
            tm: span(link.tm.as_ref()),
            tr: span(link.tr.as_ref()),
            lg: span(link.lg.as_ref()),
        }
    }

    pub fn canonical_links(&self) -> Vec<CanonicalLink> {
        self.links.iter().map(|l| self.canonical(l)).collect()
    }

    /// Role of every element as implied by the gold links. Links are visited
    /// in document order and the first role assigned to an element wins.
    pub fn gold_roles(&self) -> Vec<SpatialRole> {
        let index = self.element_index();
        let mut roles = vec![SpatialRole::None; self.elements.len()];
        for link in &self.links {
            for (slot, role) in link.slots().into_iter().zip(link.link_type.slot_roles()) {
                if let Some(&i) = slot.and_then(|id| index.get(id)) {
                    if roles[i] == SpatialRole::None {
                        roles[i] = role;
                    }
                }
            }
        }
        roles
    }

    /// Check every structural invariant of the document model.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |message: String| CorpusError::Invalid {
            doc_id: self.doc_id.clone(),
            message,
        };
        for (i, t) in self.tokens.iter().enumerate() {
            if t.index != i {
                return Err(invalid(format!("token {i} has index {}", t.index)));
            }
            if t.char_start >= t.char_end {
                return Err(invalid(format!("token {i} has an empty character span")));
            }
            if i > 0 && self.tokens[i - 1].char_end > t.char_start {
                return Err(invalid(format!("token {i} overlaps its predecessor")));
            }
        }
        let mut expected = 0;
        for (i, s) in self.sentences.iter().enumerate() {
            if s.id != i || s.start != expected || s.end <= s.start || s.end > self.tokens.len() {
                return Err(invalid(format!("sentence {i} does not tile the token sequence")));
            }
            if self.tokens[s.start..s.end].iter().any(|t| t.sentence_id != i) {
                return Err(invalid(format!("sentence {i} has mislabelled tokens")));
            }
            expected = s.end;
        }
        if expected != self.tokens.len() {
            return Err(invalid("sentences do not cover all tokens".into()));
        }
        let mut ids = HashSet::new();
        for e in &self.elements {
            if !ids.insert(e.id.as_str()) {
                return Err(invalid(format!("duplicate element id {}", e.id)));
            }
            if e.start >= e.end || e.end > self.tokens.len() {
                return Err(invalid(format!("element {} has an invalid span", e.id)));
            }
            if self.tokens[e.start].sentence_id != self.tokens[e.end - 1].sentence_id {
                return Err(invalid(format!("element {} crosses a sentence boundary", e.id)));
            }
            if e.text != join_tokens(&self.tokens[e.start..e.end]) {
                return Err(invalid(format!("element {} text does not match its tokens", e.id)));
            }
        }
        for link in &self.links {
            if link.link_type == LinkType::Null {
                return Err(invalid(format!("gold link {} has type NULL", link.id)));
            }
            if link.slots().iter().all(Option::is_none) {
                return Err(invalid(format!("link {} has no filled slot", link.id)));
            }
            for id in link.slots().into_iter().flatten() {
                if !ids.contains(id) {
                    return Err(CorpusError::DanglingReference {
                        link_id: link.id.clone(),
                        element_id: id.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Number of gold links per type.
    pub fn link_counts(&self) -> BTreeMap<LinkType, usize> {
        let mut m = BTreeMap::new();
        for l in &self.links {
            *m.entry(l.link_type).or_insert(0) += 1;
        }
        m
    }
}
