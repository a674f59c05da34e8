use serde::{Deserialize, Serialize};

use crate::corpus::LinkType;

pub const DELIMITER: &str = "<pad>";
pub const BLOCK_SEPARATOR: &str = " ; ";
pub const NULL_SLOT: &str = "null";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum ParseError {
    #[error("expected at least 8 delimiters, found {0}")]
    MissingDelimiters(usize),
    #[error("unknown relation name {0:?}")]
    UnknownRelation(String),
    #[error("slot {0} is empty")]
    EmptySlot(usize),
    #[error("all three slots are null")]
    AllNull,
    #[error("slot text {0:?} does not occur in the source sentence")]
    Ungrounded(String),
}

/// One link rendered as a natural-language target.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSentence {
    pub pronoun: Option<String>,
    pub noun: Option<String>,
    pub relation: LinkType,
    pub tm: Option<String>,
    pub tr: Option<String>,
    pub lg: Option<String>,
}

pub fn relation_name(t: LinkType) -> &'static str {
    match t {
        LinkType::Qslink => "qslink",
        LinkType::Olink => "olink",
        LinkType::Movelink => "movelink",
        LinkType::Null => "null",
    }
}

fn relation_from_name(name: &str) -> Option<LinkType> {
    LinkType::RELATIONS
        .into_iter()
        .find(|&t| relation_name(t).eq_ignore_ascii_case(name))
}

/// Build the target for a gold link. `coref` is a `(pronoun, noun)` pair;
/// the referential prefix is only rendered when it is present.
pub fn build_target_sentence(
    relation: LinkType,
    slots: [Option<&str>; 3],
    coref: Option<(&str, &str)>,
) -> TargetSentence {
    assert_ne!(relation, LinkType::Null, "NULL links have no target sentence");
    let own = |s: Option<&str>| s.map(str::to_string);
    TargetSentence {
        pronoun: coref.map(|c| c.0.to_string()),
        noun: coref.map(|c| c.1.to_string()),
        relation,
        tm: own(slots[0]),
        tr: own(slots[1]),
        lg: own(slots[2]),
    }
}

impl TargetSentence {
    pub fn slots(&self) -> [Option<&str>; 3] {
        [self.tm.as_deref(), self.tr.as_deref(), self.lg.as_deref()]
    }

    pub fn render(&self) -> String {
        let slot = |s: &Option<String>| s.clone().unwrap_or_else(|| NULL_SLOT.to_string());
        let mut out = String::new();
        if let (Some(p), Some(n)) = (&self.pronoun, &self.noun) {
            out.push_str(&format!("The token ``{p}'' stands for ``{n}'', and "));
        }
        out.push_str(&format!(
            "<pad> {} <pad> can be describe as following : the first element is <pad> {} <pad>, \
             the trigger is <pad> {} <pad>, and the second element is <pad> {} <pad>.",
            relation_name(self.relation),
            slot(&self.tm),
            slot(&self.tr),
            slot(&self.lg),
        ));
        out
    }
}

/// Render several targets as one decoder target.
pub fn render_blocks(targets: &[TargetSentence]) -> String {
    targets
        .iter()
        .map(TargetSentence::render)
        .collect::<Vec<_>>()
        .join(BLOCK_SEPARATOR)
}

fn parse_prefix(prefix: &str) -> Option<(String, String)> {
    let rest = prefix.strip_prefix("The token ``")?;
    let rest = rest.strip_suffix("'', and ")?;
    let (p, n) = rest.split_once("'' stands for ``")?;
    Some((p.to_string(), n.to_string()))
}

/// Read a target back from text. Only the last eight delimiters matter, so
/// a damaged prefix still yields the relation.
pub fn parse_target_sentence(text: &str) -> Result<TargetSentence, ParseError> {
    let positions: Vec<usize> = text.match_indices(DELIMITER).map(|(i, _)| i).collect();
    if positions.len() < 8 {
        return Err(ParseError::MissingDelimiters(positions.len()));
    }
    let p = &positions[positions.len() - 8..];
    let between = |k: usize| text[p[k] + DELIMITER.len()..p[k + 1]].trim();
    let rel = between(0);
    let relation = relation_from_name(rel).ok_or_else(|| ParseError::UnknownRelation(rel.to_string()))?;
    let mut slots: [Option<String>; 3] = Default::default();
    for (i, out) in slots.iter_mut().enumerate() {
        let s = between(2 + 2 * i);
        if s.is_empty() {
            return Err(ParseError::EmptySlot(i));
        }
        if !s.eq_ignore_ascii_case(NULL_SLOT) {
            *out = Some(s.to_string());
        }
    }
    if slots.iter().all(Option::is_none) {
        return Err(ParseError::AllNull);
    }
    let (pronoun, noun) = match parse_prefix(&text[..p[0]]) {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    let [tm, tr, lg] = slots;
    Ok(TargetSentence {
        pronoun,
        noun,
        relation,
        tm,
        tr,
        lg,
    })
}

/// Split decoded text into blocks and parse each one.
pub fn parse_blocks(text: &str) -> Vec<Result<TargetSentence, ParseError>> {
    text.split(BLOCK_SEPARATOR)
        .map(str::trim)
        .filter(|b| !b.is_empty())
        .map(parse_target_sentence)
        .collect()
}

/// Token ranges of `words` whose space-joined text equals `text`.
fn occurrences(words: &[&str], text: &str) -> Vec<(usize, usize)> {
    let k = text.split(' ').count();
    if k == 0 || k > words.len() {
        return Vec::new();
    }
    (0..=words.len() - k)
        .filter(|&i| words[i..i + k].join(" ") == text)
        .map(|i| (i, i + k))
        .collect()
}

/// Map slot strings back to token spans of the source. Element spans with
/// the same surface text are preferred over bare token spans. When a
/// string occurs more than once, the occurrence closest to the slots that
/// are already fixed wins (earliest if nothing is fixed yet).
pub fn ground_slots(
    target: &TargetSentence,
    words: &[&str],
    elements: &[(usize, usize)],
) -> Result<[Option<(usize, usize)>; 3], ParseError> {
    let mut options: Vec<Option<Vec<(usize, usize)>>> = Vec::with_capacity(3);
    for slot in target.slots() {
        let Some(text) = slot else {
            options.push(None);
            continue;
        };
        let on_elements: Vec<(usize, usize)> = elements
            .iter()
            .copied()
            .filter(|&(s, e)| e <= words.len() && words[s..e].join(" ") == text)
            .collect();
        let found = if on_elements.is_empty() {
            occurrences(words, text)
        } else {
            on_elements
        };
        if found.is_empty() {
            return Err(ParseError::Ungrounded(text.to_string()));
        }
        options.push(Some(found));
    }

    let mut chosen: [Option<(usize, usize)>; 3] = [None; 3];
    for (i, o) in options.iter().enumerate() {
        if let Some(o) = o {
            if o.len() == 1 {
                chosen[i] = Some(o[0]);
            }
        }
    }
    for (i, o) in options.iter().enumerate() {
        let Some(o) = o else { continue };
        if chosen[i].is_some() {
            continue;
        }
        let fixed: Vec<usize> = chosen.iter().flatten().map(|s| s.0).collect();
        let best = o
            .iter()
            .copied()
            .min_by_key(|&(s, _)| (fixed.iter().map(|&f| s.abs_diff(f)).sum::<usize>(), s))
            .expect("non-empty");
        chosen[i] = Some(best);
    }
    Ok(chosen)
}
