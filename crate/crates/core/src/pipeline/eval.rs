use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{CanonicalLink, Document, LinkType};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("prediction refers to document {0:?}, which has no gold annotation")]
    UnknownDocument(String),
}

/// Counts and percentages for one slice of the evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub spurious: usize,
    pub missed: usize,
}

impl Prf {
    /// Percentages from raw counts. Precision is 0 without predictions.
    pub fn from_counts(matched: usize, predicted: usize, gold: usize) -> Self {
        let p = if predicted == 0 {
            0.0
        } else {
            matched as f64 / predicted as f64
        };
        let r = if gold == 0 { 0.0 } else { matched as f64 / gold as f64 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        Self {
            precision: 100.0 * p,
            recall: 100.0 * r,
            f1: 100.0 * f,
            matched,
            spurious: predicted - matched,
            missed: gold - matched,
        }
    }
}

/// Which links take part in an evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subset {
    All,
    NullRole,
    Type(LinkType),
}

impl Subset {
    pub fn admits(self, link: &CanonicalLink) -> bool {
        match self {
            Subset::All => true,
            Subset::NullRole => link.is_null_role(),
            Subset::Type(t) => link.link_type == t,
        }
    }

    pub fn name(self) -> String {
        match self {
            Subset::All => "all".into(),
            Subset::NullRole => "null-role".into(),
            Subset::Type(t) => t.tag().to_lowercase(),
        }
    }
}

impl FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_lowercase().as_str() {
            "all" => Ok(Subset::All),
            "null-role" | "null_role" => Ok(Subset::NullRole),
            "qslink" => Ok(Subset::Type(LinkType::Qslink)),
            "olink" => Ok(Subset::Type(LinkType::Olink)),
            "movelink" => Ok(Subset::Type(LinkType::Movelink)),
            other => Err(format!("unknown subset {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subset: String,
    pub overall: Prf,
    pub by_type: BTreeMap<LinkType, Prf>,
    /// Null-role predictions scored against null-role gold only.
    pub null_role: Prf,
}

/// Matched count under multiset semantics: a gold link can be matched at
/// most as often as it occurs.
fn matched<'a>(
    pred: impl Iterator<Item = &'a CanonicalLink>,
    gold: impl Iterator<Item = &'a CanonicalLink>,
) -> (usize, usize, usize) {
    let mut counts: HashMap<&CanonicalLink, usize> = HashMap::new();
    let mut n_gold = 0;
    for g in gold {
        *counts.entry(g).or_insert(0) += 1;
        n_gold += 1;
    }
    let mut n_pred = 0;
    let mut tp = 0;
    for p in pred {
        n_pred += 1;
        if let Some(c) = counts.get_mut(p) {
            if *c > 0 {
                *c -= 1;
                tp += 1;
            }
        }
    }
    (tp, n_pred, n_gold)
}

fn score(pred: &[CanonicalLink], gold: &[CanonicalLink], keep: impl Fn(&CanonicalLink) -> bool) -> Prf {
    let (tp, np, ng) = matched(pred.iter().filter(|l| keep(l)), gold.iter().filter(|l| keep(l)));
    Prf::from_counts(tp, np, ng)
}

/// Micro-averaged scores. A prediction is correct iff its type and all
/// three slot spans equal a gold link's (null only equals null).
pub fn evaluate_links(pred: &[CanonicalLink], gold: &[CanonicalLink], subset: Subset) -> EvalReport {
    let pred: Vec<CanonicalLink> = pred.iter().filter(|l| subset.admits(l)).cloned().collect();
    let gold: Vec<CanonicalLink> = gold.iter().filter(|l| subset.admits(l)).cloned().collect();
    let by_type = LinkType::RELATIONS
        .into_iter()
        .map(|t| (t, score(&pred, &gold, |l| l.link_type == t)))
        .collect();
    EvalReport {
        subset: subset.name(),
        overall: score(&pred, &gold, |_| true),
        by_type,
        null_role: score(&pred, &gold, CanonicalLink::is_null_role),
    }
}

/// [`evaluate_links`] against the gold links of `docs`, checking that every
/// prediction belongs to one of them.
pub fn evaluate(pred: &[CanonicalLink], docs: &[Document], subset: Subset) -> Result<EvalReport, EvalError> {
    let ids: HashSet<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
    if let Some(p) = pred.iter().find(|p| !ids.contains(p.doc_id.as_str())) {
        return Err(EvalError::UnknownDocument(p.doc_id.clone()));
    }
    let gold: Vec<CanonicalLink> = docs.iter().flat_map(Document::canonical_links).collect();
    Ok(evaluate_links(pred, &gold, subset))
}

impl EvalReport {
    /// Aligned plain-text table, one row per link type plus the overall and
    /// null-role rows.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>7} {:>7} {:>7} {:>8} {:>9} {:>7}",
            "type", "P", "R", "F1", "matched", "spurious", "missed"
        );
        let mut row = |name: &str, p: &Prf| {
            let _ = writeln!(
                out,
                "{:<10} {:>7.1} {:>7.1} {:>7.1} {:>8} {:>9} {:>7}",
                name, p.precision, p.recall, p.f1, p.matched, p.spurious, p.missed
            );
        };
        for (t, p) in &self.by_type {
            row(t.tag(), p);
        }
        row("overall", &self.overall);
        row("null-role", &self.null_role);
        out
    }
}
