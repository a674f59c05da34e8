//! Reflexivity: swap the two participants of a candidate, replace the
//! trigger with an antonym, and penalise the distance between the
//! sentence embeddings before and after.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spatex_nn::{Tape, Var};

const BUILTIN_LEXICON: &str = include_str!("../../../../data/antonyms.tsv");

#[derive(Debug, thiserror::Error)]
pub enum RfxError {
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("cannot read lexicon: {0}")]
    Io(#[from] std::io::Error),
    #[error("pooled sentence embedding has zero norm")]
    ZeroNorm,
}

/// Lower-cased trigger to antonyms, read from tab-separated lines
/// `trigger<TAB>antonym[<TAB>antonym...]`. Blank lines and lines starting
/// with `#` are ignored.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AntonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl AntonymLexicon {
    pub fn parse(text: &str) -> Result<Self, RfxError> {
        let mut entries: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t').map(str::trim);
            let trigger = fields.next().unwrap_or_default().to_lowercase();
            let antonyms: Vec<String> = fields.filter(|f| !f.is_empty()).map(str::to_string).collect();
            if trigger.is_empty() || antonyms.is_empty() {
                return Err(RfxError::Lexicon {
                    line: i + 1,
                    message: "expected a trigger and at least one antonym".into(),
                });
            }
            let slot = entries.entry(trigger).or_default();
            for a in antonyms {
                if !slot.contains(&a) {
                    slot.push(a);
                }
            }
        }
        Ok(Self { entries })
    }

    /// The seed list shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_LEXICON).expect("builtin lexicon is well formed")
    }

    pub fn load(path: &Path) -> Result<Self, RfxError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Antonyms of `trigger`; empty when unknown.
    pub fn lookup(&self, trigger: &str) -> &[String] {
        self.entries
            .get(&trigger.to_lowercase())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NotInvertible {
    NoAntonym(String),
    Overlap,
}

/// The inverted sentence and where its parts came from. Spans are token
/// ranges in the inverted sentence: `tm` now holds the former landmark,
/// `lg` the former trajector, `tr` the antonym.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvertedSentence {
    pub tokens: Vec<String>,
    pub tm: (usize, usize),
    pub tr: (usize, usize),
    pub lg: (usize, usize),
    pub antonym: String,
}

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

fn with_first_char(word: &str, upper: bool) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) if upper => c.to_uppercase().chain(chars).collect(),
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn is_acronym(word: &str) -> bool {
    word == "I" || (word.chars().count() > 1 && word.chars().all(|c| !c.is_lowercase()))
}

/// Swap the `tm` and `lg` spans in place and replace `tr` by an antonym
/// drawn uniformly with `seed`. When a participant leaves the first
/// position of the sentence, capitalisation moves with the position.
pub fn invert_sentence(
    words: &[&str],
    tm: (usize, usize),
    tr: (usize, usize),
    lg: (usize, usize),
    lexicon: &AntonymLexicon,
    seed: u64,
) -> Result<InvertedSentence, NotInvertible> {
    let spans = [tm, tr, lg];
    if spans.iter().any(|s| s.0 >= s.1 || s.1 > words.len()) || overlaps(tm, tr) || overlaps(tm, lg) || overlaps(tr, lg)
    {
        return Err(NotInvertible::Overlap);
    }
    let trigger = words[tr.0..tr.1].join(" ");
    let options = lexicon.lookup(&trigger);
    if options.is_empty() {
        return Err(NotInvertible::NoAntonym(trigger));
    }
    let antonym = options[ChaCha8Rng::seed_from_u64(seed).gen_range(0..options.len())].clone();
    let antonym_words: Vec<String> = antonym.split_whitespace().map(str::to_string).collect();

    let mut order = [(tm, 0usize), (tr, 1), (lg, 2)];
    order.sort_by_key(|(s, _)| s.0);
    let mut out: Vec<String> = Vec::with_capacity(words.len() + antonym_words.len());
    let mut new_spans = [(0, 0); 3];
    let mut cursor = 0;
    for (span, role) in order {
        out.extend(words[cursor..span.0].iter().map(|w| w.to_string()));
        let start = out.len();
        match role {
            0 => out.extend(words[lg.0..lg.1].iter().map(|w| w.to_string())),
            1 => out.extend(antonym_words.iter().cloned()),
            _ => out.extend(words[tm.0..tm.1].iter().map(|w| w.to_string())),
        }
        new_spans[role] = (start, out.len());
        cursor = span.1;
    }
    out.extend(words[cursor..].iter().map(|w| w.to_string()));

    let moved_first = [tm, lg].into_iter().find(|s| s.0 == 0);
    if let Some(from) = moved_first {
        let first_upper = words[0].chars().next().is_some_and(char::is_uppercase);
        if first_upper {
            // the old first word now sits at the start of the other participant's slot
            let landed = if from == tm { new_spans[2].0 } else { new_spans[0].0 };
            if !is_acronym(words[0]) {
                out[landed] = with_first_char(&out[landed], false);
            }
            out[0] = with_first_char(&out[0], true);
        }
    }

    Ok(InvertedSentence {
        tokens: out,
        tm: new_spans[0],
        tr: new_spans[1],
        lg: new_spans[2],
        antonym,
    })
}

/// `1 - cos(mean(H_CT), mean(H_IVT))` with means over the token axis.
pub fn rfx_loss(t: &mut Tape, h_ct: Var, h_ivt: Var) -> Result<Var, RfxError> {
    let a = t.mean_cols(h_ct);
    let b = t.mean_cols(h_ivt);
    let norm = |m: &spatex_nn::Matrix| m.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm(t.value(a)) < 1e-12 || norm(t.value(b)) < 1e-12 {
        return Err(RfxError::ZeroNorm);
    }
    let ab = t.mul(a, b);
    let dot = t.sum_all(ab);
    let aa = t.mul(a, a);
    let na = t.sum_all(aa);
    let na = t.sqrt(na);
    let bb = t.mul(b, b);
    let nb = t.sum_all(bb);
    let nb = t.sqrt(nb);
    let denom = t.mul(na, nb);
    let cos = t.div(dot, denom);
    let neg = t.neg(cos);
    Ok(t.add_scalar(neg, 1.0))
}

/// Mean of the per-candidate losses; zero when nothing was invertible.
pub fn batch_rfx(t: &mut Tape, losses: &[Var]) -> Var {
    if losses.is_empty() {
        return t.scalar_constant(0.0);
    }
    let stacked = t.concat_rows(losses);
    t.mean_all(stacked)
}
