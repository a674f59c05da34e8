//! Subword vocabularies for the two encoder streams and the reversible piece
//! codec used for decoder targets.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Greedy longest-match word-piece vocabulary. Every character seen at
/// build time is kept both as a word-initial piece and as a `##`
/// continuation, so any word made of known characters can be encoded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordPieceVocab {
    pub lowercase: bool,
    pieces: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl WordPieceVocab {
    pub fn build<'a>(
        words: impl IntoIterator<Item = &'a str>,
        min_freq: usize,
        max_size: usize,
        lowercase: bool,
    ) -> Self {
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        for w in words {
            let w = if lowercase { w.to_lowercase() } else { w.to_string() };
            *freq.entry(w).or_insert(0) += 1;
        }
        let mut pieces: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
        let mut chars: Vec<char> = freq.keys().flat_map(|w| w.chars()).collect();
        chars.sort_unstable();
        chars.dedup();
        for c in &chars {
            pieces.push(c.to_string());
            pieces.push(format!("##{c}"));
        }
        let mut whole: Vec<(&String, &usize)> = freq
            .iter()
            .filter(|(w, &f)| f >= min_freq && w.chars().count() > 1)
            .collect();
        whole.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        for (w, _) in whole {
            if pieces.len() >= max_size {
                break;
            }
            pieces.push(w.clone());
        }
        let mut v = Self {
            lowercase,
            pieces,
            index: HashMap::new(),
        };
        v.reindex();
        v
    }

    /// Rebuild the lookup table after deserialisation.
    pub fn reindex(&mut self) {
        self.index = self.pieces.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: usize) -> &str {
        &self.pieces[id]
    }

    pub fn cls(&self) -> usize {
        self.index[CLS]
    }

    pub fn sep(&self) -> usize {
        self.index[SEP]
    }

    pub fn unk(&self) -> usize {
        self.index[UNK]
    }

    pub fn encode_word(&self, word: &str) -> Vec<usize> {
        let word = if self.lowercase {
            word.to_lowercase()
        } else {
            word.to_string()
        };
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let s: String = chars[start..end].iter().collect();
                let key = if start == 0 { s } else { format!("##{s}") };
                if let Some(id) = self.id(&key) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    out.push(id);
                    start = end;
                }
                None => return vec![self.unk()],
            }
        }
        if out.is_empty() {
            out.push(self.unk());
        }
        out
    }

    /// Encode a word sequence. Returns the piece ids and, for each word, the
    /// range of its pieces.
    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> (Vec<usize>, Vec<Range<usize>>) {
        let mut ids = Vec::new();
        let mut ranges = Vec::with_capacity(words.len());
        for w in words {
            let start = ids.len();
            ids.extend(self.encode_word(w.as_ref()));
            ranges.push(start..ids.len());
        }
        (ids, ranges)
    }
}

/// Pieces of a decoder target: the text is split on spaces, each chunk into
/// `<pad>`, two-character quotes, alphanumeric runs and single other
/// characters. Pieces after the first in a chunk carry a `##` prefix so the
/// split is reversible by [`join_target_pieces`].
pub fn split_target(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split(' ').filter(|c| !c.is_empty()) {
        let chars: Vec<char> = chunk.chars().collect();
        let mut i = 0;
        let mut first = true;
        while i < chars.len() {
            let rest: String = chars[i..].iter().take(5).collect();
            let len = if rest.starts_with("<pad>") {
                5
            } else if rest.starts_with("``") || rest.starts_with("''") {
                2
            } else if chars[i].is_alphanumeric() {
                chars[i..].iter().take_while(|c| c.is_alphanumeric()).count()
            } else {
                1
            };
            let piece: String = chars[i..i + len].iter().collect();
            out.push(if first { piece } else { format!("##{piece}") });
            first = false;
            i += len;
        }
    }
    out
}

pub fn join_target_pieces<S: AsRef<str>>(pieces: &[S]) -> String {
    let mut out = String::new();
    for (i, p) in pieces.iter().enumerate() {
        let p = p.as_ref();
        if let Some(glued) = p.strip_prefix("##") {
            out.push_str(glued);
        } else {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(p);
        }
    }
    out
}

pub const T_UNK: &str = "<unk>";
pub const T_BOS: &str = "<bos>";
pub const T_EOS: &str = "<eos>";

/// Closed vocabulary over target pieces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetVocab {
    pieces: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TargetVocab {
    pub fn build<I, S>(pieces: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut all: Vec<String> = pieces.into_iter().map(|p| p.as_ref().to_string()).collect();
        all.sort_unstable();
        all.dedup();
        let mut list: Vec<String> = [T_UNK, T_BOS, T_EOS].iter().map(|s| s.to_string()).collect();
        list.extend(all.into_iter().filter(|p| p != T_UNK && p != T_BOS && p != T_EOS));
        let mut v = Self {
            pieces: list,
            index: HashMap::new(),
        };
        v.reindex();
        v
    }

    pub fn reindex(&mut self) {
        self.index = self.pieces.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn bos(&self) -> usize {
        self.index[T_BOS]
    }

    pub fn eos(&self) -> usize {
        self.index[T_EOS]
    }

    pub fn unk(&self) -> usize {
        self.index[T_UNK]
    }

    pub fn piece(&self, id: usize) -> &str {
        &self.pieces[id]
    }

    /// Piece ids of `text` followed by `<eos>`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut ids: Vec<usize> = split_target(text)
            .iter()
            .map(|p| self.index.get(p).copied().unwrap_or(self.unk()))
            .collect();
        ids.push(self.eos());
        ids
    }

    /// Text of `ids` up to the first `<eos>`; `<bos>` is skipped.
    pub fn decode(&self, ids: &[usize]) -> String {
        let pieces: Vec<&str> = ids
            .iter()
            .take_while(|&&i| i != self.eos())
            .filter(|&&i| i != self.bos())
            .map(|&i| self.piece(i))
            .collect();
        join_target_pieces(&pieces)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rare_words_split_into_pieces() {
        let v = WordPieceVocab::build(["play", "play", "recess"], 2, 100, true);
        assert_eq!(v.encode_word("Play").len(), 1);
        let pieces = v.encode_word("recess");
        assert!(pieces.len() > 1);
        assert_eq!(v.piece(pieces[1]).chars().take(2).collect::<String>(), "##");
        assert_eq!(v.encode_word("zebra"), vec![v.unk()]);
    }

    #[test]
    fn word_ranges_tile_the_ids() {
        let v = WordPieceVocab::build(["the", "cat", "sat"], 1, 100, false);
        let (ids, ranges) = v.encode_words(&["the", "cats", "sat"]);
        assert_eq!(ranges[0], 0..1);
        assert_eq!(ranges[2].end, ids.len());
        assert!(ranges.windows(2).all(|w| w[0].end == w[1].start));
    }

    #[test]
    fn target_split_examples() {
        let p = split_target("``who'' <pad>, is <pad>.");
        assert_eq!(p, ["``", "##who", "##''", "<pad>", "##,", "is", "<pad>", "##."]);
        assert_eq!(join_target_pieces(&p), "``who'' <pad>, is <pad>.");
    }

    #[test]
    fn target_vocab_round_trip() {
        let text = "the first element is <pad> who <pad>.";
        let v = TargetVocab::build(split_target(text));
        let ids = v.encode(text);
        assert_eq!(*ids.last().unwrap(), v.eos());
        assert_eq!(v.decode(&ids), text);
    }

    proptest! {
        #[test]
        fn split_is_reversible(words in proptest::collection::vec("[a-z0-9<>`',.;:#()-]{1,8}", 1..12)) {
            let text = words.join(" ");
            prop_assert_eq!(join_target_pieces(&split_target(&text)), text);
        }
    }
}
