//! Generation branch: target sentences for gold links, a transformer
//! decoder over the seq2seq encoder states, and parsing of decoded text back
//! into links.

mod template;

use std::io::Write;

use serde::{Deserialize, Serialize};
use spatex_nn::{Matrix, ParamStore, Tape, TransformerConfig, TransformerDecoder, Var};

use crate::vocab::TargetVocab;

pub use template::{
    build_target_sentence, ground_slots, parse_blocks, parse_target_sentence, relation_name, render_blocks, ParseError,
    TargetSentence, BLOCK_SEPARATOR, DELIMITER, NULL_SLOT,
};

/// `(pronoun, noun)` for a link: the first filled slot whose span is a
/// non-initial mention of a coreference cluster, paired with the cluster's
/// first mention. Spans are `(start, end)` ranges into `words`.
pub fn coref_pair(
    slots: [Option<(usize, usize)>; 3],
    clusters: &[Vec<(usize, usize)>],
    words: &[&str],
) -> Option<(String, String)> {
    let text = |(s, e): (usize, usize)| words[s..e].join(" ");
    for span in slots.into_iter().flatten() {
        for cluster in clusters {
            if let Some(pos) = cluster.iter().position(|&m| m == span) {
                if pos > 0 {
                    return Some((text(span), text(cluster[0])));
                }
            }
        }
    }
    None
}

/// Decoder plus greedy search.
#[derive(Clone, Debug)]
pub struct GenHead {
    pub decoder: TransformerDecoder,
    pub max_decode_len: usize,
}

impl GenHead {
    pub fn new(
        ps: &mut ParamStore,
        vocab_size: usize,
        hidden: usize,
        heads: usize,
        layers: usize,
        ffn: usize,
        max_decode_len: usize,
    ) -> Self {
        let decoder = TransformerDecoder::new(
            ps,
            "gen.decoder",
            TransformerConfig {
                vocab_size,
                hidden,
                heads,
                layers,
                ffn,
                max_len: max_decode_len + 1,
            },
        );
        Self {
            decoder,
            max_decode_len,
        }
    }

    /// Summed token cross-entropy of `target` (ending in `<eos>`) under
    /// teacher forcing, and the number of tokens. Targets longer than the
    /// decode cap are truncated.
    pub fn token_nll(&self, t: &mut Tape, memory: Var, target: &[usize], bos: usize) -> (Var, usize) {
        let target = &target[..target.len().min(self.max_decode_len + 1)];
        let mut input = Vec::with_capacity(target.len());
        input.push(bos);
        input.extend_from_slice(&target[..target.len() - 1]);
        let logits = self.decoder.forward(t, &input, memory);
        let mean = t.cross_entropy(logits, target);
        (t.scale(mean, target.len() as f64), target.len())
    }

    /// Greedy decoding from a fixed memory. Returns ids without `<bos>`,
    /// ending at (and excluding) `<eos>` or the length cap.
    pub fn generate(&self, ps: &ParamStore, memory: &Matrix, vocab: &TargetVocab) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        while out.len() < self.max_decode_len {
            let mut t = Tape::new(ps);
            let mem = t.constant(memory.clone());
            let mut input = vec![vocab.bos()];
            input.extend_from_slice(&out);
            let logits = self.decoder.forward(&mut t, &input, mem);
            let last = t.value(logits).row(input.len() - 1).to_owned();
            let next = last
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                )
                .0;
            if next == vocab.eos() {
                break;
            }
            out.push(next);
        }
        out
    }
}

/// Mean token cross-entropy over a batch of `(summed nll, token count)`.
pub fn gen_loss(t: &mut Tape, parts: &[(Var, usize)]) -> Option<Var> {
    let tokens: usize = parts.iter().map(|p| p.1).sum();
    if tokens == 0 {
        return None;
    }
    let sums: Vec<Var> = parts.iter().map(|p| p.0).collect();
    let stacked = t.concat_rows(&sums);
    let total = t.sum_all(stacked);
    Some(t.scale(total, 1.0 / tokens as f64))
}

/// Per-sentence record of what the decoder produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutput {
    pub doc_id: String,
    pub sentence_id: usize,
    pub decoded: String,
    pub parsed: Vec<TargetSentence>,
    pub failures: Vec<String>,
}

pub fn write_diagnostics<W: Write>(outputs: &[GenerationOutput], mut w: W) -> std::io::Result<()> {
    for o in outputs {
        serde_json::to_writer(&mut w, o)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
