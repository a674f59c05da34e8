use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::attention::{causal_mask, MultiHeadAttention};
use crate::graph::Var;
use crate::layers::{Embedding, FeedForward, LayerNorm, Linear, Tape};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn: usize,
    pub max_len: usize,
}

/// Split `0..n` into windows of at most `max_len` positions, consecutive
/// windows sharing `overlap` positions. The last window is right-aligned.
pub fn plan_windows(n: usize, max_len: usize, overlap: usize) -> Vec<Range<usize>> {
    assert!(max_len > 0);
    if n <= max_len {
        return std::iter::once(0..n).collect();
    }
    let overlap = overlap.min(max_len / 2);
    let stride = max_len - overlap;
    let mut windows = Vec::new();
    let mut start = 0;
    loop {
        if start + max_len >= n {
            windows.push(n.saturating_sub(max_len)..n);
            break;
        }
        windows.push(start..start + max_len);
        start += stride;
    }
    windows
}

/// For each position, the window in which it sits most centrally
/// (largest distance to the nearer window edge; earlier window on ties).
pub fn assign_windows(n: usize, windows: &[Range<usize>]) -> Vec<usize> {
    (0..n)
        .map(|p| {
            let mut best = (0usize, -1isize);
            for (w, r) in windows.iter().enumerate() {
                if r.contains(&p) {
                    let margin = (p - r.start).min(r.end - 1 - p) as isize;
                    if margin > best.1 {
                        best = (w, margin);
                    }
                }
            }
            best.0
        })
        .collect()
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    ff: FeedForward,
    ln2: LayerNorm,
}

/// Post-LN transformer encoder with learned positions.
#[derive(Clone, Debug)]
pub struct TransformerEncoder {
    pub config: TransformerConfig,
    tokens: Embedding,
    positions: Embedding,
    emb_ln: LayerNorm,
    layers: Vec<EncoderLayer>,
}

impl TransformerEncoder {
    pub fn new(ps: &mut ParamStore, name: &str, config: TransformerConfig) -> Self {
        let d = config.hidden;
        let layers = (0..config.layers)
            .map(|i| EncoderLayer {
                attn: MultiHeadAttention::new(ps, &format!("{name}.layer{i}.attn"), d, config.heads),
                ln1: LayerNorm::new(ps, &format!("{name}.layer{i}.ln1"), d),
                ff: FeedForward::new(ps, &format!("{name}.layer{i}.ff"), d, config.ffn),
                ln2: LayerNorm::new(ps, &format!("{name}.layer{i}.ln2"), d),
            })
            .collect();
        Self {
            tokens: Embedding::new(ps, &format!("{name}.tokens"), config.vocab_size, d),
            positions: Embedding::new(ps, &format!("{name}.positions"), config.max_len, d),
            emb_ln: LayerNorm::new(ps, &format!("{name}.emb_ln"), d),
            layers,
            config,
        }
    }

    /// Encode at most `max_len` ids.
    pub fn forward(&self, t: &mut Tape, ids: &[usize]) -> Var {
        assert!(!ids.is_empty(), "encoder input is empty");
        assert!(
            ids.len() <= self.config.max_len,
            "encoder input of {} exceeds max length {}",
            ids.len(),
            self.config.max_len
        );
        let tok = self.tokens.forward(t, ids);
        let pos_ids: Vec<usize> = (0..ids.len()).collect();
        let pos = self.positions.forward(t, &pos_ids);
        let x = t.add(tok, pos);
        let mut x = self.emb_ln.forward(t, x);
        for layer in &self.layers {
            let a = layer.attn.forward(t, x, x, None).output;
            let r = t.add(x, a);
            x = layer.ln1.forward(t, r);
            let f = layer.ff.forward(t, x);
            let r = t.add(x, f);
            x = layer.ln2.forward(t, r);
        }
        x
    }

    /// Encode a sequence of any length with overlapping windows; each output
    /// row comes from the window where that position is most central.
    pub fn forward_windowed(&self, t: &mut Tape, ids: &[usize], overlap: usize) -> Var {
        let windows = plan_windows(ids.len(), self.config.max_len, overlap);
        if windows.len() == 1 {
            return self.forward(t, ids);
        }
        let owner = assign_windows(ids.len(), &windows);
        let encoded: Vec<Var> = windows.iter().map(|w| self.forward(t, &ids[w.clone()])).collect();
        let mut pieces = Vec::new();
        let mut p = 0;
        while p < ids.len() {
            let w = owner[p];
            let mut q = p;
            while q < ids.len() && owner[q] == w {
                q += 1;
            }
            let start = windows[w].start;
            pieces.push(t.slice_rows(encoded[w], p - start, q - start));
            p = q;
        }
        t.concat_rows(&pieces)
    }
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_attn: MultiHeadAttention,
    ln1: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff: FeedForward,
    ln3: LayerNorm,
}

/// Post-LN transformer decoder with causal self-attention, cross-attention
/// over an encoder memory, and a vocabulary projection.
#[derive(Clone, Debug)]
pub struct TransformerDecoder {
    pub config: TransformerConfig,
    tokens: Embedding,
    positions: Embedding,
    emb_ln: LayerNorm,
    layers: Vec<DecoderLayer>,
    project: Linear,
}

impl TransformerDecoder {
    pub fn new(ps: &mut ParamStore, name: &str, config: TransformerConfig) -> Self {
        let d = config.hidden;
        let layers = (0..config.layers)
            .map(|i| DecoderLayer {
                self_attn: MultiHeadAttention::new(ps, &format!("{name}.layer{i}.self"), d, config.heads),
                ln1: LayerNorm::new(ps, &format!("{name}.layer{i}.ln1"), d),
                cross_attn: MultiHeadAttention::new(ps, &format!("{name}.layer{i}.cross"), d, config.heads),
                ln2: LayerNorm::new(ps, &format!("{name}.layer{i}.ln2"), d),
                ff: FeedForward::new(ps, &format!("{name}.layer{i}.ff"), d, config.ffn),
                ln3: LayerNorm::new(ps, &format!("{name}.layer{i}.ln3"), d),
            })
            .collect();
        Self {
            tokens: Embedding::new(ps, &format!("{name}.tokens"), config.vocab_size, d),
            positions: Embedding::new(ps, &format!("{name}.positions"), config.max_len, d),
            emb_ln: LayerNorm::new(ps, &format!("{name}.emb_ln"), d),
            project: Linear::new(ps, &format!("{name}.project"), d, config.vocab_size),
            layers,
            config,
        }
    }

    /// Logits (`len x vocab`) for the next token at every input position.
    pub fn forward(&self, t: &mut Tape, input_ids: &[usize], memory: Var) -> Var {
        assert!(!input_ids.is_empty());
        assert!(
            input_ids.len() <= self.config.max_len,
            "decoder input exceeds max length"
        );
        let tok = self.tokens.forward(t, input_ids);
        let pos_ids: Vec<usize> = (0..input_ids.len()).collect();
        let pos = self.positions.forward(t, &pos_ids);
        let x = t.add(tok, pos);
        let mut x = self.emb_ln.forward(t, x);
        let mask = causal_mask(input_ids.len());
        for layer in &self.layers {
            let a = layer.self_attn.forward(t, x, x, Some(&mask)).output;
            let r = t.add(x, a);
            x = layer.ln1.forward(t, r);
            let c = layer.cross_attn.forward(t, x, memory, None).output;
            let r = t.add(x, c);
            x = layer.ln2.forward(t, r);
            let f = layer.ff.forward(t, x);
            let r = t.add(x, f);
            x = layer.ln3.forward(t, r);
        }
        self.project.forward(t, x)
    }
}
