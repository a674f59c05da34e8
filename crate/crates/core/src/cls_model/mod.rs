//! Classification branch: two encoders fused by cross-attention, span
//! pooling, a spatial graph with GCN fusion, and a four-way classifier.

mod graph;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use spatex_nn::{LayerNorm, Linear, MultiHeadAttention, ParamStore, Tape, TransformerConfig, TransformerEncoder, Var};

pub use graph::{
    build_graph, merge_adjacency, normalize_adjacency, span_head, Gcn, GraphError, GraphInput, SpatialGraph, EDGE_TYPES,
};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ClsError {
    #[error("cannot pool an empty span")]
    EmptySpan,
    #[error("span {start}..{end} outside a sequence of length {len}")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("element {0} has no graph node")]
    MissingNode(usize),
}

/// Sizes shared by the encoders and heads.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub window_overlap: usize,
}

/// The masked-LM style and seq2seq style encoders plus the two
/// cross-attention blocks joining them.
#[derive(Clone, Debug)]
pub struct DualEncoder {
    pub mlm: TransformerEncoder,
    pub s2s: TransformerEncoder,
    cross_b: MultiHeadAttention,
    ln_b: LayerNorm,
    cross_t: MultiHeadAttention,
    ln_t: LayerNorm,
    pub use_cross_attention: bool,
    overlap: usize,
}

impl DualEncoder {
    pub fn new(
        ps: &mut ParamStore,
        dims: &EncoderDims,
        mlm_vocab: usize,
        s2s_vocab: usize,
        use_cross_attention: bool,
    ) -> Self {
        let cfg = |vocab_size| TransformerConfig {
            vocab_size,
            hidden: dims.hidden,
            heads: dims.heads,
            layers: dims.layers,
            ffn: dims.ffn,
            max_len: dims.max_len,
        };
        Self {
            mlm: TransformerEncoder::new(ps, "mlm", cfg(mlm_vocab)),
            s2s: TransformerEncoder::new(ps, "s2s", cfg(s2s_vocab)),
            cross_b: MultiHeadAttention::new(ps, "cross_b", dims.hidden, dims.heads),
            ln_b: LayerNorm::new(ps, "cross_b.ln", dims.hidden),
            cross_t: MultiHeadAttention::new(ps, "cross_t", dims.hidden, dims.heads),
            ln_t: LayerNorm::new(ps, "cross_t.ln", dims.hidden),
            use_cross_attention,
            overlap: dims.window_overlap,
        }
    }

    /// `(H_EB, H_ET)`; sequences longer than the encoder limit are windowed.
    pub fn encode_dual(&self, t: &mut Tape, mlm_ids: &[usize], s2s_ids: &[usize]) -> (Var, Var) {
        let eb = self.mlm.forward_windowed(t, mlm_ids, self.overlap);
        let et = self.encode_s2s(t, s2s_ids);
        (eb, et)
    }

    pub fn encode_s2s(&self, t: &mut Tape, ids: &[usize]) -> Var {
        self.s2s.forward_windowed(t, ids, self.overlap)
    }

    /// `(H_CB, H_CT)`. Without cross-attention both inputs pass through.
    pub fn cross_attend(&self, t: &mut Tape, eb: Var, et: Var) -> (Var, Var) {
        if !self.use_cross_attention {
            return (eb, et);
        }
        (
            cross_block(t, &self.cross_b, &self.ln_b, eb, et),
            cross_block(t, &self.cross_t, &self.ln_t, et, eb),
        )
    }
}

/// `LayerNorm(q + MHA(q, memory))`.
pub fn cross_block(t: &mut Tape, attn: &MultiHeadAttention, ln: &LayerNorm, q: Var, memory: Var) -> Var {
    let a = attn.forward(t, q, memory, None).output;
    let r = t.add(q, a);
    ln.forward(t, r)
}

/// Self-attentive pooling of rows `span` of `h`: scores from `scorer`,
/// softmax over the span, weighted sum.
pub fn span_pool(t: &mut Tape, h: Var, span: Range<usize>, scorer: &Linear) -> Result<Var, ClsError> {
    if span.is_empty() {
        return Err(ClsError::EmptySpan);
    }
    let len = t.rows(h);
    if span.end > len {
        return Err(ClsError::SpanOutOfBounds {
            start: span.start,
            end: span.end,
            len,
        });
    }
    let rows = t.slice_rows(h, span.start, span.end);
    if span.len() == 1 {
        return Ok(rows);
    }
    let scores = scorer.forward(t, rows);
    let st = t.transpose(scores);
    let w = t.softmax_rows(st);
    Ok(t.matmul(w, rows))
}

/// Pool subword rows into one row per word.
pub fn pool_words(t: &mut Tape, h: Var, word_pieces: &[Range<usize>], scorer: &Linear) -> Result<Var, ClsError> {
    let rows = word_pieces
        .iter()
        .map(|r| span_pool(t, h, r.clone(), scorer))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(t.concat_rows(&rows))
}

/// Slot scorers, the node scorer, the GCN and the MLP classifier.
#[derive(Clone, Debug)]
pub struct ClsHead {
    pub word_scorer: Linear,
    pub slot_scorers: [Linear; 3],
    pub node_scorer: Linear,
    pub gcn: Option<Gcn>,
    hidden_layer: Linear,
    output: Linear,
}

impl ClsHead {
    pub fn new(ps: &mut ParamStore, dim: usize, gcn_depth: usize, use_gcn: bool) -> Self {
        let per_slot = if use_gcn { 2 * dim } else { dim };
        Self {
            word_scorer: Linear::new(ps, "cls.word_scorer", dim, 1),
            slot_scorers: [
                Linear::new(ps, "cls.tm_scorer", dim, 1),
                Linear::new(ps, "cls.tr_scorer", dim, 1),
                Linear::new(ps, "cls.lg_scorer", dim, 1),
            ],
            node_scorer: Linear::new(ps, "cls.node_scorer", dim, 1),
            gcn: use_gcn.then(|| Gcn::new(ps, "cls.gcn", dim, gcn_depth)),
            hidden_layer: Linear::new(ps, "cls.mlp.hidden", 3 * per_slot, dim),
            output: Linear::new(ps, "cls.mlp.output", dim, 4),
        }
    }

    /// GCN output `H_NS` for every node. Token nodes start from the word
    /// rows, element nodes from pooled element spans.
    pub fn node_states(
        &self,
        t: &mut Tape,
        words: Var,
        elements: &[(usize, usize)],
        graph: &SpatialGraph,
    ) -> Result<Option<Var>, ClsError> {
        let Some(gcn) = &self.gcn else { return Ok(None) };
        let mut rows = vec![words];
        for &(s, e) in elements {
            rows.push(span_pool(t, words, s..e, &self.node_scorer)?);
        }
        let features = t.concat_rows(&rows);
        let a = gcn.adjacency(t, graph);
        Ok(Some(gcn.forward(t, a, features)))
    }

    /// Classifier input `[H_tm; H_tm^NS; H_tr; H_tr^NS; H_lg; H_lg^NS]`
    /// (without the node parts when the GCN is off), one row.
    pub fn triplet_input(
        &self,
        t: &mut Tape,
        words: Var,
        elements: &[(usize, usize)],
        node_states: Option<Var>,
        triplet: [usize; 3],
    ) -> Result<Var, ClsError> {
        let mut parts = Vec::with_capacity(6);
        for (slot, &e) in triplet.iter().enumerate() {
            let &(s, end) = elements.get(e).ok_or(ClsError::MissingNode(e))?;
            parts.push(span_pool(t, words, s..end, &self.slot_scorers[slot])?);
            if let Some(ns) = node_states {
                let node = t.rows(words) + e;
                if node >= t.rows(ns) {
                    return Err(ClsError::MissingNode(e));
                }
                parts.push(t.row(ns, node));
            }
        }
        Ok(t.concat_cols(&parts))
    }

    /// Logits over QSLINK, OLINK, MOVELINK, NULL for stacked inputs.
    pub fn classify(&self, t: &mut Tape, inputs: Var) -> Var {
        let h = self.hidden_layer.forward(t, inputs);
        let h = t.relu(h);
        self.output.forward(t, h)
    }
}

/// Mean cross-entropy of `logits` against class indices.
pub fn cls_loss(t: &mut Tape, logits: Var, labels: &[usize]) -> Var {
    t.cross_entropy(logits, labels)
}

/// Row-wise softmax of classifier logits as plain vectors.
pub fn class_distribution(t: &mut Tape, logits: Var) -> Vec<[f64; 4]> {
    let p = t.softmax_rows(logits);
    t.value(p)
        .rows()
        .into_iter()
        .map(|r| [r[0], r[1], r[2], r[3]])
        .collect()
}
