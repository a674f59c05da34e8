use ndarray::Array2;

use crate::graph::{Matrix, Var};
use crate::layers::{Linear, Tape};
use crate::params::ParamStore;

/// Scaled dot-product multi-head attention. Queries come from one sequence,
/// keys and values from another (or the same one for self-attention).
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

pub struct Attended {
    pub output: Var,
    /// Row-stochastic `queries x keys` weights, one node per head.
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Self {
        assert!(
            heads > 0 && dim.is_multiple_of(heads),
            "hidden size {dim} not divisible by {heads} heads"
        );
        Self {
            query: Linear::new(ps, &format!("{name}.q"), dim, dim),
            key: Linear::new(ps, &format!("{name}.k"), dim, dim),
            value: Linear::new(ps, &format!("{name}.v"), dim, dim),
            output: Linear::new(ps, &format!("{name}.o"), dim, dim),
            heads,
            dim,
        }
    }

    /// `mask`, when given, is added to the `queries x keys` scores of every head.
    pub fn forward(&self, t: &mut Tape, queries: Var, memory: Var, mask: Option<&Matrix>) -> Attended {
        let q = self.query.forward(t, queries);
        let k = self.key.forward(t, memory);
        let v = self.value.forward(t, memory);
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
            let qh = t.slice_cols(q, lo, hi);
            let kh = t.slice_cols(k, lo, hi);
            let vh = t.slice_cols(v, lo, hi);
            let kt = t.transpose(kh);
            let scores = t.matmul(qh, kt);
            let mut scores = t.scale(scores, scale);
            if let Some(m) = mask {
                scores = t.add_const(scores, m.clone());
            }
            let w = t.softmax_rows(scores);
            weights.push(w);
            outs.push(t.matmul(w, vh));
        }
        let joined = t.concat_cols(&outs);
        let output = self.output.forward(t, joined);
        Attended { output, weights }
    }
}

/// Additive mask that blocks attention to future positions.
pub fn causal_mask(n: usize) -> Matrix {
    Array2::from_shape_fn((n, n), |(i, j)| if j > i { -1e9 } else { 0.0 })
}
