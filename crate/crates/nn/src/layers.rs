use std::ops::{Deref, DerefMut};

use crate::graph::{Graph, Var};
use crate::params::{Init, ParamId, ParamStore};

/// A [`Graph`] bound to the parameter store it reads from.
pub struct Tape<'p> {
    graph: Graph,
    params: &'p ParamStore,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            graph: Graph::new(),
            params,
        }
    }

    /// Bind a parameter onto the tape.
    pub fn p(&mut self, id: ParamId) -> Var {
        self.graph.param(self.params, id)
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }
}

impl Deref for Tape<'_> {
    type Target = Graph;
    fn deref(&self) -> &Graph {
        &self.graph
    }
}

impl DerefMut for Tape<'_> {
    fn deref_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self::with_bias(ps, name, in_dim, out_dim, true)
    }

    pub fn with_bias(ps: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        let weight = ps.get_or_init(&format!("{name}.weight"), (in_dim, out_dim), Init::XavierUniform);
        let bias = bias.then(|| ps.get_or_init(&format!("{name}.bias"), (1, out_dim), Init::Zeros));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let w = t.p(self.weight);
        let y = t.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = t.p(b);
                t.add(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(ps: &mut ParamStore, name: &str, vocab: usize, dim: usize) -> Self {
        let table = ps.get_or_init(&format!("{name}.table"), (vocab, dim), Init::XavierUniform);
        Self { table, vocab, dim }
    }

    pub fn forward(&self, t: &mut Tape, ids: &[usize]) -> Var {
        let table = t.p(self.table);
        t.gather_rows(table, ids)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: ps.get_or_init(&format!("{name}.gamma"), (1, dim), Init::Ones),
            beta: ps.get_or_init(&format!("{name}.beta"), (1, dim), Init::Zeros),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let n = t.normalize_rows(x, self.eps);
        let g = t.p(self.gamma);
        let b = t.p(self.beta);
        let y = t.mul(n, g);
        t.add(y, b)
    }
}

/// Two-layer position-wise feed-forward block with ReLU.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, inner: usize) -> Self {
        Self {
            up: Linear::new(ps, &format!("{name}.up"), dim, inner),
            down: Linear::new(ps, &format!("{name}.down"), inner, dim),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let h = self.up.forward(t, x);
        let h = t.relu(h);
        self.down.forward(t, h)
    }
}
