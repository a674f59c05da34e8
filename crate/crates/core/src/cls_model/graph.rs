use ndarray::Array2;
use spatex_nn::{Init, Linear, Matrix, ParamId, ParamStore, Tape, Var};

/// Edge types, in merge order.
pub const EDGE_TYPES: [&str; 4] = ["boundary", "element", "coreference", "dependency"];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("adjacency shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("expected {expected} edge weights, got {got}")]
    WeightCount { expected: usize, got: usize },
}

/// Everything graph construction needs about one encoding window, in
/// window-local token coordinates.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GraphInput {
    /// Sentence id of every token.
    pub token_sentence: Vec<usize>,
    /// Elements as `(start, end)` token ranges.
    pub elements: Vec<(usize, usize)>,
    /// Dependency head of every token (`None` for a root or a head outside
    /// the window). `None` overall when the parser failed.
    pub heads: Option<Vec<Option<usize>>>,
    /// Coreference clusters of `(start, end)` mentions; `None` when the
    /// resolver failed.
    pub clusters: Option<Vec<Vec<(usize, usize)>>>,
}

/// Token nodes `0..n_tokens` followed by one node per element.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialGraph {
    pub n_tokens: usize,
    pub n_nodes: usize,
    /// `A_B`, `A_E`, `A_C`, `A_D`.
    pub adjacency: [Matrix; 4],
}

impl SpatialGraph {
    pub fn element_node(&self, element: usize) -> usize {
        self.n_tokens + element
    }

    pub fn boundary(&self) -> &Matrix {
        &self.adjacency[0]
    }

    pub fn containment(&self) -> &Matrix {
        &self.adjacency[1]
    }

    pub fn coreference(&self) -> &Matrix {
        &self.adjacency[2]
    }

    pub fn dependency(&self) -> &Matrix {
        &self.adjacency[3]
    }
}

/// Token whose head lies outside the span (first such), else the last one.
pub fn span_head(start: usize, end: usize, heads: &[Option<usize>]) -> usize {
    (start..end)
        .find(|&i| heads[i].is_none_or(|h| h < start || h >= end))
        .unwrap_or(end - 1)
}

pub fn build_graph(input: &GraphInput) -> SpatialGraph {
    let m = input.token_sentence.len();
    let n = m + input.elements.len();
    let node_sentence: Vec<usize> = input
        .token_sentence
        .iter()
        .copied()
        .chain(input.elements.iter().map(|&(s, _)| input.token_sentence[s]))
        .collect();

    let mut boundary = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j && node_sentence[i] == node_sentence[j] {
                boundary[[i, j]] = 1.0;
            }
        }
    }

    let mut containment = Array2::zeros((n, n));
    for (e, &(s, t)) in input.elements.iter().enumerate() {
        for tok in s..t {
            containment[[m + e, tok]] = 1.0;
        }
    }

    let mut coreference = Array2::zeros((n, n));
    if let Some(clusters) = &input.clusters {
        for cluster in clusters {
            let nodes: Vec<usize> = cluster
                .iter()
                .map(|&(s, t)| {
                    input
                        .elements
                        .iter()
                        .position(|&span| span == (s, t))
                        .map_or(t - 1, |e| m + e)
                })
                .collect();
            for &a in &nodes {
                for &b in &nodes {
                    if a != b {
                        coreference[[a, b]] = 1.0;
                    }
                }
            }
        }
    }

    let mut dependency = Array2::zeros((n, n));
    if let Some(heads) = &input.heads {
        let parent: Vec<Option<usize>> = heads
            .iter()
            .copied()
            .chain(input.elements.iter().map(|&(s, t)| heads[span_head(s, t, heads)]))
            .collect();
        for i in 0..n {
            for j in 0..n {
                if i != j && parent[i].is_some() && parent[i] == parent[j] {
                    dependency[[i, j]] = 1.0;
                }
            }
        }
    }

    SpatialGraph {
        n_tokens: m,
        n_nodes: n,
        adjacency: [boundary, containment, coreference, dependency],
    }
}

/// Weighted sum of the adjacency matrices.
pub fn merge_adjacency(adjacency: &[Matrix], weights: &[f64]) -> Result<Matrix, GraphError> {
    if adjacency.len() != weights.len() {
        return Err(GraphError::WeightCount {
            expected: adjacency.len(),
            got: weights.len(),
        });
    }
    let Some(first) = adjacency.first() else {
        return Ok(Array2::zeros((0, 0)));
    };
    let mut out = Array2::zeros(first.dim());
    for (a, &w) in adjacency.iter().zip(weights) {
        if a.dim() != first.dim() {
            return Err(GraphError::ShapeMismatch(first.dim(), a.dim()));
        }
        out.scaled_add(w, a);
    }
    Ok(out)
}

/// Symmetric normalisation `D^-1/2 (A + I) D^-1/2` with `D` the row sums
/// of `A + I`.
pub fn normalize_adjacency(a: &Matrix) -> Matrix {
    let n = a.nrows();
    let hat = a + &Array2::<f64>::eye(n);
    let dinv: Vec<f64> = hat.rows().into_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| dinv[i] * hat[[i, j]] * dinv[j])
}

/// Graph convolution over the merged adjacency. Each edge type carries one
/// learnable scalar weight `exp(theta_y)`, so weights stay positive and
/// start at 1.
#[derive(Clone, Debug)]
pub struct Gcn {
    pub edge_logits: ParamId,
    pub layers: Vec<Linear>,
}

impl Gcn {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, depth: usize) -> Self {
        Self {
            edge_logits: ps.get_or_init(&format!("{name}.edge_logits"), (1, EDGE_TYPES.len()), Init::Zeros),
            layers: (0..depth)
                .map(|i| Linear::new(ps, &format!("{name}.layer{i}"), dim, dim))
                .collect(),
        }
    }

    pub fn edge_weights(&self, ps: &ParamStore) -> Vec<f64> {
        ps.get(self.edge_logits).iter().map(|x| x.exp()).collect()
    }

    /// Normalised merged adjacency as a differentiable node.
    pub fn adjacency(&self, t: &mut Tape, graph: &SpatialGraph) -> Var {
        let theta = t.p(self.edge_logits);
        let mut merged = None;
        for (y, a) in graph.adjacency.iter().enumerate() {
            let ty = t.slice_cols(theta, y, y + 1);
            let w = t.exp(ty);
            let a = t.constant(a.clone());
            let term = t.mul(a, w);
            merged = Some(match merged {
                None => term,
                Some(acc) => t.add(acc, term),
            });
        }
        let merged = merged.expect("four edge types");
        let hat = t.add_const(merged, Array2::eye(graph.n_nodes));
        let deg = t.sum_rows(hat);
        let log_deg = t.log(deg);
        let half = t.scale(log_deg, -0.5);
        let dinv = t.exp(half);
        let dinv_t = t.transpose(dinv);
        let left = t.mul(hat, dinv);
        t.mul(left, dinv_t)
    }

    /// `H <- ReLU(Â H W + b)` per layer.
    pub fn forward(&self, t: &mut Tape, adjacency: Var, features: Var) -> Var {
        let mut h = features;
        for layer in &self.layers {
            let agg = t.matmul(adjacency, h);
            let z = layer.forward(t, agg);
            h = t.relu(z);
        }
        h
    }
}
