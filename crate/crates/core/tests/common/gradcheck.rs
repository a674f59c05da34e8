//! Central-difference gradient checks over parameter stores.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatex_core::cls_model::{build_graph, cls_loss, cross_block, span_pool, ClsHead, Gcn, GraphInput};
use spatex_nn::{LayerNorm, Linear, Matrix, MultiHeadAttention, ParamId, ParamStore, Tape, Var};

const STEP: f64 = 1e-5;

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

/// `sum(x * w)` with a fixed random `w`, so every output entry matters.
pub fn probe(t: &mut Tape, x: Var, seed: u64) -> Var {
    let (r, c) = t.shape(x);
    let w = random_matrix(&mut ChaCha8Rng::seed_from_u64(seed), r, c);
    let w = t.constant(w);
    let p = t.mul(x, w);
    t.sum_all(p)
}

/// Largest relative error `|a - n| / max(|a| + |n|, 1e-5)` over the
/// checked entries of every parameter. The floor keeps entries whose exact
/// gradient is zero (e.g. a key bias under softmax) from turning rounding
/// noise into a large ratio. At most `per_param` entries of each parameter
/// are checked, chosen at random.
pub fn max_relative_error(ps: &ParamStore, per_param: usize, f: impl Fn(&mut Tape) -> Var) -> f64 {
    let analytic = {
        let mut t = Tape::new(ps);
        let loss = f(&mut t);
        t.backward(loss).into_params()
    };
    let eval = |store: &ParamStore| {
        let mut t = Tape::new(store);
        let loss = f(&mut t);
        t.scalar(loss)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut work = ps.clone();
    let mut worst: f64 = 0.0;
    let ids: Vec<ParamId> = ps.ids().collect();
    for id in ids {
        let shape = ps.get(id).dim();
        let total = shape.0 * shape.1;
        let mut entries: Vec<usize> = (0..total).collect();
        if total > per_param {
            entries = (0..per_param).map(|_| rng.gen_range(0..total)).collect();
        }
        for flat in entries {
            let at = (flat / shape.1, flat % shape.1);
            let orig = ps.get(id)[at];
            work.get_mut(id)[at] = orig + STEP;
            let up = eval(&work);
            work.get_mut(id)[at] = orig - STEP;
            let down = eval(&work);
            work.get_mut(id)[at] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic.get(&id).map_or(0.0, |g| g[at]);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-5);
            if rel > worst {
                worst = rel;
                if std::env::var_os("GRADCHECK_VERBOSE").is_some() {
                    eprintln!("{} {at:?}: analytic {a:e}, numeric {numeric:e}", ps.name(id));
                }
            }
        }
    }
    worst
}

fn input(ps: &mut ParamStore, name: &str, rows: usize, cols: usize, seed: u64) -> ParamId {
    ps.insert(name, random_matrix(&mut ChaCha8Rng::seed_from_u64(seed), rows, cols))
}

/// Seven tokens over two sentences, three elements, one coreference pair.
pub fn toy_graph() -> GraphInput {
    GraphInput {
        token_sentence: vec![0, 0, 0, 0, 0, 1, 1],
        elements: vec![(0, 2), (3, 4), (5, 7)],
        heads: Some(vec![Some(1), None, Some(1), Some(1), Some(3), None, Some(5)]),
        clusters: Some(vec![vec![(0, 2), (5, 7)]]),
    }
}

pub fn cross_attention_error() -> f64 {
    let mut ps = ParamStore::new(11);
    let attn = MultiHeadAttention::new(&mut ps, "x", 8, 2);
    let ln = LayerNorm::new(&mut ps, "x.ln", 8);
    let q = input(&mut ps, "q", 5, 8, 1);
    let mem = input(&mut ps, "mem", 7, 8, 2);
    max_relative_error(&ps, 64, |t| {
        let (q, mem) = (t.p(q), t.p(mem));
        let out = cross_block(t, &attn, &ln, q, mem);
        probe(t, out, 3)
    })
}

pub fn span_pool_error() -> f64 {
    let mut ps = ParamStore::new(12);
    let scorer = Linear::new(&mut ps, "s", 6, 1);
    let h = input(&mut ps, "h", 10, 6, 4);
    max_relative_error(&ps, 64, |t| {
        let h = t.p(h);
        let pooled = span_pool(t, h, 2..6, &scorer).unwrap();
        probe(t, pooled, 5)
    })
}

pub fn gcn_error() -> f64 {
    let mut ps = ParamStore::new(13);
    let gcn = Gcn::new(&mut ps, "g", 6, 2);
    let graph = build_graph(&toy_graph());
    let x = input(&mut ps, "x", graph.n_nodes, 6, 6);
    max_relative_error(&ps, 64, |t| {
        let x = t.p(x);
        let a = gcn.adjacency(t, &graph);
        let out = gcn.forward(t, a, x);
        probe(t, out, 7)
    })
}

/// Graph, span pooling, triplet assembly and the loss, end to end.
pub fn classifier_error() -> f64 {
    let mut ps = ParamStore::new(14);
    let head = ClsHead::new(&mut ps, 6, 2, true);
    let g = toy_graph();
    let graph = build_graph(&g);
    let words = input(&mut ps, "words", 7, 6, 8);
    let triplets = [[0, 1, 2], [2, 1, 0], [0, 1, 0]];
    let labels = [0, 3, 2];
    max_relative_error(&ps, 48, |t| {
        let w = t.p(words);
        let ns = head.node_states(t, w, &g.elements, &graph).unwrap();
        let rows: Vec<_> = triplets
            .iter()
            .map(|&tr| head.triplet_input(t, w, &g.elements, ns, tr).unwrap())
            .collect();
        let inputs = t.concat_rows(&rows);
        let logits = head.classify(t, inputs);
        cls_loss(t, logits, &labels)
    })
}
