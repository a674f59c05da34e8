//! Reference implementations evaluated pair by pair.

use ndarray::Array2;
use rand::Rng;
use spatex_core::cls_model::GraphInput;
use spatex_core::cte::{CandidateTriplet, RolePartition};
use spatex_nn::Matrix;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Node {
    Token(usize),
    Element(usize),
}

fn nodes(input: &GraphInput) -> Vec<Node> {
    (0..input.token_sentence.len())
        .map(Node::Token)
        .chain((0..input.elements.len()).map(Node::Element))
        .collect()
}

fn sentence(input: &GraphInput, n: Node) -> usize {
    match n {
        Node::Token(k) => input.token_sentence[k],
        Node::Element(e) => input.token_sentence[input.elements[e].0],
    }
}

fn mention_node(input: &GraphInput, m: (usize, usize)) -> Node {
    for (e, &span) in input.elements.iter().enumerate() {
        if span == m {
            return Node::Element(e);
        }
    }
    Node::Token(m.1 - 1)
}

fn parent(input: &GraphInput, heads: &[Option<usize>], n: Node) -> Option<usize> {
    match n {
        Node::Token(k) => heads[k],
        Node::Element(e) => {
            let (s, t) = input.elements[e];
            let outside: Vec<usize> = (s..t)
                .filter(|&k| match heads[k] {
                    None => true,
                    Some(h) => !(s..t).contains(&h),
                })
                .collect();
            let head = outside.first().copied().unwrap_or(t - 1);
            heads[head]
        }
    }
}

/// `[A_B, A_E, A_C, A_D]` by evaluating every rule on every ordered pair.
pub fn adjacency(input: &GraphInput) -> [Matrix; 4] {
    let ns = nodes(input);
    let n = ns.len();
    let mut out: [Matrix; 4] = std::array::from_fn(|_| Array2::zeros((n, n)));
    for (i, &a) in ns.iter().enumerate() {
        for (j, &b) in ns.iter().enumerate() {
            if i != j && sentence(input, a) == sentence(input, b) {
                out[0][[i, j]] = 1.0;
            }
            if let (Node::Element(e), Node::Token(k)) = (a, b) {
                let (s, t) = input.elements[e];
                if s <= k && k < t {
                    out[1][[i, j]] = 1.0;
                }
            }
            if let Some(clusters) = &input.clusters {
                let linked = clusters.iter().any(|c| {
                    c.iter().any(|&x| mention_node(input, x) == a) && c.iter().any(|&y| mention_node(input, y) == b)
                });
                if i != j && linked {
                    out[2][[i, j]] = 1.0;
                }
            }
            if let Some(heads) = &input.heads {
                let (pa, pb) = (parent(input, heads, a), parent(input, heads, b));
                if i != j && pa.is_some() && pa == pb {
                    out[3][[i, j]] = 1.0;
                }
            }
        }
    }
    out
}

/// A toy window: up to `max_tokens` tokens over one to three sentences, up
/// to `max_elements` elements, random heads within each sentence and a few
/// random coreference clusters. Either analysis may be missing.
pub fn random_graph_input(rng: &mut impl Rng, max_tokens: usize, max_elements: usize) -> GraphInput {
    let m = rng.gen_range(1..=max_tokens);
    let mut token_sentence = Vec::with_capacity(m);
    let mut s = 0;
    for k in 0..m {
        if k > 0 && rng.gen_bool(0.2) {
            s += 1;
        }
        token_sentence.push(s);
    }
    let sentence_range = |k: usize| {
        let id = token_sentence[k];
        let lo = token_sentence.iter().position(|&x| x == id).unwrap();
        let hi = token_sentence.iter().rposition(|&x| x == id).unwrap() + 1;
        (lo, hi)
    };
    let random_span = |rng: &mut dyn rand::RngCore| {
        let start = rng.gen_range(0..m);
        let (_, hi) = sentence_range(start);
        let end = rng.gen_range(start + 1..=hi.min(start + 3));
        (start, end)
    };
    let n_el = rng.gen_range(0..=max_elements);
    let elements: Vec<(usize, usize)> = (0..n_el).map(|_| random_span(rng)).collect();
    let heads = rng.gen_bool(0.85).then(|| {
        (0..m)
            .map(|k| {
                let (lo, hi) = sentence_range(k);
                if rng.gen_bool(0.2) {
                    None
                } else {
                    Some(rng.gen_range(lo..hi))
                }
            })
            .collect()
    });
    let clusters = rng.gen_bool(0.85).then(|| {
        (0..rng.gen_range(0..3))
            .map(|_| {
                (0..rng.gen_range(1..4))
                    .map(|_| {
                        if !elements.is_empty() && rng.gen_bool(0.5) {
                            elements[rng.gen_range(0..elements.len())]
                        } else {
                            random_span(rng)
                        }
                    })
                    .collect()
            })
            .collect()
    });
    GraphInput {
        token_sentence,
        elements,
        heads,
        clusters,
    }
}

/// Every `(tm, tr, lg)` from three nested loops.
pub fn brute_force_candidates(p: &RolePartition, sentence_id: usize) -> Vec<CandidateTriplet> {
    let mut out = Vec::new();
    for i in 0..p.tm.len() {
        for j in 0..p.tr.len() {
            for k in 0..p.lg.len() {
                out.push(CandidateTriplet {
                    tm: p.tm[i],
                    tr: p.tr[j],
                    lg: p.lg[k],
                    sentence_id,
                });
            }
        }
    }
    out
}
