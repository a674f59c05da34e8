mod common;

use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spatex_core::analysis::{AnalysisProvider, RuleBasedProvider};
use spatex_core::cls_model::{
    build_graph, merge_adjacency, normalize_adjacency, span_head, Gcn, GraphError, GraphInput,
};
use spatex_core::pipeline::{DocAnalysis, HybridModel};
use spatex_nn::{Linear, Matrix, ParamStore, Tape};

fn is_symmetric(a: &Matrix) -> bool {
    a == a.t()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn graph_matches_pairwise_rules(seed in any::<u64>()) {
        let input = common::oracle::random_graph_input(&mut ChaCha8Rng::seed_from_u64(seed), 12, 4);
        let g = build_graph(&input);
        let expected = common::oracle::adjacency(&input);
        for (y, (got, want)) in g.adjacency.iter().zip(&expected).enumerate() {
            prop_assert_eq!(got, want, "edge type {}", y);
        }
        prop_assert!(is_symmetric(g.boundary()));
        prop_assert!(is_symmetric(g.coreference()));
        prop_assert!(is_symmetric(g.dependency()));
        prop_assert!(g.adjacency.iter().all(|a| a.diag().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn merge_preserves_zeros(seed in any::<u64>(), w in prop::array::uniform4(0.01f64..5.0)) {
        let input = common::oracle::random_graph_input(&mut ChaCha8Rng::seed_from_u64(seed), 12, 4);
        let g = build_graph(&input);
        let merged = merge_adjacency(&g.adjacency, &w).unwrap();
        for ((i, j), &v) in merged.indexed_iter() {
            let any = g.adjacency.iter().any(|a| a[[i, j]] != 0.0);
            prop_assert_eq!(v != 0.0, any);
        }
    }
}

#[test]
fn two_tokens_one_element() {
    let g = build_graph(&GraphInput {
        token_sentence: vec![0, 0],
        elements: vec![(0, 2)],
        heads: None,
        clusters: None,
    });
    assert_eq!(g.n_nodes, 3);
    assert_eq!(g.boundary(), &(Array2::<f64>::ones((3, 3)) - Array2::<f64>::eye(3)));
    assert_eq!(g.containment().sum(), 2.0);
    assert_eq!(g.containment()[[2, 0]], 1.0);
    assert_eq!(g.containment()[[0, 2]], 0.0);
    assert_eq!(g.dependency().sum(), 0.0);
    assert_eq!(g.coreference().sum(), 0.0);
}

#[test]
fn recess_links_who_and_children() {
    let doc = common::recess();
    let model = HybridModel::from_training_docs(common::tiny_config(), std::slice::from_ref(&doc)).unwrap();
    let window = &model.windows(&doc, spatex_core::pipeline::ElementSource::Gold)[0];
    let node = |text: &str| {
        let e = window
            .elements
            .iter()
            .position(|e| window.words[e.start - window.offset] == text)
            .unwrap();
        window.graph.element_node(e)
    };
    let (who, children) = (node("who"), node("children"));
    assert_eq!(window.graph.coreference()[[who, children]], 1.0);
    assert_eq!(window.graph.coreference()[[children, who]], 1.0);

    let analysis = DocAnalysis::run(&doc, &RuleBasedProvider);
    assert!(analysis.clusters.unwrap().iter().any(|c| c.len() == 2));
    assert_eq!(RuleBasedProvider.name(), "rule-based");
}

#[test]
fn span_head_prefers_external_head() {
    let heads = [Some(2), Some(0), None, Some(2)];
    assert_eq!(span_head(0, 2, &heads), 0);
    assert_eq!(span_head(2, 4, &heads), 2);
    assert_eq!(span_head(0, 1, &[Some(0)]), 0);
    // every head inside the span: the last token
    assert_eq!(span_head(0, 2, &[Some(1), Some(0)]), 1);
}

#[test]
fn merge_hand_computed() {
    let ab = array![[0., 1., 1., 0.], [1., 0., 1., 0.], [1., 1., 0., 0.], [0., 0., 0., 0.]];
    let ae = array![[0., 0., 0., 0.], [0., 0., 0., 0.], [0., 0., 0., 0.], [1., 1., 0., 0.]];
    let ac = array![[0., 1., 0., 0.], [1., 0., 0., 0.], [0., 0., 0., 0.], [0., 0., 0., 0.]];
    let ad = array![[0., 1., 0., 1.], [1., 0., 0., 0.], [0., 0., 0., 0.], [1., 0., 0., 0.]];
    let a = merge_adjacency(
        &[ab.clone(), ae.clone(), ac.clone(), ad.clone()],
        &[0.5, 0.25, 0.25, 1.0],
    )
    .unwrap();
    let expected = array![
        [0.0, 1.75, 0.5, 1.0],
        [1.75, 0.0, 0.5, 0.0],
        [0.5, 0.5, 0.0, 0.0],
        [1.25, 0.25, 0.0, 0.0]
    ];
    assert_eq!(a, expected);

    let ones = merge_adjacency(&[ab.clone(), ae.clone(), ac.clone(), ad.clone()], &[1.0; 4]).unwrap();
    assert_eq!(ones, &ab + &ae + &ac + &ad);
    let zero = Array2::<f64>::zeros((4, 4));
    assert_eq!(
        merge_adjacency(&[zero.clone(), zero.clone(), zero.clone(), zero.clone()], &[0.5; 4]).unwrap(),
        zero
    );

    assert_eq!(
        merge_adjacency(&[ab.clone(), Array2::zeros((3, 3))], &[1.0, 1.0]),
        Err(GraphError::ShapeMismatch((4, 4), (3, 3)))
    );
    assert_eq!(
        merge_adjacency(&[ab], &[1.0, 1.0]),
        Err(GraphError::WeightCount { expected: 1, got: 2 })
    );
}

#[test]
fn path_graph_one_layer_by_hand() {
    // 0 - 1 - 2 as boundary edges; the other edge types empty
    let mut ab = Array2::zeros((3, 3));
    for (i, j) in [(0, 1), (1, 0), (1, 2), (2, 1)] {
        ab[[i, j]] = 1.0;
    }
    let z = Array2::zeros((3, 3));
    let graph = spatex_core::cls_model::SpatialGraph {
        n_tokens: 3,
        n_nodes: 3,
        adjacency: [ab, z.clone(), z.clone(), z],
    };
    let mut ps = ParamStore::new(1);
    let gcn = Gcn::new(&mut ps, "g", 2, 1);
    let lin: &Linear = &gcn.layers[0];
    ps.set(lin.weight, array![[1.0, -1.0], [0.5, 2.0]]);
    ps.set(lin.bias.unwrap(), array![[0.1, -0.2]]);
    let x = array![[1.0, 0.0], [0.0, 1.0], [2.0, -1.0]];

    let mut t = Tape::new(&ps);
    let a = gcn.adjacency(&mut t, &graph);
    let h = t.constant(x.clone());
    let out = gcn.forward(&mut t, a, h);

    let s2 = 1.0 / 2f64.sqrt();
    let s3 = 1.0 / 3f64.sqrt();
    let a_hat = array![[0.5, s2 * s3, 0.0], [s2 * s3, 1.0 / 3.0, s2 * s3], [0.0, s2 * s3, 0.5]];
    let norm = normalize_adjacency(&graph.adjacency[0]);
    assert!((&norm - &a_hat).iter().all(|d| d.abs() < 1e-12));
    assert!((t.value(a) - &a_hat).iter().all(|d| d.abs() < 1e-12));

    let w = array![[1.0, -1.0], [0.5, 2.0]];
    let z = a_hat.dot(&x).dot(&w) + &array![[0.1, -0.2]];
    let expected = z.mapv(|v: f64| v.max(0.0));
    assert!((t.value(out) - &expected).iter().all(|d| d.abs() < 1e-12));
}

#[test]
fn self_loops_only_is_a_per_node_transform() {
    let z = Array2::zeros((3, 3));
    let graph = spatex_core::cls_model::SpatialGraph {
        n_tokens: 3,
        n_nodes: 3,
        adjacency: [z.clone(), z.clone(), z.clone(), z],
    };
    let mut ps = ParamStore::new(3);
    let gcn = Gcn::new(&mut ps, "g", 4, 1);
    let x = common::gradcheck::random_matrix(&mut ChaCha8Rng::seed_from_u64(2), 3, 4);
    let mut t = Tape::new(&ps);
    let a = gcn.adjacency(&mut t, &graph);
    let h = t.constant(x.clone());
    let out = gcn.forward(&mut t, a, h);
    let lin = gcn.layers[0].forward(&mut t, h);
    let direct = t.relu(lin);
    assert!((t.value(out) - t.value(direct)).iter().all(|d| d.abs() < 1e-12));
}
