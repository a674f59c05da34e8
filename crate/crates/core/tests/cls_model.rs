mod common;

use common::gradcheck::random_matrix;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spatex_core::cls_model::{
    build_graph, class_distribution, cls_loss, span_pool, ClsError, ClsHead, DualEncoder, EncoderDims, GraphInput,
};
use spatex_nn::{AdamW, AdamWConfig, Init, Linear, ParamStore, Tape};

fn dims() -> EncoderDims {
    EncoderDims {
        hidden: 8,
        heads: 2,
        layers: 1,
        ffn: 16,
        max_len: 16,
        window_overlap: 4,
    }
}

#[test]
fn uniform_logits_give_ln4() {
    let ps = ParamStore::new(0);
    let mut t = Tape::new(&ps);
    let logits = t.constant(Array2::zeros((5, 4)));
    let l = cls_loss(&mut t, logits, &[0, 1, 2, 3, 3]);
    assert!((t.scalar(l) - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn confident_correct_logits_give_zero_loss() {
    let ps = ParamStore::new(0);
    let mut t = Tape::new(&ps);
    let logits = t.constant(array![[60.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 60.0]]);
    let l = cls_loss(&mut t, logits, &[0, 3]);
    assert!(t.scalar(l) >= 0.0 && t.scalar(l) < 1e-20);
}

#[test]
fn loss_matches_hand_cross_entropy() {
    let ps = ParamStore::new(0);
    let mut t = Tape::new(&ps);
    let x = array![[1.0, 2.0, 0.5, -1.0], [0.0, 0.3, 0.0, 2.0]];
    let logits = t.constant(x.clone());
    let l = cls_loss(&mut t, logits, &[1, 2]);
    let ce = |row: usize, k: usize| {
        let z: f64 = x.row(row).iter().map(|v| v.exp()).sum();
        z.ln() - x[[row, k]]
    };
    assert!((t.scalar(l) - (ce(0, 1) + ce(1, 2)) / 2.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn distribution_is_a_probability_vector(seed in any::<u64>(), rows in 1usize..6) {
        let ps = ParamStore::new(0);
        let mut t = Tape::new(&ps);
        let x = random_matrix(&mut ChaCha8Rng::seed_from_u64(seed), rows, 4) * 20.0;
        let logits = t.constant(x);
        for p in class_distribution(&mut t, logits) {
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}

#[test]
fn span_pool_edge_cases() {
    let mut ps = ParamStore::new(1);
    let scorer = Linear::new(&mut ps, "s", 3, 1);
    let h = random_matrix(&mut ChaCha8Rng::seed_from_u64(3), 6, 3);
    let mut t = Tape::new(&ps);
    let hv = t.constant(h.clone());
    let one = span_pool(&mut t, hv, 2..3, &scorer).unwrap();
    assert_eq!(t.value(one).row(0), h.row(2));
    assert_eq!(span_pool(&mut t, hv, 2..2, &scorer).unwrap_err(), ClsError::EmptySpan);
    assert!(matches!(
        span_pool(&mut t, hv, 4..9, &scorer),
        Err(ClsError::SpanOutOfBounds { len: 6, .. })
    ));
}

#[test]
fn uniform_scorer_pools_to_the_mean() {
    let mut ps = ParamStore::new(1);
    let scorer = Linear::new(&mut ps, "s", 3, 1);
    ps.set(scorer.weight, Array2::zeros((3, 1)));
    let h = array![[1.0, 2.0, 3.0], [4.0, 0.0, -3.0], [1.0, 1.0, 1.0], [9.0, 9.0, 9.0]];
    let mut t = Tape::new(&ps);
    let hv = t.constant(h);
    let pooled = span_pool(&mut t, hv, 0..3, &scorer).unwrap();
    let expected = array![[2.0, 1.0, 1.0 / 3.0]];
    assert!((t.value(pooled) - &expected).iter().all(|d| d.abs() < 1e-12));
}

#[test]
fn cross_attention_shapes_and_bypass() {
    let mut ps = ParamStore::new(2);
    let enc = DualEncoder::new(&mut ps, &dims(), 20, 30, true);
    let mut t = Tape::new(&ps);
    let mlm: Vec<usize> = (0..10).collect();
    let s2s: Vec<usize> = (0..13).collect();
    let (eb, et) = enc.encode_dual(&mut t, &mlm, &s2s);
    assert_eq!(t.shape(eb), (10, 8));
    assert_eq!(t.shape(et), (13, 8));
    let (cb, ct) = enc.cross_attend(&mut t, eb, et);
    assert_eq!(t.shape(cb), (10, 8));
    assert_eq!(t.shape(ct), (13, 8));

    let mut ps = ParamStore::new(2);
    let off = DualEncoder::new(&mut ps, &dims(), 20, 30, false);
    let mut t = Tape::new(&ps);
    let (eb, et) = off.encode_dual(&mut t, &mlm, &s2s);
    let (cb, ct) = off.cross_attend(&mut t, eb, et);
    assert_eq!(t.value(cb), t.value(eb));
    assert_eq!(t.value(ct), t.value(et));
}

#[test]
fn single_key_attention_weights_are_one() {
    let mut ps = ParamStore::new(4);
    let attn = spatex_nn::MultiHeadAttention::new(&mut ps, "a", 8, 2);
    let mut t = Tape::new(&ps);
    let q = t.constant(random_matrix(&mut ChaCha8Rng::seed_from_u64(1), 5, 8));
    let m = t.constant(random_matrix(&mut ChaCha8Rng::seed_from_u64(2), 1, 8));
    let out = attn.forward(&mut t, q, m, None);
    for w in &out.weights {
        assert!(t.value(*w).iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }
    let first = t.value(out.output).row(0).to_owned();
    assert!(t.value(out.output).rows().into_iter().all(|r| r == first));
}

fn toy() -> (GraphInput, Array2<f64>) {
    let input = GraphInput {
        token_sentence: vec![0; 8],
        elements: vec![(0, 1), (2, 3), (4, 6), (6, 8)],
        heads: Some(vec![
            Some(1),
            None,
            Some(1),
            Some(4),
            Some(1),
            Some(4),
            Some(7),
            Some(4),
        ]),
        clusters: Some(Vec::new()),
    };
    (input, random_matrix(&mut ChaCha8Rng::seed_from_u64(9), 8, 8))
}

#[test]
fn swapping_slots_changes_the_input() {
    let mut ps = ParamStore::new(5);
    let head = ClsHead::new(&mut ps, 8, 2, true);
    let (g, words) = toy();
    let graph = build_graph(&g);
    let mut t = Tape::new(&ps);
    let w = t.constant(words);
    let ns = head.node_states(&mut t, w, &g.elements, &graph).unwrap();
    let a = head.triplet_input(&mut t, w, &g.elements, ns, [0, 1, 2]).unwrap();
    let b = head.triplet_input(&mut t, w, &g.elements, ns, [2, 1, 0]).unwrap();
    assert_eq!(t.shape(a), (1, 48));
    assert_ne!(t.value(a), t.value(b));
    assert_eq!(
        head.triplet_input(&mut t, w, &g.elements, ns, [0, 1, 9]).unwrap_err(),
        ClsError::MissingNode(9)
    );

    let mut ps = ParamStore::new(5);
    let plain = ClsHead::new(&mut ps, 8, 2, false);
    let mut t = Tape::new(&ps);
    let w = t.constant(toy().1);
    assert!(plain.node_states(&mut t, w, &g.elements, &graph).unwrap().is_none());
    let x = plain.triplet_input(&mut t, w, &g.elements, None, [0, 1, 2]).unwrap();
    assert_eq!(t.shape(x), (1, 24));
}

#[test]
fn classifier_overfits_ten_candidates() {
    let mut ps = ParamStore::new(6);
    let head = ClsHead::new(&mut ps, 8, 2, true);
    let (g, words) = toy();
    let graph = build_graph(&g);
    let words_id = ps.get_or_init("words", (8, 8), Init::Constant(0.0));
    ps.set(words_id, words);
    let triplets = [
        [0, 1, 2],
        [0, 1, 3],
        [0, 2, 3],
        [1, 2, 3],
        [3, 2, 1],
        [2, 1, 0],
        [3, 1, 0],
        [1, 0, 2],
        [2, 0, 3],
        [0, 3, 1],
    ];
    let labels = [0, 3, 1, 2, 3, 0, 1, 3, 2, 3];
    let mut opt = AdamW::new(AdamWConfig {
        lr: 1e-2,
        ..AdamWConfig::default()
    });
    let predict = |ps: &ParamStore| {
        let mut t = Tape::new(ps);
        let w = t.p(words_id);
        let ns = head.node_states(&mut t, w, &g.elements, &graph).unwrap();
        let rows: Vec<_> = triplets
            .iter()
            .map(|&tr| head.triplet_input(&mut t, w, &g.elements, ns, tr).unwrap())
            .collect();
        let x = t.concat_rows(&rows);
        let logits = head.classify(&mut t, x);
        let loss = cls_loss(&mut t, logits, &labels);
        let correct = t
            .value(logits)
            .rows()
            .into_iter()
            .zip(labels)
            .filter(|(r, l)| (0..4).all(|k| r[*l] >= r[k]))
            .count();
        (correct, t.backward(loss).into_params())
    };
    for _ in 0..200 {
        let (_, grads) = predict(&ps);
        opt.step(&mut ps, &grads);
    }
    assert_eq!(predict(&ps).0, 10);
}
