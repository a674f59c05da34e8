mod common;

use common::gradcheck::random_matrix;
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spatex_core::rfx::{batch_rfx, invert_sentence, rfx_loss, AntonymLexicon, NotInvertible, RfxError};
use spatex_nn::{ParamStore, Tape};

fn loss_of(a: Array2<f64>, b: Array2<f64>) -> Result<f64, RfxError> {
    let ps = ParamStore::new(0);
    let mut t = Tape::new(&ps);
    let (a, b) = (t.constant(a), t.constant(b));
    let l = rfx_loss(&mut t, a, b)?;
    Ok(t.scalar(l))
}

#[test]
fn loss_bounds_over_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let a = random_matrix(&mut rng, 4, 6);
        let b = random_matrix(&mut rng, 7, 6);
        let l = loss_of(a, b).unwrap();
        assert!((0.0..=2.0).contains(&l), "{l}");
    }
}

#[test]
fn identical_and_antipodal_inputs() {
    let a = random_matrix(&mut ChaCha8Rng::seed_from_u64(2), 5, 6);
    assert!(loss_of(a.clone(), a.clone()).unwrap().abs() < 1e-12);
    assert!((loss_of(a.clone(), -a.clone()).unwrap() - 2.0).abs() < 1e-12);
    assert!(matches!(loss_of(a, Array2::zeros((3, 6))), Err(RfxError::ZeroNorm)));
}

#[test]
fn batch_mean_and_empty_batch() {
    let ps = ParamStore::new(0);
    let mut t = Tape::new(&ps);
    let a = t.constant(Array2::from_elem((2, 3), 1.0));
    let b = t.constant(Array2::from_elem((2, 3), -1.0));
    let c = t.constant(Array2::from_shape_vec((1, 3), vec![1.0, 0.0, 0.0]).unwrap());
    let l1 = rfx_loss(&mut t, a, a).unwrap();
    let l2 = rfx_loss(&mut t, a, b).unwrap();
    let l3 = rfx_loss(&mut t, a, c).unwrap();
    let m = batch_rfx(&mut t, &[l1, l2, l3]);
    let expected = (0.0 + 2.0 + (1.0 - 1.0 / 3f64.sqrt())) / 3.0;
    assert!((t.scalar(m) - expected).abs() < 1e-12);
    let empty = batch_rfx(&mut t, &[]);
    assert_eq!(t.scalar(empty), 0.0);
}

fn lex() -> AntonymLexicon {
    AntonymLexicon::builtin()
}

#[test]
fn books_in_boxes() {
    let words = ["The", "book", "is", "in", "the", "box", "."];
    let inv = invert_sentence(&words, (1, 2), (3, 4), (5, 6), &lex(), 0).unwrap();
    assert_eq!(inv.tokens, ["The", "box", "is", "out", "of", "the", "book", "."]);
    assert_eq!(inv.tm, (1, 2));
    assert_eq!(inv.tr, (3, 5));
    assert_eq!(inv.lg, (6, 7));
    assert_eq!(inv.antonym, "out of");
}

#[test]
fn capitalised_first_word_moves() {
    let l = AntonymLexicon::parse("under\tabove\nnear\tfar from").unwrap();
    let words = ["Cats", "sleep", "under", "tables"];
    let inv = invert_sentence(&words, (0, 1), (2, 3), (3, 4), &l, 0).unwrap();
    assert_eq!(inv.tokens, ["Tables", "sleep", "above", "cats"]);
    let acronym = ["NASA", "works", "near", "rivers"];
    let inv = invert_sentence(&acronym, (0, 1), (2, 3), (3, 4), &l, 0).unwrap();
    assert_eq!(inv.tokens, ["Rivers", "works", "far", "from", "NASA"]);
}

#[test]
fn unknown_trigger_is_not_invertible() {
    let words = ["men", "biking", "fields"];
    assert_eq!(
        invert_sentence(&words, (0, 1), (1, 2), (2, 3), &lex(), 0),
        Err(NotInvertible::NoAntonym("biking".into()))
    );
    assert_eq!(
        invert_sentence(&words, (0, 2), (1, 2), (2, 3), &lex(), 0),
        Err(NotInvertible::Overlap)
    );
}

#[test]
fn antonym_choice_is_seeded() {
    let l = AntonymLexicon::parse("near\tfar from\taway from\tdistant from").unwrap();
    let words = ["a", "near", "b"];
    let pick = |seed| {
        invert_sentence(&words, (0, 1), (1, 2), (2, 3), &l, seed)
            .unwrap()
            .antonym
    };
    assert_eq!(pick(5), pick(5));
    let distinct: std::collections::BTreeSet<String> = (0..64).map(pick).collect();
    assert_eq!(distinct.len(), 3);
}

proptest! {
    /// Swapping twice with a self-inverse lexicon gives the sentence back,
    /// and the token count changes only by the antonym length difference.
    #[test]
    fn inversion_is_an_involution(
        words in prop::collection::vec("[a-z]{1,6}", 3..12),
        cut in prop::array::uniform3(0usize..100),
    ) {
        let n = words.len();
        let mut points = [cut[0] % n, cut[1] % n, cut[2] % n];
        points.sort_unstable();
        prop_assume!(points[0] < points[1] && points[1] < points[2]);
        let tm = (points[0], points[0] + 1);
        let tr = (points[1], points[1] + 1);
        let lg = (points[2], points[2] + 1);
        let mut words = words;
        words[tr.0] = "in".to_string();
        let l = AntonymLexicon::parse("in\tout of\nout of\tin").unwrap();
        let refs: Vec<&str> = words.iter().map(String::as_str).collect();
        let once = invert_sentence(&refs, tm, tr, lg, &l, 3).unwrap();
        prop_assert_eq!(once.tokens.len(), n + 1);
        let refs2: Vec<&str> = once.tokens.iter().map(String::as_str).collect();
        let twice = invert_sentence(&refs2, once.tm, once.tr, once.lg, &l, 4).unwrap();
        prop_assert_eq!(twice.tokens, words);
    }
}
