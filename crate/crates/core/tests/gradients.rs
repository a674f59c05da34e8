mod common;

use common::gradcheck;

const TOLERANCE: f64 = 1e-4;

#[test]
fn cross_attention_gradients() {
    let err = gradcheck::cross_attention_error();
    assert!(err < TOLERANCE, "relative error {err}");
}

#[test]
fn span_pool_gradients() {
    let err = gradcheck::span_pool_error();
    assert!(err < TOLERANCE, "relative error {err}");
}

#[test]
fn gcn_gradients() {
    let err = gradcheck::gcn_error();
    assert!(err < TOLERANCE, "relative error {err}");
}

#[test]
fn classifier_gradients() {
    let err = gradcheck::classifier_error();
    assert!(err < TOLERANCE, "relative error {err}");
}
