mod common;

use common::{check_gradient, gradient_ops, GRAD_POINTS, GRAD_TOL};

#[test]
fn every_operation_matches_central_differences() {
    let mut failures = Vec::new();
    for (i, (name, build)) in gradient_ops().into_iter().enumerate() {
        let err = check_gradient(build, GRAD_POINTS, 100 + i as u64);
        if !(err < GRAD_TOL) {
            failures.push(format!("{name}: {err:e}"));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}
