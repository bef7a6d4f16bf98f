mod common;

use common::{oracle_suite, ORACLE_INSTANCES, ORACLE_TOL};

#[test]
fn kernels_match_naive_loops() {
    for (name, err) in oracle_suite(ORACLE_INSTANCES, 17) {
        assert!(err <= ORACLE_TOL, "{name}: max deviation {err:e}");
    }
}

#[test]
fn kernels_match_naive_loops_on_fresh_instances() {
    for (name, err) in oracle_suite(ORACLE_INSTANCES, 9001) {
        assert!(err <= ORACLE_TOL, "{name}: max deviation {err:e}");
    }
}
