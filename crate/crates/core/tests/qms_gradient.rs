//! Independent finite-difference check of the policy gradient plus
//! long-run MS normalization.

#[path = "common/toy_graph.rs"]
mod toy_graph;

use toy_graph::{max_gradient_error, normalization_drift};

#[test]
fn analytic_gradient_matches_central_differences() {
    let worst = max_gradient_error(1e-5);
    assert!(worst < 1e-6, "max abs error {worst:e}");
}

#[test]
fn ms_groups_stay_normalized_over_many_updates() {
    let (worst, positive) = normalization_drift(1000);
    assert!(worst < 1e-9, "group sum error {worst:e}");
    assert!(positive);
}
