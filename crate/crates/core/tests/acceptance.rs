//! End-to-end acceptance criteria. Each test prints one PASS/FAIL line with
//! the measured values.

use std::sync::OnceLock;

use adcov::verify::{CheckResult, Suite};

fn suite() -> &'static Suite {
    static SUITE: OnceLock<Suite> = OnceLock::new();
    SUITE.get_or_init(Suite::new)
}

fn check(id: &str) {
    let result: CheckResult = suite().run_check(id).expect("known check");
    println!("{}", result.line());
    assert!(result.passed, "{}", result.line());
}

#[test]
fn c01_gradient_matches_finite_differences() {
    check("c01");
}

#[test]
fn c02_kl_and_locational_argmins_agree() {
    check("c02");
}

#[test]
fn c03_true_lambda_nonnegative_and_centroids_contained() {
    check("c03");
}

#[test]
fn c04_single_integrator_converges_to_minimizer() {
    check("c04");
}

#[test]
fn c05_position_and_velocity_errors_vanish() {
    check("c05");
}

#[test]
fn c06_lyapunov_descent() {
    check("c06");
}

#[test]
fn c07_filter_identity() {
    check("c07");
}

#[test]
fn c08_projection_keeps_lower_bound() {
    check("c08");
}

#[test]
fn c09_directed_graphs_rooted() {
    check("c09");
}

#[test]
fn c10_consensus_reduces_disagreement() {
    check("c10");
}

#[test]
fn c11_directed_faster_than_undirected() {
    check("c11");
}

#[test]
fn c12_deterministic_exports() {
    check("c12");
}
