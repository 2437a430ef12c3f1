#[allow(dead_code)]
mod support;

use support::gradient_suite::{run_suite, SHAPES_PER_OP};

#[test]
fn every_op_matches_central_differences() {
    let results = run_suite();
    let mut failures = Vec::new();
    for r in &results {
        assert!(r.cases >= SHAPES_PER_OP, "{} has only {} cases", r.op, r.cases);
        if !r.passed() {
            failures.push(format!("{}: {:.3e}", r.op, r.worst));
        }
    }
    assert!(failures.is_empty(), "gradient mismatches: {failures:?}");
}
