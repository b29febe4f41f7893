mod common;

use common::grad::{suite, TOL};

#[test]
fn every_component_matches_finite_differences() {
    let mut failed = Vec::new();
    for (name, result) in suite(20) {
        match result {
            Ok(err) if err < TOL => {}
            other => failed.push(format!("{name}: {other:?}")),
        }
    }
    assert!(failed.is_empty(), "{failed:#?}");
}
