//! Prints one PASS/FAIL line per acceptance criterion and fails if any
//! criterion fails.

mod common;

use common::criteria::{self, Outcome};

#[test]
fn acceptance() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("criterion {n} [{name}]: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "ctc oracle", criteria::ctc_oracle(700));
    report(2, "gradient suite", criteria::gradient_suite(20));
    report(3, "beam optimality", criteria::beam_optimality(300));
    report(4, "alignment oracle", criteria::alignment_oracle(1500));
    report(5, "metric identities", criteria::metric_identities(2000));
    report(6, "worked examples", criteria::hand_examples());
    let (outcome, means) = criteria::toy_ablation(3);
    for m in &means {
        let seeds: Vec<String> = m.per_seed.iter().map(|(f, a)| format!("F {f:.4} acc {a:.4}")).collect();
        println!("    {:<4} {}", m.variant.as_str(), seeds.join(" | "));
    }
    report(7, "toy ablation", outcome);
    report(8, "determinism and persistence", criteria::determinism());
    report(9, "feature contract", criteria::feature_contract());
    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| format!("{} ({})", r.0, r.1)).collect();
    assert!(failed.is_empty(), "failing criteria: {}", failed.join(", "));
}
