//! Trains AL, PL and APL on the toy corpus and prints the comparison table.
//!
//! Usage: `cargo run --release -p apl-mdd --example toy_ablation [seeds]`

use std::time::Instant;

use apl_mdd::ablation::{run_variants, toy_corpus, toy_model_config, toy_synth_config};
use apl_mdd::features::FbankConfig;
use apl_mdd::model::Variant;
use apl_mdd::scoring::render_table;

fn main() -> apl_mdd::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let variants = [Variant::Al, Variant::Pl, Variant::Apl];
    let mut rows = Vec::new();
    for seed in 0..seeds {
        let (inventory, splits) = toy_corpus(&toy_synth_config(), seed)?;
        let base = toy_model_config(&inventory, seed);
        let start = Instant::now();
        let runs = run_variants(&base, &variants, &inventory, &splits, &FbankConfig::default(), |_, _| {})?;
        eprintln!("seed {seed}: {:.1}s", start.elapsed().as_secs_f64());
        for r in runs {
            rows.push((format!("{}/{}", r.variant, seed), r.report.aggregate));
        }
    }
    print!("{}", render_table(&rows));
    Ok(())
}
