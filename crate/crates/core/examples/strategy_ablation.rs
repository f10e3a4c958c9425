//! Train every sampling strategy over several seeds on identical data and
//! print the median retrieval metrics.
//!
//! cargo run --release --example strategy_ablation -- [seeds]

use crossview::ablate::run_ablate;
use crossview::config::parse_config;

fn main() -> crossview::Result<()> {
    let seeds = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/ablation.cfg");
    let cfg = parse_config(Some(&path), &[])?;
    let table = run_ablate(&cfg, seeds)?;
    print!("{}", table.to_csv());
    for row in &table.rows {
        println!("{:<13} per-seed R@1 {:?}", row.strategy, row.per_seed_r1);
    }
    Ok(())
}
