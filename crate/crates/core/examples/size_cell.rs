//! Runs a single (n, p) cell of the size study and prints the rejection rows.
//!
//! cargo run --release -p svydb --example size_cell -- 200 0.01 100 [min|1se] [random|half]
//!
//! The λ rule and tie handling default to those of the study.

use std::time::Instant;

use svydb::lasso::{AucTies, LambdaRule};
use svydb::simulation::{run_study, LambdaPolicy, SimulationConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map_or(200, |s| s.parse().unwrap());
    let ratio: f64 = args.get(2).map_or(0.01, |s| s.parse().unwrap());
    let reps: usize = args.get(3).map_or(100, |s| s.parse().unwrap());
    let rule = match args.get(4).map(String::as_str) {
        Some("min") => LambdaRule::Min,
        _ => LambdaRule::OneSe,
    };
    let ties = match args.get(5).map(String::as_str) {
        Some("half") => AucTies::Half,
        _ => AucTies::Random,
    };
    let config = SimulationConfig {
        lambda_policy: LambdaPolicy::CrossValidated {
            folds: 10,
            grid_size: 100,
            rule,
            ties,
        },
        designs: vec![vec![n / 4; 4]],
        p_over_n: vec![ratio],
        replications: reps,
        ..SimulationConfig::default()
    };
    let start = Instant::now();
    let report = run_study(&config).expect("study failed");
    eprintln!("{:.2?} for {reps} replications", start.elapsed());
    for r in &report.rows {
        println!(
            "n={} p={} {:5} {:5} rej={:4} fail={:3} freq={:.3} {:?} {:?}",
            r.n,
            r.p,
            r.hypothesis.label(),
            r.test.label(),
            r.rejections,
            r.failures,
            r.frequency,
            r.failure_kinds,
            r.warnings
        );
    }
}
