//! Simulates n agents drawn uniformly from [a, b] and prints the clusters.
//!
//! cargo run --release --example uniform_run -- 1000 0 10 42

use bconf::analysis::{extract_clusters, DEFAULT_MARGIN};
use bconf::bridge::DensitySpec;
use bconf::discrete::{simulate, SimOptions};
use bconf::model::canonicalize;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let get = |k: usize, d: f64| args.get(k).and_then(|s| s.parse().ok()).unwrap_or(d);
    let n = get(0, 1000.0) as usize;
    let (a, b) = (get(1, 0.0), get(2, 10.0));
    let seed = get(3, 42.0) as u64;
    let raw = DensitySpec::Uniform { a, b }.draw(n, seed);
    let s = canonicalize(&raw, None).unwrap();
    let start = std::time::Instant::now();
    let t = simulate(&s, &SimOptions::default()).unwrap();
    let el = start.elapsed();
    let report = extract_clusters(&t.terminal, 1e-6).classified(DEFAULT_MARGIN);
    for c in &report.clusters {
        println!("cluster at {:.6}  weight {}", c.position, c.weight);
    }
    println!("separations {:?}", report.separations);
    println!(
        "converged {} at t = {:.3}, {} events, {} steps, {:.2?}",
        t.converged,
        t.terminal.time,
        t.events.len(),
        t.stats.steps,
        el
    );
}
