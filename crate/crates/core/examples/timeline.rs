//! Prints error timelines of one experiment.
//!
//! cargo run --release -p lumiloc-core --example timeline -- [seed] [sigma] [config.json]

use lumiloc_core::analysis::{run_experiment, ExperimentSettings};
use lumiloc_core::plan::PlanConfig;
use lumiloc_core::simulator::builtin_config;

fn main() {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let sigma: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let config = match args.next() {
        Some(path) => PlanConfig::load(path).expect("config"),
        None => builtin_config(),
    };
    let settings = ExperimentSettings { base_seed: seed, noise_sigma: sigma, repeats: 1, ..Default::default() };
    let report = run_experiment(&config, &settings).expect("experiment");
    for r in &report.runs {
        println!("scenario {} (walk ends {:.1} s)", r.scenario, r.walk_end);
        for (s, e) in r.samples.iter().zip(&r.estimates) {
            println!(
                "  t={:6.1} err={:6.3} {:8} est=({:6.2},{:6.2})",
                s.timestamp,
                s.error,
                s.phase.as_str(),
                e.position.x,
                e.position.y
            );
        }
    }
}
