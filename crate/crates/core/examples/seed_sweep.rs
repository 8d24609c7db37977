//! Sweeps base seeds over the builtin scenarios and reports how often the
//! standing/walking orderings hold.
//!
//! cargo run --release -p lumiloc-core --example seed_sweep -- [seeds] [sigma] [config.json]

use lumiloc_core::analysis::{run_experiment, standing_variance_split, ExperimentSettings};
use lumiloc_core::plan::PlanConfig;
use lumiloc_core::simulator::builtin_config;

fn main() {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let sigma: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let config = match args.next() {
        Some(path) => PlanConfig::load(path).expect("config"),
        None => builtin_config(),
    };
    let (mut std_rows, mut stab_rows, mut total) = (0, 0, 0);
    let (mut std_sets, mut stab_sets, mut both_sets) = (0, 0, 0);
    for base in (0..seeds).map(|i| i * 10) {
        let settings = ExperimentSettings { base_seed: base, noise_sigma: sigma, ..Default::default() };
        let report = run_experiment(&config, &settings).expect("experiment");
        let mut std_ok = 0;
        let mut stab_ok = 0;
        for r in &report.runs {
            let (w, s) = (r.summary.walking.unwrap(), r.summary.standing.unwrap());
            if s.std < w.std {
                std_ok += 1;
            }
            let (first, last) = standing_variance_split(&r.samples, r.walk_end, r.end_time, 30.0).unwrap();
            if last <= first {
                stab_ok += 1;
            }
            if base < 20 {
                println!(
                    "  seed {base} {} run{}: walk {:.3}±{:.3} stand {:.3}±{:.3} var first {:.4} last {:.4}",
                    r.scenario, r.run_index, w.mean, w.std, s.mean, s.std, first, last
                );
            }
        }
        let n = report.runs.len();
        total += n;
        std_rows += std_ok;
        stab_rows += stab_ok;
        std_sets += usize::from(std_ok == n);
        stab_sets += usize::from(stab_ok == n);
        both_sets += usize::from(std_ok == n && stab_ok == n);
        println!("base seed {base}: std ordering {std_ok}/{n}, stabilization {stab_ok}/{n}");
    }
    println!(
        "rows: std {std_rows}/{total}, stab {stab_rows}/{total}; full sets: std {std_sets}/{seeds}, stab {stab_sets}/{seeds}, both {both_sets}/{seeds}"
    );
}
