//! Noise-free localization error over a grid of subject positions.
//!
//! cargo run --release -p lumiloc-core --example bias_map -- [step] [config.json]

use lumiloc_core::localizer::{solve_position, SolveOptions, WindowSet};
use lumiloc_core::plan::PlanConfig;
use lumiloc_core::simulator::{builtin_config, expected_rssi};
use lumiloc_core::Point2;

fn main() {
    let mut args = std::env::args().skip(1);
    let step: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let config = match args.next() {
        Some(path) => PlanConfig::load(path).expect("config"),
        None => builtin_config(),
    };
    let plan = config.floor_plan().expect("plan");
    let (mut max_x, mut max_y) = (0.0f64, 0.0f64);
    for room in &plan.rooms {
        for p in &room.polygon {
            max_x = max_x.max(p.x);
            max_y = max_y.max(p.y);
        }
    }
    let mut y = max_y - step / 2.0;
    while y > 0.0 {
        let mut row = format!("{y:5.2} |");
        let mut x = step / 2.0;
        while x < max_x {
            let p = Point2::new(x, y);
            if plan.room_of(p).is_none() {
                row.push_str("   . ");
            } else {
                let mut windows = WindowSet::new(1);
                for (i, a) in plan.anchors.iter().enumerate() {
                    windows.push(&a.id, expected_rssi(&plan, i, p));
                }
                let est = solve_position(&plan.anchors, &windows, None, &SolveOptions::default(), 0.0).unwrap();
                row.push_str(&format!("{:4.1} ", est.position.distance(p)));
            }
            x += step;
        }
        println!("{row}");
        y -= step;
    }
}
