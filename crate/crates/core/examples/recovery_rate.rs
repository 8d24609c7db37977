//! Noise-free recovery over random anchor layouts, split by whether the
//! target lies inside the anchors' convex hull.
//!
//! cargo run --release -p lumiloc-core --example recovery_rate -- [trials]

use lumiloc_core::geometry::{point_in_polygon, Point2};
use lumiloc_core::localizer::{solve_position, Anchor, SolveOptions, WindowSet};
use lumiloc_core::pathloss::PathLossParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hull(points: &[Point2]) -> Vec<Point2> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    let cross = |o: Point2, a: Point2, b: Point2| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let mut h: Vec<Point2> = Vec::new();
    for pass in [p.clone(), p.iter().rev().copied().collect()] {
        let start = h.len();
        for q in pass {
            while h.len() >= start + 2 && cross(h[h.len() - 2], h[h.len() - 1], q) <= 0.0 {
                h.pop();
            }
            h.push(q);
        }
        h.pop();
    }
    h
}

#[derive(Default)]
struct Tally {
    trials: usize,
    inaccurate: usize,
    slow: usize,
}

fn main() {
    let trials: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut inside, mut outside) = (Tally::default(), Tally::default());
    for _ in 0..trials {
        let k = rng.random_range(3..=6);
        let pts: Vec<Point2> =
            (0..k).map(|_| Point2::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0))).collect();
        let params = PathLossParams::new(-59.0, rng.random_range(2.0..6.0)).unwrap();
        let anchors: Vec<Anchor> =
            pts.iter().enumerate().map(|(i, &p)| Anchor::new(format!("L{i}"), p, params)).collect();
        let truth = Point2::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
        let mut w = WindowSet::new(1);
        for a in &anchors {
            w.push(&a.id, params.rssi_from_distance(a.position.distance(truth).max(1e-9)).unwrap());
        }
        let Ok(est) = solve_position(&anchors, &w, None, &SolveOptions::default(), 0.0) else {
            continue;
        };
        let t = if point_in_polygon(truth, &hull(&pts)) { &mut inside } else { &mut outside };
        t.trials += 1;
        t.inaccurate += usize::from(est.position.distance(truth) > 1e-6);
        t.slow += usize::from(est.iterations > 30);
    }
    for (name, t) in [("inside hull", inside), ("outside hull", outside)] {
        println!("{name}: {} trials, {} off by > 1e-6 m, {} over 30 iterations", t.trials, t.inaccurate, t.slow);
    }
}
