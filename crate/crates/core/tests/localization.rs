use lumiloc_core::geometry::Point2;
use lumiloc_core::localizer::{
    range_jacobian, range_residuals, solve_position, Anchor, LocalizeError, SolveOptions, Tracker, WindowSet,
};
use lumiloc_core::pathloss::PathLossParams;
use lumiloc_core::simulator::{generate_trace, Trajectory, Waypoint};
use lumiloc_core::{plan::PlanConfig, simulator::builtin_config};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn anchors_at(points: &[(f64, f64)], params: PathLossParams) -> Vec<Anchor> {
    points.iter().enumerate().map(|(i, &(x, y))| Anchor::new(format!("L{}", i + 1), Point2::new(x, y), params)).collect()
}

/// Windows holding the exact RSSI each anchor would see at `p`, plus an
/// optional per-anchor offset in dB.
fn windows_for(anchors: &[Anchor], p: Point2, offsets_db: &[f64]) -> WindowSet {
    let mut w = WindowSet::new(1);
    for (i, a) in anchors.iter().enumerate() {
        let rssi = a.params.rssi_from_distance(a.position.distance(p)).unwrap();
        w.push(&a.id, rssi + offsets_db.get(i).copied().unwrap_or(0.0));
    }
    w
}

fn solve_at(anchors: &[Anchor], p: Point2, offsets_db: &[f64]) -> Point2 {
    solve_position(anchors, &windows_for(anchors, p, offsets_db), None, &SolveOptions::default(), 0.0)
        .unwrap()
        .position
}

#[test]
fn three_anchor_reference_point() {
    let anchors = anchors_at(&[(0.0, 0.0), (4.0, 0.0), (0.0, 3.0)], PathLossParams::default());
    let est = solve_position(&anchors, &windows_for(&anchors, Point2::new(1.0, 1.0), &[]), None, &Default::default(), 0.0)
        .unwrap();
    assert!(est.position.distance(Point2::new(1.0, 1.0)) < 1e-6);
    assert!(est.residual_norm < 1e-6);
    assert!(est.converged);
    assert_eq!(est.anchors_used, 3);
}

#[test]
fn rectangle_center() {
    let anchors = anchors_at(&[(0.0, 0.0), (4.0, 0.0), (0.0, 3.0), (4.0, 3.0)], PathLossParams::default());
    assert!(solve_at(&anchors, Point2::new(2.0, 1.5), &[]).distance(Point2::new(2.0, 1.5)) < 1e-6);
}

fn grid_optimum(anchors: &[Point2], ranges: &[f64], step: f64) -> Point2 {
    let (mut lo, mut hi) = (anchors[0], anchors[0]);
    for a in anchors {
        lo = Point2::new(lo.x.min(a.x), lo.y.min(a.y));
        hi = Point2::new(hi.x.max(a.x), hi.y.max(a.y));
    }
    let nx = ((hi.x - lo.x) / step).round() as usize;
    let ny = ((hi.y - lo.y) / step).round() as usize;
    let mut best = (f64::INFINITY, lo);
    for i in 0..=nx {
        for j in 0..=ny {
            let p = Point2::new(lo.x + i as f64 * step, lo.y + j as f64 * step);
            let cost: f64 = anchors.iter().zip(ranges).map(|(a, d)| (p.distance(*a) - d).powi(2)).sum();
            if cost < best.0 {
                best = (cost, p);
            }
        }
    }
    best.1
}

#[test]
fn one_db_perturbation_matches_grid_search() {
    let anchors = anchors_at(&[(0.0, 0.0), (4.0, 0.0), (0.0, 3.0)], PathLossParams::default());
    let truth = Point2::new(1.0, 1.0);
    for k in 0..3 {
        let mut offsets = [0.0; 3];
        offsets[k] = 1.0;
        let est = solve_at(&anchors, truth, &offsets);
        let windows = windows_for(&anchors, truth, &offsets);
        let ranges: Vec<f64> = anchors
            .iter()
            .map(|a| a.params.distance_from_rssi(windows.get(&a.id).unwrap().values().next().unwrap()).unwrap())
            .collect();
        let positions: Vec<Point2> = anchors.iter().map(|a| a.position).collect();
        let grid = grid_optimum(&positions, &ranges, 0.01);
        assert!(est.distance(grid) < 0.02, "anchor {k}: lm {est:?} grid {grid:?}");
        assert!(est.distance(truth) > 1e-3 && est.distance(truth) < 1.0);
    }
}

#[test]
fn jacobian_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-6;
    for _ in 0..100 {
        let anchors: Vec<Point2> =
            (0..4).map(|_| Point2::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0))).collect();
        let ranges = vec![0.0; 4];
        let p = Point2::new(rng.random_range(-2.0..12.0), rng.random_range(-2.0..12.0));
        let j = range_jacobian(&anchors, p);
        for (col, dp) in [Point2::new(h, 0.0), Point2::new(0.0, h)].into_iter().enumerate() {
            let fd = (range_residuals(&anchors, &ranges, p + dp) - range_residuals(&anchors, &ranges, p - dp)) / (2.0 * h);
            for row in 0..anchors.len() {
                let (a, n) = (j[(row, col)], fd[row]);
                assert!((a - n).abs() <= 1e-5 * a.abs().max(1e-3), "row {row} col {col}: {a} vs {n}");
            }
        }
    }
}

const BASE: [(f64, f64); 4] = [(0.5, 0.5), (6.0, 1.0), (2.0, 5.5), (7.0, 6.5)];

#[test]
fn translation_equivariance() {
    let params = PathLossParams::new(-62.0, 3.0).unwrap();
    let truth = Point2::new(3.1, 2.7);
    let offsets = [0.8, -1.3, 0.4, 1.1];
    let base = anchors_at(&BASE, params);
    for shift in [Point2::new(5.0, -3.0), Point2::new(-120.5, 44.25)] {
        let moved: Vec<(f64, f64)> = BASE.iter().map(|&(x, y)| (x + shift.x, y + shift.y)).collect();
        let moved = anchors_at(&moved, params);
        for offs in [&[][..], &offsets[..]] {
            let a = solve_at(&base, truth, offs);
            let b = solve_at(&moved, truth + shift, offs);
            assert!((b - shift).distance(a) < 1e-6, "{a:?} {b:?}");
        }
    }
}

#[test]
fn rotation_equivariance() {
    let params = PathLossParams::new(-62.0, 3.0).unwrap();
    let truth = Point2::new(3.1, 2.7);
    let offsets = [0.8, -1.3, 0.4, 1.1];
    let base = anchors_at(&BASE, params);
    for (pivot, angle) in [(Point2::new(0.0, 0.0), 0.7), (Point2::new(10.0, -4.0), 2.9), (truth, -1.2)] {
        let turned: Vec<(f64, f64)> = BASE
            .iter()
            .map(|&(x, y)| {
                let p = Point2::new(x, y).rotate_about(pivot, angle);
                (p.x, p.y)
            })
            .collect();
        let turned = anchors_at(&turned, params);
        for offs in [&[][..], &offsets[..]] {
            let a = solve_at(&base, truth, offs);
            let b = solve_at(&turned, truth.rotate_about(pivot, angle), offs);
            assert!(a.rotate_about(pivot, angle).distance(b) < 1e-6, "{a:?} {b:?}");
        }
    }
}

#[test]
fn collinear_anchors_reach_a_mirror_optimum() {
    let anchors = anchors_at(&[(0.0, 0.0), (3.0, 0.0), (7.0, 0.0)], PathLossParams::default());
    let truth = Point2::new(2.0, 1.5);
    let mirror = Point2::new(2.0, -1.5);
    let est = solve_position(&anchors, &windows_for(&anchors, truth, &[]), None, &Default::default(), 0.0).unwrap();
    assert!(est.residual_norm.powi(2) < 1e-10);
    assert!(est.position.distance(truth).min(est.position.distance(mirror)) < 1e-6);
    // An explicit guess below the line selects the other optimum.
    let below = solve_position(
        &anchors,
        &windows_for(&anchors, truth, &[]),
        Some(Point2::new(3.0, -0.5)),
        &Default::default(),
        0.0,
    )
    .unwrap();
    assert!(below.position.distance(mirror) < 1e-6);
}

#[test]
fn fewer_than_three_anchors_with_data() {
    let anchors = anchors_at(&[(0.0, 0.0), (4.0, 0.0), (0.0, 3.0)], PathLossParams::default());
    let mut w = WindowSet::new(3);
    w.push("L1", -60.0);
    w.push("L2", -65.0);
    let err = solve_position(&anchors, &w, None, &Default::default(), 0.0).unwrap_err();
    assert!(matches!(err, LocalizeError::InsufficientAnchors { have: 2 }));
}

fn stationary_positions(config: &PlanConfig, window: usize, seed: u64) -> Vec<Point2> {
    let plan = config.floor_plan().unwrap();
    let spot = Point2::new(5.5, 2.0);
    let trajectory = Trajectory::new(vec![Waypoint { position: spot, time: 0.0 }], 300.0).unwrap();
    let run = generate_trace(&plan, &trajectory, 5.0, 2.0, seed, "phone").unwrap();
    let tracker = Tracker::new(plan.anchors.clone(), SolveOptions::default(), window);
    tracker.solve_trace(&run.trace).unwrap().into_iter().map(|e| e.estimate.position).collect()
}

fn spread(points: &[Point2]) -> f64 {
    let n = points.len() as f64;
    let mean = points.iter().fold(Point2::new(0.0, 0.0), |acc, &p| acc + p) * (1.0 / n);
    points.iter().map(|&p| (p - mean).norm().powi(2)).sum::<f64>() / n
}

#[test]
fn larger_window_reduces_estimate_variance() {
    let config = builtin_config();
    for seed in [1, 2, 3] {
        let w1 = stationary_positions(&config, 1, seed);
        let w3 = stationary_positions(&config, 3, seed);
        assert_eq!(w1.len(), 61);
        assert!(spread(&w3) < spread(&w1), "seed {seed}: {} vs {}", spread(&w3), spread(&w1));
    }
}

fn anchor_set() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0..10.0f64, 0.0..10.0f64), 3..=6).prop_filter("well spread", |pts| {
        // Smallest eigenvalue of the anchor scatter matrix.
        let n = pts.len() as f64;
        let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x / n, b + y / n));
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for &(x, y) in pts {
            sxx += (x - mx).powi(2) / n;
            syy += (y - my).powi(2) / n;
            sxy += (x - mx) * (y - my) / n;
        }
        let tr = sxx + syy;
        let det = sxx * syy - sxy * sxy;
        tr / 2.0 - ((tr / 2.0).powi(2) - det).max(0.0).sqrt() > 0.25
    })
}

proptest! {
    #[test]
    fn exact_rssi_is_recovered_inside_hull(
        points in anchor_set(),
        weights in prop::collection::vec(0.01..1.0f64, 6),
        n in 2.0..6.0f64,
    ) {
        let total: f64 = weights[..points.len()].iter().sum();
        let truth = points.iter().zip(&weights).fold(Point2::new(0.0, 0.0), |acc, (&(x, y), w)| {
            acc + Point2::new(x, y) * (w / total)
        });
        let anchors = anchors_at(&points, PathLossParams::new(-59.0, n).unwrap());
        prop_assume!(anchors.iter().all(|a| a.position.distance(truth) > 1e-3));
        let est = solve_position(&anchors, &windows_for(&anchors, truth, &[]), None, &SolveOptions::default(), 0.0).unwrap();
        prop_assert!(est.position.distance(truth) < 1e-6, "{:?} vs {:?}", est.position, truth);
        prop_assert!(est.residual_norm < 1e-6);
        prop_assert!(est.iterations <= 30);
    }

    #[test]
    fn exact_rssi_is_recovered_anywhere(points in anchor_set(), x in 0.0..10.0f64, y in 0.0..10.0f64, n in 2.0..6.0f64) {
        let anchors = anchors_at(&points, PathLossParams::new(-59.0, n).unwrap());
        let truth = Point2::new(x, y);
        prop_assume!(anchors.iter().all(|a| a.position.distance(truth) > 1e-3));
        let est = solve_position(&anchors, &windows_for(&anchors, truth, &[]), None, &SolveOptions::default(), 0.0).unwrap();
        prop_assert!(est.position.distance(truth) < 1e-6, "{:?} vs {:?}", est.position, truth);
    }
}
