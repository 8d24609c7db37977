use lumiloc_core::geometry::Point2;
use lumiloc_core::ingest::{write_trace, MeasurementRecord};
use lumiloc_core::plan::{Material, PlanConfig, WallSegment};
use lumiloc_core::simulator::{builtin_config, expected_rssi, generate_trace};
use proptest::prelude::*;

fn material() -> impl Strategy<Value = Material> {
    prop::sample::select(Material::ALL.to_vec())
}

fn point() -> impl Strategy<Value = Point2> {
    (0.2..8.8f64, 0.2..7.8f64).prop_map(|(x, y)| Point2::new(x, y))
}

proptest! {
    #[test]
    fn extra_wall_never_raises_rssi(
        device in point(),
        p1 in point(),
        p2 in point(),
        m in material(),
        thickness in 0.05..0.5f64,
        anchor in 0usize..3,
    ) {
        prop_assume!(p1.distance(p2) > 1e-3);
        let mut plan = builtin_config().floor_plan().unwrap();
        let before = expected_rssi(&plan, anchor, device);
        plan.walls.push(WallSegment { p1, p2, material: m, thickness });
        let after = expected_rssi(&plan, anchor, device);
        prop_assert!(after <= before);
        let crossed = plan.wall_attenuation(plan.anchors[anchor].position, device)
            > builtin_config().floor_plan().unwrap().wall_attenuation(plan.anchors[anchor].position, device);
        if crossed {
            prop_assert!(after < before);
        }
    }
}

#[test]
fn builtin_config_round_trips_through_json() {
    let config = builtin_config();
    let again = PlanConfig::from_json(&config.to_json()).unwrap();
    assert_eq!(again, config);
}

#[test]
fn unsupported_config_version_is_rejected() {
    let text = builtin_config().to_json().replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
    assert!(PlanConfig::from_json(&text).is_err());
}

fn trace_bytes(seed: u64, scenario: usize) -> Vec<u8> {
    let config = builtin_config();
    let plan = config.floor_plan().unwrap();
    let s = &config.scenarios().unwrap()[scenario];
    let run = generate_trace(&plan, &s.trajectory, 5.0, 2.0, seed, "phone").unwrap();
    let records: Vec<MeasurementRecord> = run.trace.iter().map(MeasurementRecord::from).collect();
    let mut out = Vec::new();
    write_trace(&mut out, &records).unwrap();
    out
}

#[test]
fn seeded_trace_files_are_byte_identical() {
    for scenario in 0..3 {
        assert_eq!(trace_bytes(9, scenario), trace_bytes(9, scenario));
        assert_ne!(trace_bytes(9, scenario), trace_bytes(10, scenario));
    }
}

#[test]
fn every_anchor_reports_every_five_seconds() {
    let config = builtin_config();
    let plan = config.floor_plan().unwrap();
    for s in config.scenarios().unwrap() {
        let run = generate_trace(&plan, &s.trajectory, 5.0, 2.0, 1, "phone").unwrap();
        let ticks = run.ground_truth.len();
        assert_eq!(run.trace.len(), ticks * plan.anchors.len());
        for (k, chunk) in run.trace.chunks(plan.anchors.len()).enumerate() {
            assert!(chunk.iter().all(|m| m.timestamp == k as f64 * 5.0));
            let ids: Vec<&str> = chunk.iter().map(|m| m.anchor_id.as_str()).collect();
            assert_eq!(ids, ["L1", "L2", "L3"]);
        }
        assert_eq!(run.ground_truth.first().unwrap().1, s.trajectory.start());
        assert_eq!(run.ground_truth.last().unwrap().1, s.trajectory.finish());
        assert!((50.0..=70.0).contains(&s.trajectory.terminal_dwell()));
    }
}
