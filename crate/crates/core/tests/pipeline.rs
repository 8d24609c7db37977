use std::fs;
use std::path::Path;

use lumiloc_core::analysis::{
    estimates_csv, run_experiment, summary_csv, table_csv, timeline_csv, write_experiment, ErrorSample,
    ExperimentSettings, Phase, PhaseStats, RunRecord, RunSummary,
};
use lumiloc_core::geometry::Point2;
use lumiloc_core::ingest::{replay_trace, write_trace, ConnectionId, MeasurementRecord, Pace};
use lumiloc_core::localizer::{DeviceEstimate, Measurement, PositionEstimate, SolveOptions, Tracker};
use lumiloc_core::plan::PlanConfig;
use lumiloc_core::simulator::{builtin_config, generate_trace};

const OPEN_PLAN: &str = r#"{
  "schema_version": 1,
  "anchor_height_m": 1.0,
  "device_height_m": 1.0,
  "rooms": [{"name": "hall", "polygon": [[0, 0], [10, 0], [10, 8], [0, 8]]}],
  "walls": [],
  "anchors": [
    {"id": "L1", "x": 1.0, "y": 1.0},
    {"id": "L2", "x": 9.0, "y": 1.5, "exponent": 3.0},
    {"id": "L3", "x": 5.0, "y": 7.0, "a_one_meter": -62.0}
  ],
  "scenarios": [
    {"name": "cross", "waypoints": [{"x": 2, "y": 2, "t": 0}, {"x": 8, "y": 3, "t": 12}], "dwell_s": 60},
    {"name": "loop", "waypoints": [{"x": 5, "y": 2, "t": 0}, {"x": 6, "y": 5, "t": 5}, {"x": 3, "y": 4, "t": 10}], "dwell_s": 50}
  ]
}"#;

fn builtin_trace(seed: u64) -> Vec<Measurement> {
    let config = builtin_config();
    let plan = config.floor_plan().unwrap();
    let scenario = &config.scenarios().unwrap()[2];
    generate_trace(&plan, &scenario.trajectory, 5.0, 2.0, seed, &config.device_id).unwrap().trace
}

fn builtin_tracker(window: usize) -> Tracker {
    Tracker::new(builtin_config().floor_plan().unwrap().anchors, SolveOptions::default(), window)
}

#[test]
fn file_replay_matches_in_process_solve() {
    let trace = builtin_trace(5);
    let direct = builtin_tracker(3).solve_trace(&trace).unwrap();

    let mut file = tempfile::NamedTempFile::new().unwrap();
    let records: Vec<MeasurementRecord> = trace.iter().map(MeasurementRecord::from).collect();
    write_trace(&mut file, &records).unwrap();

    let mut tracker = builtin_tracker(3);
    let mut replayed: Vec<DeviceEstimate> = Vec::new();
    let mut sink = |_: ConnectionId, r: MeasurementRecord| replayed.extend(tracker.push(&Measurement::from(r)).unwrap());
    let summary = replay_trace(file.path(), Pace::Unpaced, &mut sink).unwrap();
    replayed.extend(tracker.flush().unwrap());

    assert_eq!(summary.records as usize, trace.len());
    assert_eq!(estimates_csv(&replayed), estimates_csv(&direct));
    assert_eq!(replayed, direct);
}

#[test]
fn noise_free_open_plan_recovers_truth() {
    let config = PlanConfig::from_json(OPEN_PLAN).unwrap();
    let settings = ExperimentSettings { noise_sigma: 0.0, window: 1, repeats: 2, ..Default::default() };
    let report = run_experiment(&config, &settings).unwrap();
    assert_eq!(report.runs.len(), 4);
    for run in &report.runs {
        for phase in [run.summary.walking, run.summary.standing] {
            assert!(phase.unwrap().mean < 1e-6, "{}: {:?}", run.scenario, phase);
        }
    }
}

#[test]
fn window_lag_shows_up_only_while_moving() {
    let config = PlanConfig::from_json(OPEN_PLAN).unwrap();
    let settings = ExperimentSettings { noise_sigma: 0.0, repeats: 1, ..Default::default() };
    let report = run_experiment(&config, &settings).unwrap();
    for run in &report.runs {
        assert!(run.summary.walking.unwrap().mean > 0.1);
        // Once the window only holds standing readings the error is gone.
        let settled = run.samples.iter().filter(|s| s.timestamp >= run.walk_end + 15.0);
        assert!(settled.clone().count() > 5);
        assert!(settled.into_iter().all(|s| s.error < 1e-6));
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn experiment_output_is_deterministic() {
    let config = builtin_config();
    let settings = ExperimentSettings { base_seed: 42, ..Default::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_experiment(&run_experiment(&config, &settings).unwrap(), a.path()).unwrap();
    write_experiment(&run_experiment(&config, &settings).unwrap(), b.path()).unwrap();
    let (fa, fb) = (dir_bytes(a.path()), dir_bytes(b.path()));
    assert_eq!(fa.len(), 9 + 2);
    assert_eq!(fa, fb);

    let other = ExperimentSettings { base_seed: 43, ..Default::default() };
    let c = tempfile::tempdir().unwrap();
    write_experiment(&run_experiment(&config, &other).unwrap(), c.path()).unwrap();
    assert_ne!(dir_bytes(c.path()), fa);
}

#[test]
fn summary_table_has_three_scenarios_by_two_phases() {
    let report = run_experiment(&builtin_config(), &ExperimentSettings::default()).unwrap();
    let table = table_csv(&report.runs);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["a", "b", "c"]);
    for line in &lines[1..] {
        assert_eq!(line.split(',').filter(|f| !f.is_empty()).count(), 5);
    }
}

/// Walking means of the repeats of one scenario agree within three pooled
/// standard errors.
#[test]
fn repeats_are_consistent() {
    let config = builtin_config();
    for base_seed in [0, 100, 200] {
        let report = run_experiment(&config, &ExperimentSettings { base_seed, ..Default::default() }).unwrap();
        for name in ["a", "b", "c"] {
            let walking: Vec<PhaseStats> =
                report.runs.iter().filter(|r| r.scenario == name).map(|r| r.summary.walking.unwrap()).collect();
            let total: usize = walking.iter().map(|w| w.count).sum();
            let pooled_var = walking.iter().map(|w| w.count as f64 * w.std * w.std).sum::<f64>() / total as f64;
            let grand = walking.iter().map(|w| w.count as f64 * w.mean).sum::<f64>() / total as f64;
            for w in &walking {
                let se = (pooled_var / w.count as f64).sqrt();
                assert!((w.mean - grand).abs() <= 3.0 * se, "seed {base_seed} {name}: {w:?} vs {grand} (se {se})");
            }
        }
    }
}

fn golden(name: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

fn golden_runs() -> Vec<RunRecord> {
    let samples = |errors: &[(f64, f64, Phase, bool)]| -> Vec<ErrorSample> {
        errors.iter().map(|&(timestamp, error, phase, converged)| ErrorSample { timestamp, error, phase, converged }).collect()
    };
    let a = samples(&[
        (0.0, 1.5, Phase::Walking, true),
        (5.0, 2.25, Phase::Walking, true),
        (10.0, 0.5, Phase::Standing, false),
        (15.0, 1.0 / 3.0, Phase::Standing, true),
    ]);
    let b = samples(&[(0.0, 0.75, Phase::Walking, true), (5.0, 0.25, Phase::Walking, true)]);
    let record = |scenario: &str, run_index: usize, seed: u64, samples: Vec<ErrorSample>| {
        let summary = lumiloc_core::analysis::summarize(&samples, scenario, run_index);
        RunRecord { scenario: scenario.into(), run_index, seed, walk_end: 10.0, end_time: 15.0, estimates: vec![], samples, summary }
    };
    vec![record("a", 1, 7, a.clone()), record("a", 2, 8, a[..3].to_vec()), record("b", 1, 4294967296, b)]
}

#[test]
fn timeline_csv_matches_golden() {
    assert_eq!(timeline_csv(&golden_runs()[0].samples), golden("timeline.csv"));
}

#[test]
fn summary_csv_matches_golden() {
    assert_eq!(summary_csv(&golden_runs()), golden("summary.csv"));
}

#[test]
fn table_csv_matches_golden() {
    assert_eq!(table_csv(&golden_runs()), golden("table.csv"));
}

#[test]
fn estimates_csv_matches_golden() {
    let est = |t: f64, dev: &str, x: f64, y: f64, converged: bool| DeviceEstimate {
        device_id: dev.into(),
        estimate: PositionEstimate {
            position: Point2::new(x, y),
            timestamp: t,
            residual_norm: 0.125,
            iterations: 7,
            anchors_used: 3,
            converged,
        },
    };
    let rows = [est(0.0, "phone", 1.0, 2.5, true), est(5.0, "phone", 0.1, -3.75, false), est(7.5, "tag", 1e-7, 12.0, true)];
    assert_eq!(estimates_csv(&rows), golden("estimates.csv"));
}

#[test]
fn summary_marks_missing_phase_as_absent() {
    let runs = golden_runs();
    let RunSummary { walking, standing, .. } = &runs[2].summary;
    assert!(walking.is_some() && standing.is_none());
}
