//! Error scoring against ground truth and walking/standing summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::Point2;
use crate::localizer::{DeviceEstimate, LocalizeError, PositionEstimate, SolveOptions, Tracker, DEFAULT_WINDOW};
use crate::plan::{PlanConfig, PlanError};
use crate::simulator::{generate_trace, SimError, DEFAULT_NOISE_SIGMA_DB, DEFAULT_SAMPLE_PERIOD_S};

/// Header of the per-run error timeline CSV.
pub const TIMELINE_HEADER: &str = "timestamp,error_m,phase,converged";
/// Header of the per-run summary CSV.
pub const SUMMARY_HEADER: &str = "scenario,run,seed,walking_mean_m,walking_std_m,standing_mean_m,standing_std_m";
/// Header of the per-scenario table (averages over runs).
pub const TABLE_HEADER: &str = "scenario,walking_mean_m,standing_mean_m,walking_std_m,standing_std_m";
/// Header of the position estimate CSV written by `solve`, `replay` and `serve`.
pub const ESTIMATES_HEADER: &str = "timestamp,device_id,x,y,residual_norm,iterations,anchors_used,converged";

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("estimate count {estimates} does not match ground truth count {truth}")]
    Length { estimates: usize, truth: usize },
    #[error("tick {index}: estimate at {estimate} s, ground truth at {truth} s")]
    Alignment { index: usize, estimate: f64, truth: f64 },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Localize(#[from] LocalizeError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Walking,
    Standing,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Walking => "walking",
            Phase::Standing => "standing",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSample {
    pub timestamp: f64,
    /// Distance between estimate and truth, meters.
    pub error: f64,
    pub phase: Phase,
    pub converged: bool,
}

/// Per-tick error; ticks at or after `walk_end` are standing.
pub fn score_run(
    estimates: &[PositionEstimate],
    ground_truth: &[(f64, Point2)],
    walk_end: f64,
) -> Result<Vec<ErrorSample>, AnalysisError> {
    if estimates.len() != ground_truth.len() {
        return Err(AnalysisError::Length { estimates: estimates.len(), truth: ground_truth.len() });
    }
    estimates
        .iter()
        .zip(ground_truth)
        .enumerate()
        .map(|(index, (est, &(t, truth)))| {
            if (est.timestamp - t).abs() > 1e-9 {
                return Err(AnalysisError::Alignment { index, estimate: est.timestamp, truth: t });
            }
            Ok(ErrorSample {
                timestamp: t,
                error: est.position.distance(truth),
                phase: if t < walk_end { Phase::Walking } else { Phase::Standing },
                converged: est.converged,
            })
        })
        .collect()
}

/// Mean and population standard deviation of one phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

impl PhaseStats {
    pub fn of(values: &[f64]) -> Option<PhaseStats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(PhaseStats { count: values.len(), mean, std: var.sqrt() })
    }
}

/// Population variance; `None` for an empty slice.
pub fn population_variance(values: &[f64]) -> Option<f64> {
    PhaseStats::of(values).map(|s| s.std * s.std)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub scenario: String,
    pub run_index: usize,
    /// `None` when the run has no walking ticks.
    pub walking: Option<PhaseStats>,
    /// `None` when the run has no standing ticks.
    pub standing: Option<PhaseStats>,
}

pub fn summarize(samples: &[ErrorSample], scenario: &str, run_index: usize) -> RunSummary {
    let errors = |phase| samples.iter().filter(|s| s.phase == phase).map(|s| s.error).collect::<Vec<_>>();
    RunSummary {
        scenario: scenario.to_owned(),
        run_index,
        walking: PhaseStats::of(&errors(Phase::Walking)),
        standing: PhaseStats::of(&errors(Phase::Standing)),
    }
}

/// Error variance over the first and the final `span` seconds of standing.
///
/// The first span is `[walk_end, walk_end + span)`, the final one
/// `[end - span, end]`.
pub fn standing_variance_split(samples: &[ErrorSample], walk_end: f64, end: f64, span: f64) -> Option<(f64, f64)> {
    let pick = |lo: f64, hi: f64, closed: bool| {
        samples
            .iter()
            .filter(|s| s.phase == Phase::Standing && s.timestamp >= lo && (s.timestamp < hi || (closed && s.timestamp <= hi)))
            .map(|s| s.error)
            .collect::<Vec<_>>()
    };
    let first = population_variance(&pick(walk_end, walk_end + span, false))?;
    let last = population_variance(&pick(end - span, end, true))?;
    Some((first, last))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSettings {
    pub repeats: usize,
    pub base_seed: u64,
    pub noise_sigma: f64,
    pub window: usize,
    pub sample_period: f64,
    pub solve: SolveOptions,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            repeats: 3,
            base_seed: 0,
            noise_sigma: DEFAULT_NOISE_SIGMA_DB,
            window: DEFAULT_WINDOW,
            sample_period: DEFAULT_SAMPLE_PERIOD_S,
            solve: SolveOptions::default(),
        }
    }
}

/// Seed of the trace for one (scenario, repeat) cell.
pub fn run_seed(base_seed: u64, scenario_index: usize, repeat: usize) -> u64 {
    base_seed.wrapping_add(repeat as u64).wrapping_add((scenario_index as u64) << 32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scenario: String,
    pub run_index: usize,
    pub seed: u64,
    pub walk_end: f64,
    pub end_time: f64,
    pub estimates: Vec<PositionEstimate>,
    pub samples: Vec<ErrorSample>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub runs: Vec<RunRecord>,
}

/// Simulates, solves and scores every scenario `repeats` times.
pub fn run_experiment(config: &PlanConfig, settings: &ExperimentSettings) -> Result<ExperimentReport, AnalysisError> {
    let plan = config.floor_plan()?;
    let scenarios = config.scenarios()?;
    let tracker = Tracker::new(plan.anchors.clone(), settings.solve.clone(), settings.window);
    let mut runs = Vec::with_capacity(scenarios.len() * settings.repeats);
    for (si, scenario) in scenarios.iter().enumerate() {
        for repeat in 0..settings.repeats {
            let seed = run_seed(settings.base_seed, si, repeat);
            let run = generate_trace(
                &plan,
                &scenario.trajectory,
                settings.sample_period,
                settings.noise_sigma,
                seed,
                &config.device_id,
            )?;
            let estimates: Vec<PositionEstimate> =
                tracker.solve_trace(&run.trace)?.into_iter().map(|e| e.estimate).collect();
            let walk_end = scenario.trajectory.walk_end();
            let samples = score_run(&estimates, &run.ground_truth, walk_end)?;
            let summary = summarize(&samples, &scenario.name, repeat + 1);
            runs.push(RunRecord {
                scenario: scenario.name.clone(),
                run_index: repeat + 1,
                seed,
                walk_end,
                end_time: scenario.trajectory.end_time(),
                estimates,
                samples,
                summary,
            });
        }
    }
    Ok(ExperimentReport { runs })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn timeline_csv(samples: &[ErrorSample]) -> String {
    let mut out = String::from(TIMELINE_HEADER);
    out.push('\n');
    for s in samples {
        let _ = writeln!(out, "{:.3},{:.6},{},{}", s.timestamp, s.error, s.phase.as_str(), s.converged);
    }
    out
}

/// One estimate row without the trailing newline. Floats use the shortest
/// representation that round-trips.
pub fn estimate_row(e: &DeviceEstimate) -> String {
    let p = &e.estimate;
    format!(
        "{},{},{},{},{},{},{},{}",
        p.timestamp, e.device_id, p.position.x, p.position.y, p.residual_norm, p.iterations, p.anchors_used, p.converged
    )
}

pub fn estimates_csv(estimates: &[DeviceEstimate]) -> String {
    let mut out = String::from(ESTIMATES_HEADER);
    out.push('\n');
    for e in estimates {
        out.push_str(&estimate_row(e));
        out.push('\n');
    }
    out
}

pub fn summary_csv(runs: &[RunRecord]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in runs {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.scenario,
            s.run_index,
            r.seed,
            opt(s.walking.map(|p| p.mean)),
            opt(s.walking.map(|p| p.std)),
            opt(s.standing.map(|p| p.mean)),
            opt(s.standing.map(|p| p.std)),
        );
    }
    out
}

/// One row per scenario: per-run means and standard deviations averaged over
/// the runs.
pub fn table_csv(runs: &[RunRecord]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    let mut names: Vec<&str> = Vec::new();
    for r in runs {
        if !names.contains(&r.scenario.as_str()) {
            names.push(&r.scenario);
        }
    }
    for name in names {
        let rows: Vec<&RunSummary> = runs.iter().filter(|r| r.scenario == name).map(|r| &r.summary).collect();
        let avg = |f: &dyn Fn(&RunSummary) -> Option<f64>| {
            let v: Vec<f64> = rows.iter().filter_map(|s| f(s)).collect();
            PhaseStats::of(&v).map(|p| p.mean)
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            name,
            opt(avg(&|s| s.walking.map(|p| p.mean))),
            opt(avg(&|s| s.standing.map(|p| p.mean))),
            opt(avg(&|s| s.walking.map(|p| p.std))),
            opt(avg(&|s| s.standing.map(|p| p.std))),
        );
    }
    out
}

fn safe_name(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Writes `<scenario>_run<k>.csv` per run plus `summary.csv` and `table.csv`.
pub fn write_experiment(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>, AnalysisError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for r in &report.runs {
        let path = dir.join(format!("{}_run{}.csv", safe_name(&r.scenario), r.run_index));
        fs::write(&path, timeline_csv(&r.samples))?;
        written.push(path);
    }
    for (name, body) in [("summary.csv", summary_csv(&report.runs)), ("table.csv", table_csv(&report.runs))] {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
