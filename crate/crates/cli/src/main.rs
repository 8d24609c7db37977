//! `lumiloc`: simulate, solve, replay and score indoor positioning runs.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{mpsc, Arc, Mutex};
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use lumiloc_core::analysis::{
    estimate_row, estimates_csv, run_experiment, table_csv, write_experiment, ExperimentSettings, ESTIMATES_HEADER,
};
use lumiloc_core::ingest::{
    encode_record, read_trace, replay_trace, serve_ingest, ConnectionId, MeasurementRecord, Pace, DEFAULT_PORT,
};
use lumiloc_core::localizer::{DeviceEstimate, Measurement, SolveOptions, Tracker, DEFAULT_WINDOW};
use lumiloc_core::plan::PlanConfig;
use lumiloc_core::simulator::{builtin_config, generate_trace, DEFAULT_NOISE_SIGMA_DB, DEFAULT_SAMPLE_PERIOD_S};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "lumiloc", version, about = "RSSI trilateration and walking/standing error analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a measurement trace for one scenario.
    Simulate(SimulateArgs),
    /// Localize every tick of a trace file and write an estimates CSV.
    Solve(SolveArgs),
    /// Stream a trace file through the ingest path, locally or to a listener.
    Replay(ReplayArgs),
    /// Run every scenario several times and write error timelines and summaries.
    Experiment(ExperimentArgs),
    /// Accept measurement streams over TCP and localize them live.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Floor plan and scenario file (JSON). Defaults to the builtin apartment.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Number of readings per anchor averaged into each solve.
    #[arg(long, default_value_t = DEFAULT_WINDOW, value_parser = at_least_one)]
    window: usize,
    /// Exit with status 3 if any tick fails to converge.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Scenario name. Defaults to the first scenario in the config.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Shadowing noise standard deviation in dB.
    #[arg(long, default_value_t = DEFAULT_NOISE_SIGMA_DB, value_parser = non_negative)]
    sigma: f64,
    /// Seconds between measurement rounds.
    #[arg(long, default_value_t = DEFAULT_SAMPLE_PERIOD_S, value_parser = positive)]
    period: f64,
    /// Trace file to write. Defaults to stdout.
    #[arg(long, short, value_name = "PATH")]
    output: Option<PathBuf>,
    /// Also write the ground-truth positions as CSV.
    #[arg(long, value_name = "PATH")]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Trace file (newline-delimited JSON records).
    trace: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    solver: SolverArgs,
    /// Estimates CSV to write. Defaults to stdout.
    #[arg(long, short, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    trace: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    solver: SolverArgs,
    /// Playback speed multiplier; `inf` replays as fast as possible.
    #[arg(long, default_value_t = f64::INFINITY, value_parser = positive)]
    speed: f64,
    /// Send the records to a running `serve` instance instead of solving locally.
    #[arg(long, value_name = "HOST:PORT")]
    connect: Option<String>,
    #[arg(long, short, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, default_value_t = 3, value_parser = at_least_one)]
    repeats: usize,
    /// Base seed; each scenario and repeat derives its own seed from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_NOISE_SIGMA_DB, value_parser = non_negative)]
    sigma: f64,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_PERIOD_S, value_parser = positive)]
    period: f64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory for the CSV files.
    #[arg(long, value_name = "DIR", default_value = "results")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    /// Stop after this many seconds instead of waiting for Ctrl-C.
    #[arg(long, value_name = "SECONDS", value_parser = positive)]
    duration: Option<f64>,
    #[arg(long, short, value_name = "PATH")]
    output: Option<PathBuf>,
}

fn at_least_one(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("expected an integer >= 1, got {s:?}")),
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(format!("expected a finite number >= 0, got {s:?}")),
    }
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 => Ok(v),
        _ => Err(format!("expected a number > 0, got {s:?}")),
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    NotConverged(usize),
}

impl Failure {
    fn data(e: impl std::fmt::Display) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Solve(a) => solve(a),
        Command::Replay(a) => replay(a),
        Command::Experiment(a) => experiment(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::NotConverged(n)) => {
            eprintln!("error: {n} estimate(s) did not converge");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
    }
}

fn load_config(arg: &ConfigArg) -> Result<PlanConfig, Failure> {
    match &arg.config {
        Some(path) => PlanConfig::load(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display()))),
        None => Ok(builtin_config()),
    }
}

fn tracker_for(config: &PlanConfig, window: usize) -> Result<Tracker, Failure> {
    let plan = config.floor_plan().map_err(Failure::data)?;
    Ok(Tracker::new(plan.anchors, SolveOptions::default(), window))
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write + Send>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn check_converged(estimates: &[DeviceEstimate], strict: bool) -> Outcome {
    let failed = estimates.iter().filter(|e| !e.estimate.converged).count();
    if failed > 0 {
        log::warn!("{failed} estimate(s) did not converge");
        if strict {
            return Err(Failure::NotConverged(failed));
        }
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Outcome {
    let config = load_config(&a.config)?;
    let plan = config.floor_plan().map_err(Failure::data)?;
    let scenarios = config.scenarios().map_err(Failure::data)?;
    let scenario = match &a.scenario {
        Some(name) => scenarios
            .iter()
            .find(|s| &s.name == name)
            .ok_or_else(|| Failure::Usage(format!("no scenario named {name:?}")))?,
        None => scenarios.first().ok_or_else(|| Failure::Data("config defines no scenarios".into()))?,
    };
    let run = generate_trace(&plan, &scenario.trajectory, a.period, a.sigma, a.seed, &config.device_id)
        .map_err(Failure::data)?;
    let mut out = open_output(a.output.as_deref())?;
    for m in &run.trace {
        let line = encode_record(&MeasurementRecord::from(m)).map_err(Failure::data)?;
        out.write_all(line.as_bytes()).map_err(Failure::data)?;
    }
    out.flush().map_err(Failure::data)?;
    if let Some(path) = &a.truth {
        let mut body = String::from("timestamp,x,y,phase\n");
        let walk_end = scenario.trajectory.walk_end();
        for (t, p) in &run.ground_truth {
            let phase = if *t < walk_end { "walking" } else { "standing" };
            body.push_str(&format!("{t},{},{},{phase}\n", p.x, p.y));
        }
        std::fs::write(path, body).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn read_measurements(path: &Path) -> Result<Vec<Measurement>, Failure> {
    let file = File::open(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let lines = read_trace(io::BufReader::new(file)).map_err(Failure::data)?;
    lines
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.map(Measurement::from).map_err(|e| Failure::Data(format!("{} record {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn solve(a: SolveArgs) -> Outcome {
    let config = load_config(&a.config)?;
    let tracker = tracker_for(&config, a.solver.window)?;
    let trace = read_measurements(&a.trace)?;
    let estimates = tracker.solve_trace(&trace).map_err(Failure::data)?;
    let mut out = open_output(a.output.as_deref())?;
    out.write_all(estimates_csv(&estimates).as_bytes()).map_err(Failure::data)?;
    out.flush().map_err(Failure::data)?;
    check_converged(&estimates, a.solver.strict)
}

/// Tracker fed from an ingest sink. Solver errors are kept rather than
/// raised because sinks cannot fail.
struct LiveSolver {
    tracker: Tracker,
    estimates: Vec<DeviceEstimate>,
    error: Option<String>,
    out: Option<Box<dyn Write + Send>>,
}

impl LiveSolver {
    fn new(tracker: Tracker, out: Option<Box<dyn Write + Send>>) -> Self {
        let mut solver = Self { tracker, estimates: Vec::new(), error: None, out };
        if let Some(out) = solver.out.as_mut() {
            let _ = writeln!(out, "{ESTIMATES_HEADER}");
            let _ = out.flush();
        }
        solver
    }

    fn emit(&mut self, found: Vec<DeviceEstimate>) {
        for e in found {
            if let Some(out) = self.out.as_mut() {
                let _ = writeln!(out, "{}", estimate_row(&e));
                let _ = out.flush();
            }
            self.estimates.push(e);
        }
    }

    fn accept(&mut self, record: MeasurementRecord) {
        match self.tracker.push(&Measurement::from(record)) {
            Ok(found) => self.emit(found.into_iter().collect()),
            Err(e) => {
                log::warn!("{e}");
                self.error.get_or_insert_with(|| e.to_string());
            }
        }
    }

    fn finish(&mut self) {
        match self.tracker.flush() {
            Ok(found) => self.emit(found),
            Err(e) => {
                self.error.get_or_insert_with(|| e.to_string());
            }
        }
    }
}

fn replay(a: ReplayArgs) -> Outcome {
    let pace = Pace::from_speed(a.speed);
    if let Some(addr) = &a.connect {
        let stream = TcpStream::connect(addr).map_err(|e| Failure::Data(format!("{addr}: {e}")))?;
        let mut writer = BufWriter::new(stream);
        let mut failed: Option<io::Error> = None;
        let mut forward = |_: ConnectionId, r: MeasurementRecord| {
            if failed.is_some() {
                return;
            }
            let sent = encode_record(&r)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
                .and_then(|line| writer.write_all(line.as_bytes()))
                .and_then(|()| if pace == Pace::Unpaced { Ok(()) } else { writer.flush() });
            if let Err(e) = sent {
                failed = Some(e);
            }
        };
        let summary = replay_trace(&a.trace, pace, &mut forward).map_err(Failure::data)?;
        if let Some(e) = failed {
            return Err(Failure::Data(format!("{addr}: {e}")));
        }
        writer.flush().map_err(Failure::data)?;
        log::info!("sent {} records, {} malformed", summary.records, summary.malformed);
        return Ok(());
    }
    let config = load_config(&a.config)?;
    let mut live = LiveSolver::new(tracker_for(&config, a.solver.window)?, None);
    let mut sink = |_: ConnectionId, r: MeasurementRecord| live.accept(r);
    let summary = replay_trace(&a.trace, pace, &mut sink).map_err(Failure::data)?;
    live.finish();
    if let Some(e) = live.error {
        return Err(Failure::Data(e));
    }
    if summary.malformed > 0 {
        log::warn!("skipped {} malformed line(s)", summary.malformed);
    }
    let mut out = open_output(a.output.as_deref())?;
    out.write_all(estimates_csv(&live.estimates).as_bytes()).map_err(Failure::data)?;
    out.flush().map_err(Failure::data)?;
    check_converged(&live.estimates, a.solver.strict)
}

fn experiment(a: ExperimentArgs) -> Outcome {
    let config = load_config(&a.config)?;
    let settings = ExperimentSettings {
        repeats: a.repeats,
        base_seed: a.seed,
        noise_sigma: a.sigma,
        window: a.solver.window,
        sample_period: a.period,
        ..Default::default()
    };
    let report = run_experiment(&config, &settings).map_err(Failure::data)?;
    write_experiment(&report, &a.out).map_err(|e| Failure::Data(format!("{}: {e}", a.out.display())))?;
    print!("{}", table_csv(&report.runs));
    let failed: usize = report.runs.iter().map(|r| r.samples.iter().filter(|s| !s.converged).count()).sum();
    if failed > 0 {
        log::warn!("{failed} tick(s) did not converge");
        if a.solver.strict {
            return Err(Failure::NotConverged(failed));
        }
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Outcome {
    let config = load_config(&a.config)?;
    let out = open_output(a.output.as_deref())?;
    let live = Arc::new(Mutex::new(LiveSolver::new(tracker_for(&config, a.solver.window)?, Some(out))));
    let sink_state = Arc::clone(&live);
    let sink = move |_: ConnectionId, r: MeasurementRecord| {
        sink_state.lock().expect("solver lock").accept(r);
    };
    let server = serve_ingest((a.bind.as_str(), a.port), sink).map_err(Failure::data)?;
    log::info!("listening on {}", server.local_addr());
    eprintln!("listening on {}", server.local_addr());

    let (tx, rx) = mpsc::channel();
    ctrlc::set_handler(move || {
        let _ = tx.send(());
    })
    .map_err(Failure::data)?;
    match a.duration {
        Some(secs) => {
            let _ = rx.recv_timeout(Duration::from_secs_f64(secs));
        }
        None => {
            let _ = rx.recv();
        }
    }

    let summary = server.shutdown();
    eprintln!(
        "received {} records over {} connection(s), {} malformed",
        summary.records, summary.connections, summary.malformed
    );
    let mut live = live.lock().expect("solver lock");
    live.finish();
    if let Some(e) = live.error.take() {
        return Err(Failure::Data(e));
    }
    check_converged(&live.estimates, a.solver.strict)
}
