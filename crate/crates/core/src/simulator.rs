//! Synthetic RSSI traces.
//!
//! The forward model evaluates the log-distance law on the true 3D distance
//! between a ceiling-mounted anchor and the carried device, subtracts the
//! loss of every wall the direct path crosses, and adds Gaussian shadowing in
//! dB. Noise draws are keyed by `(seed, tick, anchor)`, so a trace does not
//! depend on generation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::Point2;
use crate::localizer::Measurement;
use crate::plan::{FloorPlan, PlanConfig, PlanError, Scenario};

/// Fastest plausible walking pace, m/s.
pub const MAX_WALKING_SPEED: f64 = 2.5;

/// Shortest anchor-to-device distance fed to the path-loss model, meters.
pub const MIN_DISTANCE_M: f64 = 0.1;

pub const DEFAULT_SAMPLE_PERIOD_S: f64 = 5.0;
pub const DEFAULT_NOISE_SIGMA_DB: f64 = 2.0;

const BUILTIN_CONFIG: &str = include_str!("../data/apartment.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory needs at least one waypoint")]
    Empty,
    #[error("waypoint times must be finite, non-negative and strictly increasing (at index {0})")]
    Times(usize),
    #[error("segment {index} implies {speed:.2} m/s, above the {MAX_WALKING_SPEED} m/s limit")]
    TooFast { index: usize, speed: f64 },
    #[error("dwell must be finite and non-negative")]
    Dwell,
    #[error("time {0} s is outside the trajectory")]
    OutOfRange(f64),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("sample period must be positive")]
    SamplePeriod,
    #[error("noise sigma must be finite and non-negative")]
    NoiseSigma,
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub position: Point2,
    /// Arrival time, seconds from trajectory start.
    pub time: f64,
}

/// Piecewise-linear walk followed by a stationary dwell at the last waypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    waypoints: Vec<Waypoint>,
    terminal_dwell: f64,
}

impl Trajectory {
    pub fn new(waypoints: Vec<Waypoint>, terminal_dwell: f64) -> Result<Self, TrajectoryError> {
        if waypoints.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        if !(terminal_dwell >= 0.0 && terminal_dwell.is_finite()) {
            return Err(TrajectoryError::Dwell);
        }
        for (i, w) in waypoints.iter().enumerate() {
            if !(w.time >= 0.0 && w.time.is_finite()) || !w.position.is_finite() {
                return Err(TrajectoryError::Times(i));
            }
            if i > 0 {
                let prev = waypoints[i - 1];
                let dt = w.time - prev.time;
                if !(dt > 0.0) {
                    return Err(TrajectoryError::Times(i));
                }
                let speed = prev.position.distance(w.position) / dt;
                if speed > MAX_WALKING_SPEED {
                    return Err(TrajectoryError::TooFast { index: i, speed });
                }
            }
        }
        Ok(Self { waypoints, terminal_dwell })
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn terminal_dwell(&self) -> f64 {
        self.terminal_dwell
    }

    pub fn start(&self) -> Point2 {
        self.waypoints[0].position
    }

    pub fn finish(&self) -> Point2 {
        self.waypoints[self.waypoints.len() - 1].position
    }

    /// Arrival time at the final waypoint; standing starts here.
    pub fn walk_end(&self) -> f64 {
        self.waypoints[self.waypoints.len() - 1].time
    }

    pub fn end_time(&self) -> f64 {
        self.walk_end() + self.terminal_dwell
    }

    /// True position at time `t`.
    ///
    /// Before the first waypoint's arrival time the subject waits there.
    pub fn position_at(&self, t: f64) -> Result<Point2, TrajectoryError> {
        if !(t >= 0.0 && t <= self.end_time()) {
            return Err(TrajectoryError::OutOfRange(t));
        }
        let idx = self.waypoints.partition_point(|w| w.time <= t);
        Ok(match idx {
            0 => self.start(),
            i if i == self.waypoints.len() => self.finish(),
            i => {
                let (a, b) = (self.waypoints[i - 1], self.waypoints[i]);
                a.position.lerp(b.position, (t - a.time) / (b.time - a.time))
            }
        })
    }
}

/// A generated trace together with what produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub name: String,
    pub trajectory: Trajectory,
    pub sample_period: f64,
    pub seed: u64,
    pub trace: Vec<Measurement>,
    /// True position at each tick, same timestamps as the trace.
    pub ground_truth: Vec<(f64, Point2)>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Standard-normal draw for one `(seed, tick, anchor)` cell.
pub fn shadowing_draw(seed: u64, tick: u64, anchor: u64) -> f64 {
    let key = splitmix64(seed ^ splitmix64(tick ^ splitmix64(anchor.wrapping_add(0x5eed))));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    Normal::new(0.0, 1.0).expect("unit normal").sample(&mut rng)
}

/// Noise-free RSSI the device at `device` would produce at `anchor_index`.
pub fn expected_rssi(plan: &FloorPlan, anchor_index: usize, device: Point2) -> f64 {
    let anchor = &plan.anchors[anchor_index];
    let dz = plan.anchor_height - plan.device_height;
    let planar = anchor.position.distance(device);
    let d = (planar * planar + dz * dz).sqrt().max(MIN_DISTANCE_M);
    let free_space = anchor.params.rssi_from_distance(d).expect("distance clamped positive");
    free_space - plan.wall_attenuation(device, anchor.position)
}

/// Samples one reading per anchor every `sample_period` seconds, from `t = 0`
/// through the end of the dwell.
pub fn generate_trace(
    plan: &FloorPlan,
    trajectory: &Trajectory,
    sample_period: f64,
    noise_sigma: f64,
    seed: u64,
    device_id: &str,
) -> Result<ScenarioRun, SimError> {
    if !(sample_period > 0.0 && sample_period.is_finite()) {
        return Err(SimError::SamplePeriod);
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(SimError::NoiseSigma);
    }
    plan.validate()?;

    let ticks = (trajectory.end_time() / sample_period + 1e-9).floor() as u64 + 1;
    let mut trace = Vec::with_capacity(ticks as usize * plan.anchors.len());
    let mut ground_truth = Vec::with_capacity(ticks as usize);
    for tick in 0..ticks {
        let t = tick as f64 * sample_period;
        let truth = trajectory.position_at(t.min(trajectory.end_time()))?;
        ground_truth.push((t, truth));
        for (i, anchor) in plan.anchors.iter().enumerate() {
            let noise = noise_sigma * shadowing_draw(seed, tick, i as u64);
            trace.push(Measurement {
                timestamp: t,
                anchor_id: anchor.id.clone(),
                device_id: device_id.to_owned(),
                rssi: expected_rssi(plan, i, truth) - noise,
            });
        }
    }
    Ok(ScenarioRun {
        name: String::new(),
        trajectory: trajectory.clone(),
        sample_period,
        seed,
        trace,
        ground_truth,
    })
}

/// The bundled three-room apartment configuration.
pub fn builtin_config() -> PlanConfig {
    PlanConfig::from_json(BUILTIN_CONFIG).expect("bundled config is valid")
}

/// Builtin plan and its three scenarios: bed to closet, closet to bed, bed to
/// desk chair.
pub fn builtin_scenarios() -> (FloorPlan, Vec<Scenario>) {
    let cfg = builtin_config();
    (cfg.floor_plan().expect("bundled plan is valid"), cfg.scenarios().expect("bundled scenarios are valid"))
}
