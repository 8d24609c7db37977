//! RSSI windows to 2D positions.
//!
//! Every anchor keeps a short FIFO of its most recent readings for each
//! device. On each solve the window is collapsed to one RSSI value, converted
//! to a range through the anchor's path-loss model, and the ranges are fitted
//! with Levenberg-Marquardt on the residuals `‖P − aᵢ‖ − dᵢ`.

use std::collections::{BTreeMap, HashMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{centroid, Point2};
use crate::lm::{self, LmConfig, LmError};
use crate::pathloss::{PathLossError, PathLossParams};

/// Readings kept per anchor unless configured otherwise.
pub const DEFAULT_WINDOW: usize = 3;

/// Fewest anchors that pin down a 2D position.
pub const MIN_ANCHORS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalizeError {
    #[error("only {have} anchors have data, need at least {MIN_ANCHORS}")]
    InsufficientAnchors { have: usize },
    #[error("window for anchor {0} is empty")]
    InsufficientData(String),
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
    #[error(transparent)]
    PathLoss(#[from] PathLossError),
    #[error(transparent)]
    Solver(#[from] LmError),
    #[error("anchors {0} and {1} share a position")]
    CoincidentAnchors(String, String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub id: String,
    pub position: Point2,
    pub params: PathLossParams,
}

impl Anchor {
    pub fn new(id: impl Into<String>, position: Point2, params: PathLossParams) -> Self {
        Self { id: id.into(), position, params }
    }
}

/// One timestamped RSSI reading.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub timestamp: f64,
    pub anchor_id: String,
    pub device_id: String,
    pub rssi: f64,
}

impl Measurement {
    pub fn validate(&self) -> Result<(), LocalizeError> {
        if !self.rssi.is_finite() {
            return Err(LocalizeError::InvalidMeasurement(format!("rssi {} is not finite", self.rssi)));
        }
        if !(self.timestamp >= 0.0) || !self.timestamp.is_finite() {
            return Err(LocalizeError::InvalidMeasurement(format!("bad timestamp {}", self.timestamp)));
        }
        Ok(())
    }
}

/// How a window is reduced to a single RSSI value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    MeanDbm,
    MedianDbm,
}

/// Most recent readings from one anchor, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct RssiWindow {
    pub anchor_id: String,
    capacity: usize,
    values: VecDeque<f64>,
}

impl RssiWindow {
    pub fn new(anchor_id: impl Into<String>, capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self { anchor_id: anchor_id.into(), capacity, values: VecDeque::with_capacity(capacity) }
    }

    pub fn push(&mut self, rssi: f64) {
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(rssi);
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn aggregate(&self, how: Aggregation) -> Result<f64, LocalizeError> {
        if self.values.is_empty() {
            return Err(LocalizeError::InsufficientData(self.anchor_id.clone()));
        }
        let n = self.values.len() as f64;
        Ok(match how {
            Aggregation::MeanDbm => self.values.iter().sum::<f64>() / n,
            Aggregation::MedianDbm => {
                let mut sorted: Vec<f64> = self.values.iter().copied().collect();
                sorted.sort_by(f64::total_cmp);
                let mid = sorted.len() / 2;
                if sorted.len() % 2 == 1 {
                    sorted[mid]
                } else {
                    0.5 * (sorted[mid - 1] + sorted[mid])
                }
            }
        })
    }
}

/// Arithmetic mean of the window in dBm.
pub fn window_rssi(window: &RssiWindow) -> Result<f64, LocalizeError> {
    window.aggregate(Aggregation::MeanDbm)
}

/// Per-anchor windows for one device, keyed by anchor id.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    capacity: usize,
    windows: BTreeMap<String, RssiWindow>,
}

impl Default for WindowSet {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

impl WindowSet {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), windows: BTreeMap::new() }
    }

    pub fn get(&self, anchor_id: &str) -> Option<&RssiWindow> {
        self.windows.get(anchor_id)
    }

    pub fn push_measurement(&mut self, m: &Measurement) {
        self.push(&m.anchor_id, m.rssi);
    }

    pub fn push(&mut self, anchor_id: &str, rssi: f64) {
        let capacity = self.capacity;
        self.windows
            .entry(anchor_id.to_owned())
            .or_insert_with(|| RssiWindow::new(anchor_id, capacity))
            .push(rssi);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionEstimate {
    pub position: Point2,
    pub timestamp: f64,
    /// Euclidean norm of the range residuals at the solution, meters.
    pub residual_norm: f64,
    pub iterations: usize,
    pub anchors_used: usize,
    pub converged: bool,
}

/// Residual vector `‖P − aᵢ‖ − dᵢ`.
pub fn range_residuals(anchors: &[Point2], ranges: &[f64], p: Point2) -> DVector<f64> {
    DVector::from_iterator(anchors.len(), anchors.iter().zip(ranges).map(|(&a, &d)| p.distance(a) - d))
}

/// Analytic Jacobian of [`range_residuals`]: row `i` is the unit vector from
/// anchor `i` towards `p` (zero when `p` sits on the anchor).
pub fn range_jacobian(anchors: &[Point2], p: Point2) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(anchors.len(), 2);
    for (i, &a) in anchors.iter().enumerate() {
        let diff = p - a;
        let rho = diff.norm();
        if rho > 1e-12 {
            j[(i, 0)] = diff.x / rho;
            j[(i, 1)] = diff.y / rho;
        }
    }
    j
}

/// Fits a position to known anchor positions and ranges.
pub fn trilaterate(
    anchors: &[Point2],
    ranges: &[f64],
    initial: Point2,
    config: &LmConfig,
) -> Result<lm::LmResult, LocalizeError> {
    if anchors.len() < MIN_ANCHORS {
        return Err(LocalizeError::InsufficientAnchors { have: anchors.len() });
    }
    let residual = |p: &DVector<f64>| range_residuals(anchors, ranges, Point2::new(p[0], p[1]));
    let jacobian = |p: &DVector<f64>| range_jacobian(anchors, Point2::new(p[0], p[1]));
    Ok(lm::minimize(residual, jacobian, DVector::from_vec(vec![initial.x, initial.y]), config)?)
}

/// Above this objective (m²) a second fit is started from [`linear_start`].
pub const RESTART_OBJECTIVE: f64 = 1e-12;

/// Least-squares solution of the linearized range equations
/// `2(aᵢ − ā)·P = ‖aᵢ‖² − mean‖a‖² − (dᵢ² − mean d²)`.
///
/// Exact for noise-free ranges. `None` when the anchors are collinear.
pub fn linear_start(anchors: &[Point2], ranges: &[f64]) -> Option<Point2> {
    let k = anchors.len();
    if k < MIN_ANCHORS || ranges.len() != k {
        return None;
    }
    let n = k as f64;
    let mean = centroid(anchors)?;
    let mean_sq = anchors.iter().map(|a| a.norm().powi(2)).sum::<f64>() / n;
    let mean_d2 = ranges.iter().map(|d| d * d).sum::<f64>() / n;
    let a = DMatrix::from_fn(k, 2, |i, j| 2.0 * if j == 0 { anchors[i].x - mean.x } else { anchors[i].y - mean.y });
    let b = DVector::from_fn(k, |i, _| anchors[i].norm().powi(2) - mean_sq - (ranges[i] * ranges[i] - mean_d2));
    let ata = a.transpose() * &a;
    let sol = ata.cholesky()?.solve(&(a.transpose() * b));
    let p = Point2::new(sol[0], sol[1]);
    p.is_finite().then_some(p)
}

/// Centroid of the anchors, shifted off the anchor line when all anchors are
/// collinear.
fn cold_start(positions: &[Point2]) -> Point2 {
    let c = centroid(positions).expect("non-empty");
    let far = positions.iter().copied().max_by(|a, b| a.distance(c).total_cmp(&b.distance(c))).expect("non-empty");
    let span = far.distance(c);
    if span == 0.0 {
        return c;
    }
    let dir = (far - c) * (1.0 / span);
    let off_line = positions.iter().any(|&p| {
        let v = p - c;
        (v.x * dir.y - v.y * dir.x).abs() > 1e-9 * span
    });
    if off_line {
        c
    } else {
        c + Point2::new(-dir.y, dir.x) * (0.1 * span)
    }
}

/// Options that shape a solve beyond the LM settings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveOptions {
    pub lm: LmConfig,
    pub aggregation: Aggregation,
}

/// Solves one position from the current windows.
///
/// Anchors without data are skipped. The initial guess defaults to the
/// centroid of the participating anchors (shifted sideways if they are
/// collinear). If that fit leaves an objective above [`RESTART_OBJECTIVE`],
/// a second fit starts from [`linear_start`] and the lower objective wins.
/// A non-converged fit is still
/// returned, flagged through [`PositionEstimate::converged`].
pub fn solve_position(
    anchors: &[Anchor],
    windows: &WindowSet,
    initial_guess: Option<Point2>,
    options: &SolveOptions,
    timestamp: f64,
) -> Result<PositionEstimate, LocalizeError> {
    let mut positions = Vec::with_capacity(anchors.len());
    let mut ranges = Vec::with_capacity(anchors.len());
    let mut ids = Vec::with_capacity(anchors.len());
    for anchor in anchors {
        let Some(window) = windows.get(&anchor.id).filter(|w| !w.is_empty()) else {
            continue;
        };
        let rssi = window.aggregate(options.aggregation)?;
        ranges.push(anchor.params.distance_from_rssi(rssi)?);
        positions.push(anchor.position);
        ids.push(anchor.id.as_str());
    }
    if positions.len() < MIN_ANCHORS {
        return Err(LocalizeError::InsufficientAnchors { have: positions.len() });
    }
    for i in 0..positions.len() {
        for j in (i + 1)..positions.len() {
            if positions[i] == positions[j] {
                return Err(LocalizeError::CoincidentAnchors(ids[i].to_owned(), ids[j].to_owned()));
            }
        }
    }
    let start = initial_guess.unwrap_or_else(|| cold_start(&positions));
    let mut fit = trilaterate(&positions, &ranges, start, &options.lm)?;
    if fit.final_objective > RESTART_OBJECTIVE {
        if let Some(alt) = linear_start(&positions, &ranges) {
            let second = trilaterate(&positions, &ranges, alt, &options.lm)?;
            if second.final_objective < fit.final_objective {
                fit = second;
            }
        }
    }
    Ok(PositionEstimate {
        position: Point2::new(fit.params[0], fit.params[1]),
        timestamp,
        residual_norm: fit.final_objective.sqrt(),
        iterations: fit.iterations,
        anchors_used: positions.len(),
        converged: fit.converged,
    })
}

/// An estimate tagged with the device it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceEstimate {
    pub device_id: String,
    pub estimate: PositionEstimate,
}

#[derive(Debug, Clone)]
struct DeviceState {
    windows: WindowSet,
    pending_tick: Option<f64>,
    last: Option<Point2>,
}

/// Streaming localizer: feed measurements in timestamp order, get one
/// estimate per device per tick.
///
/// A tick is closed when a reading with a later timestamp arrives for the
/// same device, or on [`Tracker::flush`]. Successive solves for a device
/// warm-start from that device's previous estimate.
#[derive(Debug, Clone)]
pub struct Tracker {
    anchors: Vec<Anchor>,
    options: SolveOptions,
    window: usize,
    devices: HashMap<String, DeviceState>,
}

impl Tracker {
    pub fn new(anchors: Vec<Anchor>, options: SolveOptions, window: usize) -> Self {
        Self { anchors, options, window: window.max(1), devices: HashMap::new() }
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    /// Adds a reading; returns the estimate for the tick it closed, if any.
    ///
    /// Readings from unknown anchors are ignored. Ticks with fewer than three
    /// reporting anchors yield no estimate.
    pub fn push(&mut self, m: &Measurement) -> Result<Option<DeviceEstimate>, LocalizeError> {
        m.validate()?;
        if !self.anchors.iter().any(|a| a.id == m.anchor_id) {
            log::debug!("ignoring reading from unknown anchor {}", m.anchor_id);
            return Ok(None);
        }
        let window = self.window;
        let state = self.devices.entry(m.device_id.clone()).or_insert_with(|| DeviceState {
            windows: WindowSet::new(window),
            pending_tick: None,
            last: None,
        });
        let closed = match state.pending_tick {
            Some(t) if m.timestamp > t => Self::solve_device(&self.anchors, &self.options, &m.device_id, state, t)?,
            _ => None,
        };
        state.windows.push_measurement(m);
        state.pending_tick = Some(m.timestamp);
        Ok(closed)
    }

    /// Closes every open tick, in device-id order.
    pub fn flush(&mut self) -> Result<Vec<DeviceEstimate>, LocalizeError> {
        let mut ids: Vec<String> = self.devices.keys().cloned().collect();
        ids.sort();
        let mut out = Vec::new();
        for id in ids {
            let state = self.devices.get_mut(&id).expect("present");
            if let Some(t) = state.pending_tick.take() {
                if let Some(e) = Self::solve_device(&self.anchors, &self.options, &id, state, t)? {
                    out.push(e);
                }
            }
        }
        Ok(out)
    }

    fn solve_device(
        anchors: &[Anchor],
        options: &SolveOptions,
        device_id: &str,
        state: &mut DeviceState,
        tick: f64,
    ) -> Result<Option<DeviceEstimate>, LocalizeError> {
        match solve_position(anchors, &state.windows, state.last, options, tick) {
            Ok(estimate) => {
                state.last = Some(estimate.position);
                Ok(Some(DeviceEstimate { device_id: device_id.to_owned(), estimate }))
            }
            Err(LocalizeError::InsufficientAnchors { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Runs a whole ordered trace through a fresh copy of this tracker.
    pub fn solve_trace<'a, I>(&self, trace: I) -> Result<Vec<DeviceEstimate>, LocalizeError>
    where
        I: IntoIterator<Item = &'a Measurement>,
    {
        let mut tracker = Tracker::new(self.anchors.clone(), self.options.clone(), self.window);
        let mut out = Vec::new();
        for m in trace {
            out.extend(tracker.push(m)?);
        }
        out.extend(tracker.flush()?);
        Ok(out)
    }
}
