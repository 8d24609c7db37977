//! Indoor positioning from luminaire RSSI readings.
//!
//! The pipeline runs from raw readings to scored error timelines:
//!
//! - [`pathloss`]: log-distance conversion between RSSI and range.
//! - [`lm`]: a small dense Levenberg-Marquardt solver.
//! - [`localizer`]: per-anchor RSSI windows and range trilateration.
//! - [`plan`] and [`simulator`]: floor plans with wall losses and synthetic traces.
//! - [`ingest`]: the line protocol, trace files and the TCP listener.
//! - [`analysis`]: walking/standing error statistics over repeated scenarios.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod geometry;
pub mod ingest;
pub mod lm;
pub mod localizer;
pub mod pathloss;
pub mod plan;
pub mod simulator;

pub use geometry::Point2;
pub use lm::{LmConfig, LmResult};
pub use localizer::{Anchor, Measurement, PositionEstimate, Tracker};
pub use pathloss::PathLossParams;
