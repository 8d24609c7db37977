//! Lognormal (log-distance) path-loss model.
//!
//! RSSI at distance `d` is `A - 10 n log10(d)`, where `A` is the reading at
//! one meter and `n` the path-loss exponent. The localizer inverts it to get
//! ranges, the simulator evaluates it forward.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default one-meter reference level for the luminaire receivers, in dBm.
pub const DEFAULT_A_ONE_METER: f64 = -59.0;

/// Valid exponent range for indoor propagation.
pub const EXPONENT_RANGE: std::ops::RangeInclusive<f64> = 2.0..=6.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathLossError {
    #[error("invalid measurement: rssi {0} is not finite")]
    InvalidMeasurement(f64),
    #[error("distance {0} m is outside the model domain (must be > 0)")]
    Domain(f64),
    #[error("path-loss exponent {0} outside [2, 6]")]
    Exponent(f64),
    #[error("one-meter level {0} dBm must be finite and negative")]
    Reference(f64),
}

/// Calibration pair for one receiver type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossParams {
    /// Signal strength measured at 1 m, dBm.
    pub a_one_meter: f64,
    /// Dimensionless path-loss exponent.
    pub exponent: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self { a_one_meter: DEFAULT_A_ONE_METER, exponent: 2.0 }
    }
}

impl PathLossParams {
    pub fn new(a_one_meter: f64, exponent: f64) -> Result<Self, PathLossError> {
        let params = Self { a_one_meter, exponent };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), PathLossError> {
        if !(self.a_one_meter.is_finite() && self.a_one_meter < 0.0) {
            return Err(PathLossError::Reference(self.a_one_meter));
        }
        if !EXPONENT_RANGE.contains(&self.exponent) {
            return Err(PathLossError::Exponent(self.exponent));
        }
        Ok(())
    }

    /// Range in meters implied by a (possibly averaged) RSSI reading.
    pub fn distance_from_rssi(&self, rssi: f64) -> Result<f64, PathLossError> {
        if !rssi.is_finite() {
            return Err(PathLossError::InvalidMeasurement(rssi));
        }
        Ok(10f64.powf((self.a_one_meter - rssi) / (10.0 * self.exponent)))
    }

    /// Expected RSSI at distance `d` meters.
    pub fn rssi_from_distance(&self, d: f64) -> Result<f64, PathLossError> {
        if !(d > 0.0) || !d.is_finite() {
            return Err(PathLossError::Domain(d));
        }
        Ok(self.a_one_meter - 10.0 * self.exponent * d.log10())
    }
}
