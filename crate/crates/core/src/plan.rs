//! Floor plans, wall materials and the JSON configuration file that carries
//! them together with walking scenarios.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{path_crosses_segment, point_in_polygon, polygon_is_simple, Point2};
use crate::localizer::Anchor;
use crate::pathloss::{PathLossError, PathLossParams};
use crate::simulator::{Trajectory, TrajectoryError, Waypoint};

/// Configuration schema understood by this build.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Wall thickness at which the material table values apply, meters.
pub const REFERENCE_THICKNESS_M: f64 = 0.17;

pub const DEFAULT_ANCHOR_HEIGHT_M: f64 = 2.6;
pub const DEFAULT_DEVICE_HEIGHT_M: f64 = 1.0;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("wall {0} has coincident endpoints")]
    DegenerateWall(usize),
    #[error("wall {0} has non-positive thickness {1}")]
    WallThickness(usize, f64),
    #[error("room {0:?} polygon is not simple")]
    RoomPolygon(String),
    #[error("anchor {0:?} lies outside every room")]
    AnchorOutside(String),
    #[error("anchor {0:?} is declared twice")]
    DuplicateAnchor(String),
    #[error("anchor {0:?}: {1}")]
    AnchorParams(String, PathLossError),
    #[error("heights must be finite and non-negative")]
    Height,
    #[error("unsupported config schema_version {0} (expected {CONFIG_SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("scenario {0:?}: {1}")]
    Scenario(String, TrajectoryError),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    Brick,
    Cement,
    Glass,
    MetalDoor,
    Plasterboard,
    Window,
}

impl Material {
    pub const ALL: [Material; 6] = [
        Material::Brick,
        Material::Cement,
        Material::Glass,
        Material::MetalDoor,
        Material::Plasterboard,
        Material::Window,
    ];

    /// Published absorption range in dB at reference thickness.
    pub fn absorption_range_db(self) -> (f64, f64) {
        match self {
            Material::Brick => (6.0, 15.0),
            Material::Cement => (4.0, 6.0),
            Material::Glass => (6.0, 6.0),
            Material::MetalDoor => (6.0, 10.0),
            Material::Plasterboard => (3.0, 5.0),
            Material::Window => (3.0, 3.0),
        }
    }
}

/// Per-material attenuation at [`REFERENCE_THICKNESS_M`], in dB.
///
/// Defaults to the midpoint of each material's absorption range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MaterialTable(BTreeMap<Material, f64>);

impl Default for MaterialTable {
    fn default() -> Self {
        Self(
            Material::ALL
                .iter()
                .map(|&m| {
                    let (lo, hi) = m.absorption_range_db();
                    (m, 0.5 * (lo + hi))
                })
                .collect(),
        )
    }
}

impl MaterialTable {
    pub fn db(&self, material: Material) -> f64 {
        self.0.get(&material).copied().unwrap_or_else(|| {
            let (lo, hi) = material.absorption_range_db();
            0.5 * (lo + hi)
        })
    }

    pub fn set(&mut self, material: Material, db: f64) {
        self.0.insert(material, db);
    }

    /// Attenuation of one wall of this material and thickness.
    pub fn wall_db(&self, material: Material, thickness_m: f64) -> f64 {
        self.db(material) * thickness_m / REFERENCE_THICKNESS_M
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WallSegment {
    pub p1: Point2,
    pub p2: Point2,
    pub material: Material,
    pub thickness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Room {
    pub name: String,
    pub polygon: Vec<Point2>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloorPlan {
    pub rooms: Vec<Room>,
    pub walls: Vec<WallSegment>,
    pub anchors: Vec<Anchor>,
    pub materials: MaterialTable,
    /// Mounting height of every anchor, meters.
    pub anchor_height: f64,
    /// Height at which the subject carries the device, meters.
    pub device_height: f64,
}

impl FloorPlan {
    pub fn validate(&self) -> Result<(), PlanError> {
        for (i, w) in self.walls.iter().enumerate() {
            if w.p1 == w.p2 {
                return Err(PlanError::DegenerateWall(i));
            }
            if !(w.thickness > 0.0) {
                return Err(PlanError::WallThickness(i, w.thickness));
            }
        }
        for room in &self.rooms {
            if !polygon_is_simple(&room.polygon) {
                return Err(PlanError::RoomPolygon(room.name.clone()));
            }
        }
        for (i, a) in self.anchors.iter().enumerate() {
            if self.anchors[..i].iter().any(|b| b.id == a.id) {
                return Err(PlanError::DuplicateAnchor(a.id.clone()));
            }
            a.params.validate().map_err(|e| PlanError::AnchorParams(a.id.clone(), e))?;
            if self.room_of(a.position).is_none() {
                return Err(PlanError::AnchorOutside(a.id.clone()));
            }
        }
        let heights_ok = [self.anchor_height, self.device_height].iter().all(|h| h.is_finite() && *h >= 0.0);
        if !heights_ok {
            return Err(PlanError::Height);
        }
        Ok(())
    }

    /// First room containing `p`.
    pub fn room_of(&self, p: Point2) -> Option<&Room> {
        self.rooms.iter().find(|r| point_in_polygon(p, &r.polygon))
    }

    /// Total wall loss in dB along the straight path between two points.
    pub fn wall_attenuation(&self, from: Point2, to: Point2) -> f64 {
        self.walls
            .iter()
            .filter(|w| path_crosses_segment(from, to, w.p1, w.p2))
            .map(|w| self.materials.wall_db(w.material, w.thickness))
            .sum()
    }
}

/// Free-function form of [`FloorPlan::wall_attenuation`].
pub fn wall_attenuation(plan: &FloorPlan, from: Point2, to: Point2) -> f64 {
    plan.wall_attenuation(from, to)
}

// On-disk representation.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub name: String,
    pub polygon: Vec<Point2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallSpec {
    pub p1: Point2,
    pub p2: Point2,
    pub material: Material,
    pub thickness_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub id: String,
    pub x: f64,
    pub y: f64,
    #[serde(default = "default_a")]
    pub a_one_meter: f64,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
}

fn default_a() -> f64 {
    crate::pathloss::DEFAULT_A_ONE_METER
}

fn default_exponent() -> f64 {
    PathLossParams::default().exponent
}

fn default_anchor_height() -> f64 {
    DEFAULT_ANCHOR_HEIGHT_M
}

fn default_device_height() -> f64 {
    DEFAULT_DEVICE_HEIGHT_M
}

fn default_device_id() -> String {
    "phone".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointSpec {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub waypoints: Vec<WaypointSpec>,
    pub dwell_s: f64,
}

/// Floor plan plus scenarios, as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default = "default_anchor_height")]
    pub anchor_height_m: f64,
    #[serde(default = "default_device_height")]
    pub device_height_m: f64,
    #[serde(default = "default_device_id")]
    pub device_id: String,
    /// Overrides for the per-material dB values.
    #[serde(default)]
    pub materials: BTreeMap<Material, f64>,
    pub rooms: Vec<RoomSpec>,
    pub walls: Vec<WallSpec>,
    pub anchors: Vec<AnchorSpec>,
    #[serde(default)]
    pub scenarios: Vec<ScenarioSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub trajectory: Trajectory,
}

impl PlanConfig {
    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        let cfg: PlanConfig = serde_json::from_str(text)?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(PlanError::SchemaVersion(cfg.schema_version));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PlanError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn floor_plan(&self) -> Result<FloorPlan, PlanError> {
        let mut materials = MaterialTable::default();
        for (&m, &db) in &self.materials {
            materials.set(m, db);
        }
        let plan = FloorPlan {
            rooms: self.rooms.iter().map(|r| Room { name: r.name.clone(), polygon: r.polygon.clone() }).collect(),
            walls: self
                .walls
                .iter()
                .map(|w| WallSegment { p1: w.p1, p2: w.p2, material: w.material, thickness: w.thickness_m })
                .collect(),
            anchors: self
                .anchors
                .iter()
                .map(|a| {
                    Anchor::new(
                        a.id.clone(),
                        Point2::new(a.x, a.y),
                        PathLossParams { a_one_meter: a.a_one_meter, exponent: a.exponent },
                    )
                })
                .collect(),
            materials,
            anchor_height: self.anchor_height_m,
            device_height: self.device_height_m,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn scenarios(&self) -> Result<Vec<Scenario>, PlanError> {
        self.scenarios
            .iter()
            .map(|s| {
                let waypoints =
                    s.waypoints.iter().map(|w| Waypoint { position: Point2::new(w.x, w.y), time: w.t }).collect();
                Trajectory::new(waypoints, s.dwell_s)
                    .map(|trajectory| Scenario { name: s.name.clone(), trajectory })
                    .map_err(|e| PlanError::Scenario(s.name.clone(), e))
            })
            .collect()
    }
}
