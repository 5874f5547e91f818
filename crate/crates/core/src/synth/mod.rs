//! Procedural generation of ground-truth lane-level worlds and their
//! rasterization into BEV-style training tiles.
//!
//! Roads are constant-curvature arcs laid out on loose horizontal/vertical
//! slots so crossings are near-perpendicular. Style changes, lane-count
//! changes and intersections terminate lane groups. Everything is a pure
//! function of the spec seed.

pub mod noise;
pub mod raster;
mod sample;
mod world;

pub use raster::Raster;
pub use sample::{
    clip_tile_gt, instances_connected, make_sample, parent_id, render_tile, scanned_neighbors,
    tile_grid, TrainingSample,
};
pub use world::{build_world, FurnitureKind, FurniturePlan, RoadPlan, SegmentPlan, World};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("world extent must be positive, got {0} x {1}")]
    BadExtent(f64, f64),
    #[error("lanes_per_road range invalid: ({0}, {1})")]
    BadLaneRange(usize, usize),
    #[error("rate {name} = {value} outside [0, 1]")]
    BadRate { name: &'static str, value: f64 },
    #[error("dash period must be positive")]
    BadDashPeriod,
    #[error(transparent)]
    Geom(#[from] crate::geom::GeomError),
}

/// Parameters of a procedural world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub seed: u64,
    /// World width and height in meters.
    pub extent_m: (f64, f64),
    pub road_count: usize,
    /// Inclusive range of lanes per road.
    pub lanes_per_road: (usize, usize),
    /// Dash cycle length in meters (60% painted, 40% gap).
    pub dash_period_m: f64,
    /// Probability that a road crossing becomes a managed intersection with
    /// stop lines and crosswalks. Markings are cut at every crossing.
    pub intersection_probability: f64,
    /// Fraction of marking pixels erased by the wear field.
    pub wear_rate: f64,
    /// Dark elliptical occlusions per tile.
    pub occlusion_count: usize,
    /// Maximum |curvature| of road centerlines, 1/m.
    pub max_curvature: f64,
    /// Maximum number of divider style changes per road.
    pub style_changes_max: usize,
    /// Probability that a road has one lane-count change.
    pub lane_change_probability: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            extent_m: (40.96, 40.96),
            road_count: 3,
            lanes_per_road: (1, 3),
            dash_period_m: 2.0,
            intersection_probability: 0.5,
            wear_rate: 0.2,
            occlusion_count: 2,
            max_curvature: 0.004,
            style_changes_max: 2,
            lane_change_probability: 0.3,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let (w, h) = self.extent_m;
        if !(w > 0.0 && h > 0.0) {
            return Err(SynthError::BadExtent(w, h));
        }
        let (lo, hi) = self.lanes_per_road;
        if lo < 1 || lo > hi {
            return Err(SynthError::BadLaneRange(lo, hi));
        }
        for (name, value) in [
            ("intersection_probability", self.intersection_probability),
            ("wear_rate", self.wear_rate),
            ("lane_change_probability", self.lane_change_probability),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SynthError::BadRate { name, value });
            }
        }
        if self.dash_period_m <= 0.0 {
            return Err(SynthError::BadDashPeriod);
        }
        Ok(())
    }
}

/// Generate the ground-truth world for a spec. Deterministic in the seed.
pub fn generate_world(spec: &WorldSpec, n_p: usize) -> Result<World, SynthError> {
    spec.validate()?;
    world::generate(spec, n_p)
}
