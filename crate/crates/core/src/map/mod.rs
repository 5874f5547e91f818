//! Domain model for vectorized lane-level maps: element taxonomy, lane
//! groups, tile georeferencing and the on-disk exchange format.

mod format;
mod groups;

pub use format::{parse_map, serialize_map, FormatError, MapHeader, FORMAT_VERSION};
pub use groups::{merge_instances, organize_groups};

use crate::geom::{Point2, Polygon, Polyline};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("element has {got} points, expected {expected}")]
    WrongPointCount { got: usize, expected: usize },
    #[error("cannot merge closed-shape instances")]
    MergeClosedShape,
    #[error("cannot merge instances of different classes")]
    MergeClassMismatch,
    #[error(transparent)]
    Geom(#[from] crate::geom::GeomError),
}

/// Which coordinate frame a set of instances lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Tile-local pixel coordinates.
    Pixel,
    /// World meters.
    World,
}

/// The fixed element taxonomy. Open shapes are polylines, closed shapes are
/// rings stored as open point lists with an implicit first-to-last edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementClass {
    LaneSolid,
    LaneDashed,
    StopLine,
    Crosswalk,
    /// Reserved for the group polygon branch; never carried by elements.
    GroupPolygon,
}

pub const N_CLASSES: usize = 5;

impl ElementClass {
    pub const ALL: [ElementClass; N_CLASSES] = [
        ElementClass::LaneSolid,
        ElementClass::LaneDashed,
        ElementClass::StopLine,
        ElementClass::Crosswalk,
        ElementClass::GroupPolygon,
    ];

    pub fn id(self) -> usize {
        match self {
            ElementClass::LaneSolid => 0,
            ElementClass::LaneDashed => 1,
            ElementClass::StopLine => 2,
            ElementClass::Crosswalk => 3,
            ElementClass::GroupPolygon => 4,
        }
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn is_closed(self) -> bool {
        matches!(self, ElementClass::Crosswalk | ElementClass::GroupPolygon)
    }
}

/// One map element: a fixed-length point sequence plus class and score.
///
/// Ground-truth instances carry score 1.0 so evaluation code treats GT and
/// predictions uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementInstance {
    pub instance_id: String,
    pub class: ElementClass,
    pub points: Polyline,
    pub score: f64,
    pub frame: Frame,
}

impl ElementInstance {
    pub fn new(
        instance_id: impl Into<String>,
        class: ElementClass,
        points: Polyline,
        score: f64,
        frame: Frame,
    ) -> Self {
        Self { instance_id: instance_id.into(), class, points, score, frame }
    }

    /// Enforce the fixed point budget.
    pub fn check_point_count(&self, n_p: usize) -> Result<(), MapError> {
        if self.points.len() != n_p {
            return Err(MapError::WrongPointCount { got: self.points.len(), expected: n_p });
        }
        Ok(())
    }

    /// Closed-shape elements interpreted as a polygon ring.
    pub fn as_polygon(&self) -> Option<Polygon> {
        if !self.class.is_closed() {
            return None;
        }
        Polygon::new(self.points.points().to_vec()).ok()
    }
}

/// A lane group: elements sharing one road segment plus the bounding polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneGroup {
    pub group_id: String,
    pub elements: Vec<ElementInstance>,
    pub polygon: Polygon,
    pub polygon_score: f64,
}

/// Georeference of one BEV tile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileFrame {
    /// World coordinates of the pixel (0, 0) corner.
    pub origin_world: Point2,
    /// Meters per pixel (square pixels).
    pub pixel_size: f64,
    pub width_px: usize,
    pub height_px: usize,
    /// (row, col) in the tile grid.
    pub tile_index: (usize, usize),
    /// Position in the zig-zag scan sequence.
    pub scan_order: usize,
}

impl TileFrame {
    pub fn pixel_to_world(&self, p: Point2) -> Point2 {
        Point2::new(
            self.origin_world.x + self.pixel_size * p.x,
            self.origin_world.y + self.pixel_size * p.y,
        )
    }

    pub fn world_to_pixel(&self, p: Point2) -> Point2 {
        Point2::new(
            (p.x - self.origin_world.x) / self.pixel_size,
            (p.y - self.origin_world.y) / self.pixel_size,
        )
    }

    /// World-frame footprint of the tile.
    pub fn world_rect(&self) -> crate::geom::Rect {
        crate::geom::Rect::new(
            self.origin_world.x,
            self.origin_world.y,
            self.origin_world.x + self.pixel_size * self.width_px as f64,
            self.origin_world.y + self.pixel_size * self.height_px as f64,
        )
    }

    pub fn map_polyline(&self, pl: &Polyline, to_world: bool) -> Polyline {
        let f = |p: &Point2| {
            if to_world {
                self.pixel_to_world(*p)
            } else {
                self.world_to_pixel(*p)
            }
        };
        Polyline::new(pl.points().iter().map(f).collect()).expect("affine map keeps polylines valid")
    }
}

/// Cross-tile connection probabilities between context instances (rows) and
/// current-tile instances (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyMatrix {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    /// Row-major `row_ids.len() x col_ids.len()` probabilities.
    pub values: Vec<f64>,
}

impl TopologyMatrix {
    pub fn empty(col_ids: Vec<String>) -> Self {
        Self { row_ids: Vec::new(), col_ids, values: Vec::new() }
    }

    pub fn new(row_ids: Vec<String>, col_ids: Vec<String>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), row_ids.len() * col_ids.len());
        Self { row_ids, col_ids, values }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.col_ids.len() + col]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.row_ids.len(), self.col_ids.len())
    }
}

/// Per-tile network output after thresholding and group organization.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorTilePrediction {
    pub tile: TileFrame,
    /// Elements in world frame.
    pub elements: Vec<ElementInstance>,
    /// Scored group polygons in world frame.
    pub group_polygons: Vec<(Polygon, f64)>,
    /// Foreground probabilities, row-major height x width.
    pub fg_mask: Vec<f32>,
    pub topology: TopologyMatrix,
}

/// A stitched or ground-truth map in world frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VectorMap {
    pub groups: Vec<LaneGroup>,
    /// Tile indices that contributed content.
    pub provenance: Vec<(usize, usize)>,
}

impl VectorMap {
    pub fn elements(&self) -> impl Iterator<Item = &ElementInstance> {
        self.groups.iter().flat_map(|g| g.elements.iter())
    }

    pub fn element_count(&self) -> usize {
        self.groups.iter().map(|g| g.elements.len()).sum()
    }
}
