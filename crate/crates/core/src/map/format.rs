//! The map exchange format: one JSON record per line.
//!
//! A file starts with a `header` record and then carries `group`, `element`,
//! and optional `provenance` / `tile` / `topology` records. Coordinates are
//! written as JSON numbers, which round-trip `f64` exactly.

use super::{
    ElementClass, ElementInstance, Frame, LaneGroup, TileFrame, TopologyMatrix, VectorMap,
};
use crate::geom::{Point2, Polygon, Polyline};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: {msg}")]
    Invalid { line: usize, msg: String },
    #[error("missing header record")]
    MissingHeader,
    #[error("unsupported format version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Leading record carrying format metadata.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MapHeader {
    pub format_version: u32,
    pub pixel_size: f64,
    pub n_p: usize,
    pub frame: Frame,
}

impl Default for MapHeader {
    fn default() -> Self {
        Self { format_version: FORMAT_VERSION, pixel_size: 0.04, n_p: 20, frame: Frame::World }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Header(MapHeader),
    Group {
        group_id: String,
        polygon: Vec<(f64, f64)>,
        score: f64,
    },
    Element {
        instance_id: String,
        group_id: String,
        class: ElementClass,
        score: f64,
        points: Vec<(f64, f64)>,
    },
    Provenance {
        tiles: Vec<(usize, usize)>,
    },
    Tile(TileFrame),
    Topology {
        context_tiles: Vec<(usize, usize)>,
        rows: Vec<String>,
        cols: Vec<String>,
        pairs: Vec<(String, String)>,
    },
}

fn pts(points: &[Point2]) -> Vec<(f64, f64)> {
    points.iter().map(|p| (p.x, p.y)).collect()
}

fn from_pts(raw: &[(f64, f64)]) -> Vec<Point2> {
    raw.iter().map(|&(x, y)| Point2::new(x, y)).collect()
}

/// Serialize a map with its header. Groups and elements are written in their
/// stored order, so serialization is deterministic.
pub fn serialize_map(map: &VectorMap, header: &MapHeader) -> String {
    let mut out = String::new();
    let mut push = |r: &Record| {
        out.push_str(&serde_json::to_string(r).expect("record serialization cannot fail"));
        out.push('\n');
    };
    push(&Record::Header(header.clone()));
    if !map.provenance.is_empty() {
        push(&Record::Provenance { tiles: map.provenance.clone() });
    }
    for g in &map.groups {
        push(&Record::Group {
            group_id: g.group_id.clone(),
            polygon: pts(g.polygon.vertices()),
            score: g.polygon_score,
        });
        for e in &g.elements {
            push(&Record::Element {
                instance_id: e.instance_id.clone(),
                group_id: g.group_id.clone(),
                class: e.class,
                score: e.score,
                points: pts(e.points.points()),
            });
        }
    }
    out
}

/// Extra per-tile records carried by label files.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TileRecords {
    pub tile: Option<TileFrame>,
    pub context_tiles: Vec<(usize, usize)>,
    pub topology: Option<TopologyMatrix>,
}

pub fn parse_map(text: &str) -> Result<(VectorMap, MapHeader), FormatError> {
    let (map, header, _) = parse_map_full(text)?;
    Ok((map, header))
}

/// Full parse including tile/topology records (used for label files).
pub fn parse_map_full(text: &str) -> Result<(VectorMap, MapHeader, TileRecords), FormatError> {
    let mut header: Option<MapHeader> = None;
    let mut groups: BTreeMap<String, (Vec<ElementInstance>, Option<(Polygon, f64)>)> =
        BTreeMap::new();
    let mut group_order: Vec<String> = Vec::new();
    let mut provenance = Vec::new();
    let mut extras = TileRecords::default();
    let mut topo_raw: Option<(Vec<String>, Vec<String>, Vec<(String, String)>)> = None;

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line)
            .map_err(|source| FormatError::Json { line: lineno, source })?;
        let frame = header.as_ref().map(|h| h.frame).unwrap_or(Frame::World);
        match rec {
            Record::Header(h) => {
                if h.format_version != FORMAT_VERSION {
                    return Err(FormatError::Version(h.format_version));
                }
                header = Some(h);
            }
            Record::Group { group_id, polygon, score } => {
                let poly = Polygon::new(from_pts(&polygon)).map_err(|e| FormatError::Invalid {
                    line: lineno,
                    msg: format!("group {group_id}: {e}"),
                })?;
                if !groups.contains_key(&group_id) {
                    group_order.push(group_id.clone());
                }
                groups.entry(group_id).or_default().1 = Some((poly, score));
            }
            Record::Element { instance_id, group_id, class, score, points } => {
                let pl = Polyline::new(from_pts(&points)).map_err(|e| FormatError::Invalid {
                    line: lineno,
                    msg: format!("element {instance_id}: {e}"),
                })?;
                if !groups.contains_key(&group_id) {
                    group_order.push(group_id.clone());
                }
                groups.entry(group_id).or_default().0.push(ElementInstance::new(
                    instance_id,
                    class,
                    pl,
                    score,
                    frame,
                ));
            }
            Record::Provenance { tiles } => provenance = tiles,
            Record::Tile(t) => extras.tile = Some(t),
            Record::Topology { context_tiles, rows, cols, pairs } => {
                extras.context_tiles = context_tiles;
                topo_raw = Some((rows, cols, pairs));
            }
        }
    }
    let header = header.ok_or(FormatError::MissingHeader)?;

    let mut out_groups = Vec::with_capacity(group_order.len());
    for gid in group_order {
        let (elements, poly) = groups.remove(&gid).unwrap();
        let (polygon, polygon_score) = match poly {
            Some((p, s)) => (p, s),
            None => {
                // Element-only group (should not happen in our own files):
                // fall back to the member MBR.
                let pls: Vec<&Polyline> = elements.iter().map(|e| &e.points).collect();
                let p = crate::geom::min_bounding_rect(&pls).map_err(|e| {
                    FormatError::Invalid { line: 0, msg: format!("group {gid}: {e}") }
                })?;
                (p, 1.0)
            }
        };
        out_groups.push(LaneGroup { group_id: gid, elements, polygon, polygon_score });
    }
    let map = VectorMap { groups: out_groups, provenance };
    if let Some((rows, cols, pairs)) = topo_raw {
        let mut values = vec![0.0; rows.len() * cols.len()];
        for (a, b) in &pairs {
            let r = rows.iter().position(|x| x == a);
            let c = cols.iter().position(|x| x == b);
            if let (Some(r), Some(c)) = (r, c) {
                values[r * cols.len() + c] = 1.0;
            }
        }
        extras.topology = Some(TopologyMatrix::new(rows, cols, values));
    }
    Ok((map, header, extras))
}

/// Serialize label-file extras (tile frame + ground-truth topology).
pub fn serialize_tile_records(extras: &TileRecords) -> String {
    let mut out = String::new();
    if let Some(t) = extras.tile {
        out.push_str(&serde_json::to_string(&Record::Tile(t)).unwrap());
        out.push('\n');
    }
    if let Some(topo) = &extras.topology {
        let mut pairs = Vec::new();
        for (r, rid) in topo.row_ids.iter().enumerate() {
            for (c, cid) in topo.col_ids.iter().enumerate() {
                if topo.get(r, c) > 0.5 {
                    pairs.push((rid.clone(), cid.clone()));
                }
            }
        }
        let rec = Record::Topology {
            context_tiles: extras.context_tiles.clone(),
            rows: topo.row_ids.clone(),
            cols: topo.col_ids.clone(),
            pairs,
        };
        out.push_str(&serde_json::to_string(&rec).unwrap());
        out.push('\n');
    }
    out
}
