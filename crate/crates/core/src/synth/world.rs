//! Road plans and ground-truth world assembly.

use super::noise::{hash2, mix, unit_f64};
use super::{SynthError, WorldSpec};
use crate::geom::{
    clip_polygon_to_rect, clip_polyline_to_rect, min_bounding_rect, resample_polyline, Point2,
    Polygon, Polyline, Rect,
};
use crate::map::{ElementClass, ElementInstance, Frame, LaneGroup, VectorMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LANE_WIDTH_M: f64 = 3.5;
const SURFACE_MARGIN_M: f64 = 0.35;
const CENTERLINE_STEP_M: f64 = 0.5;
/// Clipped fragments shorter than this are dropped from ground truth.
pub const MIN_FRAGMENT_M: f64 = 1.0;
const CROSSWALK_DEPTH_M: f64 = 2.5;
/// Half-extent of the marking cut around a crossing, beyond the other
/// road's half width.
const CUT_CLEARANCE_M: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FurnitureKind {
    StopLine,
    Crosswalk,
}

#[derive(Debug, Clone)]
pub struct FurniturePlan {
    pub kind: FurnitureKind,
    /// Arc-length position of the furniture center on the road.
    pub s_center: f64,
}

/// One maximal run of constant lane count and divider style.
#[derive(Debug, Clone)]
pub struct SegmentPlan {
    pub s0: f64,
    pub s1: f64,
    pub lanes: usize,
    pub divider_dashed: bool,
}

/// A constant-curvature road with group segmentation already decided.
#[derive(Debug, Clone)]
pub struct RoadPlan {
    pub id: usize,
    pub anchor: Point2,
    pub heading: f64,
    /// Signed curvature in 1/m; zero means straight.
    pub curvature: f64,
    pub lane_width: f64,
    pub segments: Vec<SegmentPlan>,
    pub furniture: Vec<FurniturePlan>,
    /// Marking cut intervals (intersection zones) in s.
    pub cuts: Vec<(f64, f64)>,
}

impl RoadPlan {
    /// Centerline point at arc length `s` from the anchor.
    pub fn point_at(&self, s: f64) -> Point2 {
        let k = self.curvature;
        let local = if k.abs() < 1e-12 {
            Point2::new(s, 0.0)
        } else {
            Point2::new((k * s).sin() / k, (1.0 - (k * s).cos()) / k)
        };
        self.anchor + local.rotate(self.heading)
    }

    /// Unit normal (left of travel) at arc length `s`.
    pub fn normal_at(&self, s: f64) -> Point2 {
        let phi = self.heading + self.curvature * s;
        Point2::new(-phi.sin(), phi.cos())
    }

    fn max_half_width(&self) -> f64 {
        self.segments
            .iter()
            .map(|sp| sp.lanes as f64 * self.lane_width / 2.0)
            .fold(0.0, f64::max)
    }

    /// Dense offset polyline over `[s0, s1]` at lateral offset `o`.
    fn offset_chain(&self, s0: f64, s1: f64, o: f64) -> Vec<Point2> {
        let len = (s1 - s0).max(0.0);
        let steps = (len / CENTERLINE_STEP_M).ceil().max(1.0) as usize;
        (0..=steps)
            .map(|i| {
                let s = s0 + len * i as f64 / steps as f64;
                self.point_at(s) + self.normal_at(s).scale(o)
            })
            .collect()
    }
}

/// A generated world: the vectorized ground truth plus the road surface
/// polygons needed for rendering.
#[derive(Debug, Clone)]
pub struct World {
    pub spec: WorldSpec,
    pub n_p: usize,
    pub map: VectorMap,
    pub surfaces: Vec<Polygon>,
}

impl World {
    pub fn extent_rect(&self) -> Rect {
        Rect::new(0.0, 0.0, self.spec.extent_m.0, self.spec.extent_m.1)
    }
}

/// Resample a closed ring to exactly `n` points (last != first).
pub(crate) fn resample_ring(ring: &[Point2], n: usize) -> Vec<Point2> {
    let mut closed = ring.to_vec();
    closed.push(ring[0]);
    let pl = Polyline::new(closed).expect("ring has distinct points");
    let total = pl.arc_length();
    (0..n).map(|i| pl.point_at(total * i as f64 / n as f64)).collect()
}

/// Build the ground-truth world from explicit road plans.
///
/// Geometry is clipped to the extent; clipped fragments shorter than
/// [`MIN_FRAGMENT_M`] are dropped. Group polygons are the oriented minimum
/// bounding rectangles of their members.
pub fn build_world(
    spec: &WorldSpec,
    plans: &[RoadPlan],
    n_p: usize,
) -> Result<World, SynthError> {
    let extent = Rect::new(0.0, 0.0, spec.extent_m.0, spec.extent_m.1);
    let mut groups: Vec<LaneGroup> = Vec::new();

    for plan in plans {
        // Each furniture item belongs to the nearest segment (lowest index
        // on ties), so it is emitted exactly once.
        let seg_dist = |seg: &SegmentPlan, s: f64| {
            if s < seg.s0 {
                seg.s0 - s
            } else if s > seg.s1 {
                s - seg.s1
            } else {
                0.0
            }
        };
        let furniture_owner: Vec<Option<usize>> = plan
            .furniture
            .iter()
            .map(|f| {
                plan.segments
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        seg_dist(a, f.s_center).partial_cmp(&seg_dist(b, f.s_center)).unwrap()
                    })
                    .map(|(i, _)| i)
            })
            .collect();

        for (gi, seg) in plan.segments.iter().enumerate() {
            let group_id = format!("r{}.g{}", plan.id, gi);
            let mut elements: Vec<ElementInstance> = Vec::new();
            let half = seg.lanes as f64 * plan.lane_width / 2.0;

            for j in 0..=seg.lanes {
                let offset = j as f64 * plan.lane_width - half;
                let class = if j == 0 || j == seg.lanes {
                    ElementClass::LaneSolid
                } else if seg.divider_dashed {
                    ElementClass::LaneDashed
                } else {
                    ElementClass::LaneSolid
                };
                let chain = plan.offset_chain(seg.s0, seg.s1, offset);
                let Ok(pl) = Polyline::new(chain) else { continue };
                let world_id = format!("{group_id}.l{j}");
                elements.extend(clip_open_element(&pl, &extent, &world_id, class, n_p));
            }

            for (fi, f) in plan.furniture.iter().enumerate() {
                if furniture_owner[fi] != Some(gi) {
                    continue;
                }
                match f.kind {
                    FurnitureKind::StopLine => {
                        let a = plan.point_at(f.s_center) + plan.normal_at(f.s_center).scale(-half);
                        let b = plan.point_at(f.s_center) + plan.normal_at(f.s_center).scale(half);
                        let Ok(pl) = Polyline::new(vec![a, b]) else { continue };
                        let world_id = format!("{group_id}.sl{fi}");
                        elements.extend(clip_open_element(
                            &pl,
                            &extent,
                            &world_id,
                            ElementClass::StopLine,
                            n_p,
                        ));
                    }
                    FurnitureKind::Crosswalk => {
                        let w = half + 0.6;
                        let d = CROSSWALK_DEPTH_M / 2.0;
                        let mut ring: Vec<Point2> = Vec::new();
                        let corner = |ds: f64, o: f64| {
                            plan.point_at(f.s_center + ds) + plan.normal_at(f.s_center + ds).scale(o)
                        };
                        for (ds, o) in [(-d, -w), (d, -w), (d, w), (-d, w)] {
                            ring.push(corner(ds, o));
                        }
                        let Ok(poly) = Polygon::new(ring) else { continue };
                        let Some(clipped) = clip_polygon_to_rect(&poly, &extent) else {
                            continue;
                        };
                        if clipped.area() < 0.5 {
                            continue;
                        }
                        let pts = resample_ring(clipped.vertices(), n_p);
                        let Ok(pl) = Polyline::new(pts) else { continue };
                        elements.push(ElementInstance::new(
                            format!("{group_id}.cw{fi}"),
                            ElementClass::Crosswalk,
                            pl,
                            1.0,
                            Frame::World,
                        ));
                    }
                }
            }

            if elements.is_empty() {
                continue;
            }
            let pls: Vec<&Polyline> = elements.iter().map(|e| &e.points).collect();
            let polygon = min_bounding_rect(&pls)?;
            groups.push(LaneGroup { group_id, elements, polygon, polygon_score: 1.0 });
        }
    }

    // Road surfaces: one strip per segment plus strips bridging the cut
    // zones, clipped to the extent.
    let mut surfaces = Vec::new();
    for plan in plans {
        let mut strips: Vec<(f64, f64, f64)> = plan
            .segments
            .iter()
            .map(|s| (s.s0, s.s1, s.lanes as f64 * plan.lane_width / 2.0))
            .collect();
        for &(c0, c1) in &plan.cuts {
            strips.push((c0, c1, plan.max_half_width()));
        }
        for (s0, s1, half) in strips {
            if s1 - s0 < 0.1 {
                continue;
            }
            let w = half + SURFACE_MARGIN_M;
            let mut ring = plan.offset_chain(s0, s1, w);
            let mut right = plan.offset_chain(s0, s1, -w);
            right.reverse();
            ring.extend(right);
            let Ok(poly) = Polygon::new(ring) else { continue };
            if let Some(clipped) = clip_polygon_to_rect(&poly, &extent) {
                surfaces.push(clipped);
            }
        }
    }

    Ok(World {
        spec: spec.clone(),
        n_p,
        map: VectorMap { groups, provenance: Vec::new() },
        surfaces,
    })
}

/// Clip an open element to the extent, drop slivers, resample to n_p.
fn clip_open_element(
    pl: &Polyline,
    extent: &Rect,
    world_id: &str,
    class: ElementClass,
    n_p: usize,
) -> Vec<ElementInstance> {
    let fragments: Vec<Polyline> = clip_polyline_to_rect(pl, extent)
        .into_iter()
        .filter(|f| f.arc_length() >= MIN_FRAGMENT_M)
        .collect();
    let multi = fragments.len() > 1;
    fragments
        .into_iter()
        .enumerate()
        .filter_map(|(k, frag)| {
            let id = if multi { format!("{world_id}#{k}") } else { world_id.to_string() };
            let pts = resample_polyline(&frag, n_p).ok()?;
            Some(ElementInstance::new(id, class, pts, 1.0, Frame::World))
        })
        .collect()
}

/// Sample road plans from the spec and assemble the world.
pub fn generate(spec: &WorldSpec, n_p: usize) -> Result<World, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed ^ 0x77aa11));
    let (w, h) = spec.extent_m;
    let diag = (w * w + h * h).sqrt();

    // Alternate horizontal / vertical slots so crossings stay steep.
    let mut plans: Vec<RoadPlan> = Vec::new();
    let n_h = (spec.road_count + 1) / 2;
    let n_v = spec.road_count / 2;
    for i in 0..spec.road_count {
        let horizontal = i % 2 == 0;
        let slot_idx = i / 2;
        let slots = if horizontal { n_h } else { n_v };
        let span = if horizontal { h } else { w };
        let band = span / slots as f64;
        let pos = band * (slot_idx as f64 + 0.5) + rng.gen_range(-0.15..0.15) * band;
        let jitter = rng.gen_range(-0.12..0.12);
        let heading = if horizontal { jitter } else { std::f64::consts::FRAC_PI_2 + jitter };
        let curvature = if spec.max_curvature > 0.0 {
            rng.gen_range(-spec.max_curvature..spec.max_curvature)
        } else {
            0.0
        };
        let anchor = if horizontal {
            Point2::new(-0.3 * diag, pos)
        } else {
            Point2::new(pos, -0.3 * diag)
        };
        let length = 1.6 * diag;
        let lanes = rng.gen_range(spec.lanes_per_road.0..=spec.lanes_per_road.1);
        let dashed = rng.gen_bool(0.5);

        // Style / lane-count events along the road.
        let mut events: Vec<(f64, bool)> = Vec::new(); // (s, is_lane_change)
        let n_style = rng.gen_range(0..=spec.style_changes_max);
        for _ in 0..n_style {
            events.push((rng.gen_range(0.2 * length..0.8 * length), false));
        }
        if rng.gen_bool(spec.lane_change_probability) {
            events.push((rng.gen_range(0.25 * length..0.75 * length), true));
        }
        events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        // Enforce a minimum segment length of 6 m.
        events.dedup_by(|a, b| (a.0 - b.0).abs() < 6.0);

        let mut segments = Vec::new();
        let mut s = 0.0;
        let mut cur_lanes = lanes;
        let mut cur_dashed = dashed;
        for (es, is_lane) in events.iter().chain([(length, false)].iter()) {
            if *es - s > 1.0 {
                segments.push(SegmentPlan { s0: s, s1: *es, lanes: cur_lanes, divider_dashed: cur_dashed });
            }
            s = *es;
            if *is_lane {
                let delta: i64 = if cur_lanes <= spec.lanes_per_road.0 {
                    1
                } else if cur_lanes >= spec.lanes_per_road.1 {
                    -1
                } else if rng.gen_bool(0.5) {
                    1
                } else {
                    -1
                };
                cur_lanes = (cur_lanes as i64 + delta).max(1) as usize;
            } else {
                cur_dashed = !cur_dashed;
            }
        }
        plans.push(RoadPlan {
            id: i,
            anchor,
            heading,
            curvature,
            lane_width: LANE_WIDTH_M,
            segments,
            furniture: Vec::new(),
            cuts: Vec::new(),
        });
    }

    // Crossings: every horizontal/vertical pair that actually meets gets its
    // markings cut; managed intersections additionally get furniture.
    let mut crossings: Vec<(usize, usize, f64, f64)> = Vec::new();
    for a in 0..plans.len() {
        for b in a + 1..plans.len() {
            if a % 2 == b % 2 {
                continue; // same orientation family
            }
            if let Some((sa, sb)) = find_crossing(&plans[a], &plans[b], &Rect::new(0.0, 0.0, w, h)) {
                crossings.push((a, b, sa, sb));
            }
        }
    }
    for (a, b, sa, sb) in crossings {
        let managed = rng.gen_bool(spec.intersection_probability);
        let half_a = plans[a].max_half_width();
        let half_b = plans[b].max_half_width();
        apply_crossing(&mut plans, a, sa, half_b, managed);
        apply_crossing(&mut plans, b, sb, half_a, managed);
    }

    build_world(spec, &plans, n_p)
}

/// Cut road `idx` markings around arc position `s_x` and, for managed
/// intersections, add a stop line and crosswalk on each approach.
fn apply_crossing(plans: &mut [RoadPlan], idx: usize, s_x: f64, other_half: f64, managed: bool) {
    let cut_half = other_half + CUT_CLEARANCE_M;
    let (c0, c1) = (s_x - cut_half, s_x + cut_half);
    let plan = &mut plans[idx];
    plan.cuts.push((c0, c1));
    let mut new_segments = Vec::new();
    for seg in plan.segments.drain(..) {
        // Keep the parts outside [c0, c1].
        if seg.s1 <= c0 || seg.s0 >= c1 {
            new_segments.push(seg);
            continue;
        }
        if seg.s0 < c0 - 1.0 {
            new_segments.push(SegmentPlan { s0: seg.s0, s1: c0, ..seg });
        }
        if seg.s1 > c1 + 1.0 {
            new_segments.push(SegmentPlan { s0: c1, s1: seg.s1, ..seg });
        }
    }
    plan.segments = new_segments;
    if managed {
        // `inward` points from the boundary into the cut zone.
        for (boundary, inward) in [(c0, 1.0), (c1, -1.0)] {
            plan.furniture.push(FurniturePlan {
                kind: FurnitureKind::StopLine,
                s_center: boundary - inward * 0.4,
            });
            plan.furniture.push(FurniturePlan {
                kind: FurnitureKind::Crosswalk,
                s_center: boundary + inward * (CROSSWALK_DEPTH_M / 2.0 + 0.4),
            });
        }
    }
}

/// Locate the crossing of two road centerlines inside the extent by coarse
/// sampling plus refinement. Returns arc positions on each road.
fn find_crossing(a: &RoadPlan, b: &RoadPlan, extent: &Rect) -> Option<(f64, f64)> {
    let range = |p: &RoadPlan| {
        let lo = p.segments.iter().map(|s| s.s0).fold(f64::INFINITY, f64::min);
        let hi = p.segments.iter().map(|s| s.s1).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (a0, a1) = range(a);
    let (b0, b1) = range(b);
    if !a0.is_finite() || !b0.is_finite() {
        return None;
    }
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let coarse = 2.0;
    let mut sa = a0;
    while sa <= a1 {
        let pa = a.point_at(sa);
        let mut sb = b0;
        while sb <= b1 {
            let d = pa.dist(b.point_at(sb));
            if d < best.0 {
                best = (d, sa, sb);
            }
            sb += coarse;
        }
        sa += coarse;
    }
    let (_, mut sa, mut sb) = best;
    // Local refinement.
    for step in [0.5, 0.1, 0.02] {
        loop {
            let cur = a.point_at(sa).dist(b.point_at(sb));
            let mut improved = false;
            for (da, db) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
                if a.point_at(sa + da).dist(b.point_at(sb + db)) < cur {
                    sa += da;
                    sb += db;
                    improved = true;
                    break;
                }
            }
            if !improved {
                break;
            }
        }
    }
    let q = a.point_at(sa);
    let d = q.dist(b.point_at(sb));
    (d < 0.5 && extent.contains(q)).then_some((sa, sb))
}
