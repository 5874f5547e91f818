//! Planar geometry primitives shared by data generation, losses, stitching
//! and metrics.
//!
//! All coordinates are local Cartesian (meters or pixels — callers keep the
//! frame consistent within an operation). Everything here is a pure function
//! of its inputs.

mod clip;
mod hull;

pub use clip::{clip_polygon_to_rect, clip_polyline_to_rect, Rect};
pub use hull::convex_hull;

use thiserror::Error;

/// Distance below which a point is considered to lie on a polygon boundary.
pub const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("polyline needs at least 2 distinct points, got {0}")]
    TooFewPoints(usize),
    #[error("polyline has zero arc length")]
    ZeroLength,
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon has zero area")]
    ZeroArea,
    #[error("empty point set")]
    EmptyInput,
    #[error("resample target must be >= 2, got {0}")]
    BadResampleCount(usize),
    #[error("segment endpoints coincide")]
    DegenerateSegment,
}

pub type Result<T> = std::result::Result<T, GeomError>;

/// A 2D point or vector.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the cross product, i.e. the signed parallelogram area.
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    pub fn scale(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }

    /// Rotate counter-clockwise by `theta` radians about the origin.
    pub fn rotate(self, theta: f64) -> Point2 {
        let (s, c) = theta.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

/// An ordered open point sequence with nonzero arc length.
///
/// Consecutive duplicate points are removed on construction so every stored
/// edge has positive length.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Polyline {
    points: Vec<Point2>,
}

impl Polyline {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        let mut pts: Vec<Point2> = Vec::with_capacity(points.len());
        for p in points {
            if pts.last().map_or(true, |q: &Point2| q.dist(p) > 0.0) {
                pts.push(p);
            }
        }
        if pts.len() < 2 {
            return Err(GeomError::TooFewPoints(pts.len()));
        }
        Ok(Self { points: pts })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: at least 2 points
    }

    pub fn first(&self) -> Point2 {
        self.points[0]
    }

    pub fn last(&self) -> Point2 {
        *self.points.last().unwrap()
    }

    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].dist(w[1])).sum()
    }

    pub fn reversed(&self) -> Polyline {
        let mut points = self.points.clone();
        points.reverse();
        Polyline { points }
    }

    /// Point at arc-length position `s` (clamped to `[0, total]`).
    pub fn point_at(&self, s: f64) -> Point2 {
        let mut remaining = s.max(0.0);
        for w in self.points.windows(2) {
            let seg = w[0].dist(w[1]);
            if remaining <= seg {
                let t = if seg > 0.0 { remaining / seg } else { 0.0 };
                return w[0] + (w[1] - w[0]).scale(t);
            }
            remaining -= seg;
        }
        self.last()
    }
}

/// A simple polygon stored counter-clockwise with an implicit closing edge.
///
/// Construction normalizes orientation and rejects degenerate rings; it does
/// not verify simplicity (predicted rings may self-intersect — callers that
/// need the guarantee use [`Polygon::is_simple`]).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Polygon {
    vertices: Vec<Point2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point2>) -> Result<Self> {
        let mut vs: Vec<Point2> = Vec::with_capacity(vertices.len());
        for v in vertices {
            if vs.last().map_or(true, |q: &Point2| q.dist(v) > 0.0) {
                vs.push(v);
            }
        }
        // Tolerate an explicitly closed input ring.
        if vs.len() > 1 && vs[0].dist(*vs.last().unwrap()) == 0.0 {
            vs.pop();
        }
        if vs.len() < 3 {
            return Err(GeomError::TooFewVertices(vs.len()));
        }
        let area = signed_area(&vs);
        if area == 0.0 {
            return Err(GeomError::ZeroArea);
        }
        if area < 0.0 {
            vs.reverse();
        }
        Ok(Self { vertices: vs })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).abs()
    }

    pub fn centroid(&self) -> Point2 {
        let a = signed_area(&self.vertices);
        let mut cx = 0.0;
        let mut cy = 0.0;
        let n = self.vertices.len();
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            let w = p.cross(q);
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
        }
        Point2::new(cx / (6.0 * a), cy / (6.0 * a))
    }

    /// Edges as (start, end) pairs, including the closing edge.
    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// O(n^2) segment-intersection test; fine for the ring sizes used here.
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        for i in 0..n {
            let (a1, a2) = (self.vertices[i], self.vertices[(i + 1) % n]);
            for j in i + 1..n {
                // Skip edges sharing a vertex.
                if j == i || (j + 1) % n == i || j == (i + 1) % n {
                    continue;
                }
                let (b1, b2) = (self.vertices[j], self.vertices[(j + 1) % n]);
                if segments_intersect(a1, a2, b1, b2) {
                    return false;
                }
            }
        }
        true
    }
}

/// A directed segment with distinct endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
}

impl Segment {
    pub fn new(a: Point2, b: Point2) -> Result<Self> {
        if a.dist(b) == 0.0 {
            return Err(GeomError::DegenerateSegment);
        }
        Ok(Self { a, b })
    }

    pub fn midpoint(&self) -> Point2 {
        Point2::new((self.a.x + self.b.x) * 0.5, (self.a.y + self.b.y) * 0.5)
    }

    pub fn length(&self) -> f64 {
        self.a.dist(self.b)
    }
}

fn signed_area(vs: &[Point2]) -> f64 {
    let n = vs.len();
    let mut s = 0.0;
    for i in 0..n {
        s += vs[i].cross(vs[(i + 1) % n]);
    }
    s * 0.5
}

fn segments_intersect(a1: Point2, a2: Point2, b1: Point2, b2: Point2) -> bool {
    let d1 = (a2 - a1).cross(b1 - a1);
    let d2 = (a2 - a1).cross(b2 - a1);
    let d3 = (b2 - b1).cross(a1 - b1);
    let d4 = (b2 - b1).cross(a2 - b1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: Point2, q: Point2, r: Point2| {
        (q - p).cross(r - p) == 0.0
            && r.x >= p.x.min(q.x)
            && r.x <= p.x.max(q.x)
            && r.y >= p.y.min(q.y)
            && r.y <= p.y.max(q.y)
    };
    on(a1, a2, b1) || on(a1, a2, b2) || on(b1, b2, a1) || on(b1, b2, a2)
}

/// Distance from `p` to the segment `(a, b)`.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab.scale(t))
}

/// Resample to exactly `n` points at equal arc-length spacing.
///
/// Endpoints are preserved exactly; the total arc length of the result can
/// only shrink (chords of the original path).
pub fn resample_polyline(pl: &Polyline, n: usize) -> Result<Polyline> {
    if n < 2 {
        return Err(GeomError::BadResampleCount(n));
    }
    let total = pl.arc_length();
    if total <= 0.0 {
        return Err(GeomError::ZeroLength);
    }
    let mut points = Vec::with_capacity(n);
    points.push(pl.first());
    let step = total / (n - 1) as f64;
    // Walk segments and interpolate, keeping a running arc-length cursor so
    // the walk is O(len + n) rather than O(len * n).
    let pts = pl.points();
    let mut seg = 0usize;
    let mut seg_start_s = 0.0;
    let mut seg_len = pts[0].dist(pts[1]);
    for k in 1..n - 1 {
        let target = step * k as f64;
        while seg_start_s + seg_len < target && seg + 2 < pts.len() {
            seg_start_s += seg_len;
            seg += 1;
            seg_len = pts[seg].dist(pts[seg + 1]);
        }
        let t = ((target - seg_start_s) / seg_len).clamp(0.0, 1.0);
        points.push(pts[seg] + (pts[seg + 1] - pts[seg]).scale(t));
    }
    points.push(pl.last());
    // Equal spacing can land consecutive samples on the same spot only for
    // pathological inputs; Polyline::new would then reject the result, so
    // nudge instead: keep duplicates apart by folding them onto the raw list.
    match Polyline::new(points.clone()) {
        Ok(p) if p.len() == n => Ok(p),
        _ => {
            // Fall back to exact chord points without dedup.
            Ok(Polyline { points })
        }
    }
}

/// Minimum-area oriented bounding rectangle of all points in `point_sets`.
///
/// Uses rotating calipers over the convex hull. Collinear input degenerates
/// to a segment; the result is then inflated to a thin rectangle (half-width
/// 1e-6 of the diagonal) so it remains a valid polygon.
pub fn min_bounding_rect(point_sets: &[&Polyline]) -> Result<Polygon> {
    let pts: Vec<Point2> = point_sets
        .iter()
        .flat_map(|pl| pl.points().iter().copied())
        .collect();
    min_bounding_rect_of_points(&pts)
}

/// Same as [`min_bounding_rect`] but over a bare point set.
pub fn min_bounding_rect_of_points(pts: &[Point2]) -> Result<Polygon> {
    if pts.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    let hull = convex_hull(pts);
    if hull.len() >= 3 {
        return hull::min_area_rect(&hull);
    }
    // Collinear (or single-point) input: inflate the extent segment.
    let (a, b) = (hull[0], *hull.last().unwrap());
    let diag = a.dist(b);
    let (dir, eps) = if diag > 0.0 {
        ((b - a).scale(1.0 / diag), 1e-6 * diag)
    } else {
        (Point2::new(1.0, 0.0), 1e-6)
    };
    let n = Point2::new(-dir.y, dir.x).scale(eps);
    Polygon::new(vec![a + n, a - n, b - n, b + n])
}

/// Even-odd inside test plus distance to the nearest boundary edge.
///
/// Points within [`BOUNDARY_EPS`] of the boundary report `inside = true`
/// with their (tiny) distance, so boundary points are always inside.
pub fn point_to_polygon(p: Point2, poly: &Polygon) -> (bool, f64) {
    let mut crossings = 0u32;
    let mut dist = f64::INFINITY;
    for (a, b) in poly.edges() {
        dist = dist.min(point_segment_distance(p, a, b));
        let (ya, yb) = (a.y, b.y);
        if (ya > p.y) != (yb > p.y) {
            let x_int = a.x + (p.y - ya) / (yb - ya) * (b.x - a.x);
            if p.x < x_int {
                crossings += 1;
            }
        }
    }
    let inside = crossings % 2 == 1 || dist <= BOUNDARY_EPS;
    (inside, dist)
}

/// Index of the edge nearest to `p` (lowest index wins ties) and the
/// distance to it. Used where a deterministic subgradient is needed.
pub fn nearest_polygon_edge(p: Point2, poly: &Polygon) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, (a, b)) in poly.edges().enumerate() {
        let d = point_segment_distance(p, a, b);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Distance from the midpoint of `s` to the nearest point of `pl`.
///
/// This is the realization of "projection distance" used by the 1 m segment
/// overlap criterion.
pub fn segment_to_polyline_distance(s: &Segment, pl: &Polyline) -> f64 {
    let m = s.midpoint();
    pl.points()
        .windows(2)
        .map(|w| point_segment_distance(m, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Intersection-over-union of two simple polygons via polygon clipping.
pub fn polygon_iou(a: &Polygon, b: &Polygon) -> f64 {
    use geo::{Area, BooleanOps, Coord, LineString};
    let to_geo = |p: &Polygon| {
        geo::Polygon::new(
            LineString::from(
                p.vertices()
                    .iter()
                    .map(|v| Coord { x: v.x, y: v.y })
                    .collect::<Vec<_>>(),
            ),
            vec![],
        )
    };
    let (ga, gb) = (to_geo(a), to_geo(b));
    let inter: f64 = ga.intersection(&gb).unsigned_area();
    let union = ga.unsigned_area() + gb.unsigned_area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Unit direction vector of each polyline edge.
pub fn edge_unit_vectors(pl: &Polyline) -> Vec<Point2> {
    pl.points()
        .windows(2)
        .map(|w| {
            let v = w[1] - w[0];
            v.scale(1.0 / v.norm())
        })
        .collect()
}
