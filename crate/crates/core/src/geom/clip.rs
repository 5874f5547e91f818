//! Clipping against axis-aligned rectangles (tile windows).

use super::{Point2, Polygon, Polyline};

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
}

/// Liang–Barsky parametric clip of one segment; returns entry/exit
/// parameters in `[0, 1]` or `None` if fully outside.
fn clip_segment_params(a: Point2, b: Point2, r: &Rect) -> Option<(f64, f64)> {
    let d = b - a;
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    let checks = [
        (-d.x, a.x - r.x0),
        (d.x, r.x1 - a.x),
        (-d.y, a.y - r.y0),
        (d.y, r.y1 - a.y),
    ];
    for (p, q) in checks {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                if t > t1 {
                    return None;
                }
                t0 = t0.max(t);
            } else {
                if t < t0 {
                    return None;
                }
                t1 = t1.min(t);
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Clip a polyline to a rectangle, producing zero or more sub-polylines.
///
/// Entry and exit points lie exactly on the rectangle border (up to one
/// interpolation rounding).
pub fn clip_polyline_to_rect(pl: &Polyline, r: &Rect) -> Vec<Polyline> {
    let mut out: Vec<Polyline> = Vec::new();
    let mut current: Vec<Point2> = Vec::new();
    let pts = pl.points();
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        match clip_segment_params(a, b, r) {
            Some((t0, t1)) => {
                let pa = a + (b - a).scale(t0);
                let pb = a + (b - a).scale(t1);
                let continuous = current
                    .last()
                    .map_or(false, |q: &Point2| q.dist(pa) < 1e-9);
                if !continuous {
                    if current.len() >= 2 {
                        if let Ok(p) = Polyline::new(std::mem::take(&mut current)) {
                            out.push(p);
                        }
                    }
                    current = vec![pa];
                }
                current.push(pb);
                if t1 < 1.0 {
                    // Exits the window: close the run.
                    if current.len() >= 2 {
                        if let Ok(p) = Polyline::new(std::mem::take(&mut current)) {
                            out.push(p);
                        }
                    }
                    current.clear();
                }
            }
            None => {
                if current.len() >= 2 {
                    if let Ok(p) = Polyline::new(std::mem::take(&mut current)) {
                        out.push(p);
                    }
                }
                current.clear();
            }
        }
    }
    if current.len() >= 2 {
        if let Ok(p) = Polyline::new(current) {
            out.push(p);
        }
    }
    out
}

/// Sutherland–Hodgman clip of a polygon against a rectangle.
///
/// Returns `None` when the intersection is empty or degenerate.
pub fn clip_polygon_to_rect(poly: &Polygon, r: &Rect) -> Option<Polygon> {
    // Half-planes as (inside test, segment intersection along one axis).
    enum Side {
        XMin(f64),
        XMax(f64),
        YMin(f64),
        YMax(f64),
    }
    let sides = [Side::XMin(r.x0), Side::XMax(r.x1), Side::YMin(r.y0), Side::YMax(r.y1)];
    let inside = |s: &Side, p: Point2| match *s {
        Side::XMin(v) => p.x >= v,
        Side::XMax(v) => p.x <= v,
        Side::YMin(v) => p.y >= v,
        Side::YMax(v) => p.y <= v,
    };
    let intersect = |s: &Side, a: Point2, b: Point2| -> Point2 {
        match *s {
            Side::XMin(v) | Side::XMax(v) => {
                let t = (v - a.x) / (b.x - a.x);
                Point2::new(v, a.y + t * (b.y - a.y))
            }
            Side::YMin(v) | Side::YMax(v) => {
                let t = (v - a.y) / (b.y - a.y);
                Point2::new(a.x + t * (b.x - a.x), v)
            }
        }
    };
    let mut ring: Vec<Point2> = poly.vertices().to_vec();
    for side in &sides {
        let input = std::mem::take(&mut ring);
        if input.is_empty() {
            return None;
        }
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let prev = input[(i + n - 1) % n];
            let (cin, pin) = (inside(side, cur), inside(side, prev));
            if cin {
                if !pin {
                    ring.push(intersect(side, prev, cur));
                }
                ring.push(cur);
            } else if pin {
                ring.push(intersect(side, prev, cur));
            }
        }
    }
    Polygon::new(ring).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pl(pts: &[(f64, f64)]) -> Polyline {
        Polyline::new(pts.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap()
    }

    #[test]
    fn clip_crossing_line() {
        let r = Rect::new(0.0, 0.0, 1.0, 1.0);
        let line = pl(&[(-1.0, 0.5), (2.0, 0.5)]);
        let parts = clip_polyline_to_rect(&line, &r);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].first(), Point2::new(0.0, 0.5));
        assert_eq!(parts[0].last(), Point2::new(1.0, 0.5));
    }

    #[test]
    fn clip_reentrant_line_two_parts() {
        let r = Rect::new(0.0, 0.0, 10.0, 10.0);
        // Dips below the window in the middle.
        let line = pl(&[(-1.0, 5.0), (3.0, -1.0), (7.0, -1.0), (11.0, 5.0)]);
        let parts = clip_polyline_to_rect(&line, &r);
        assert_eq!(parts.len(), 2);
        for part in &parts {
            for p in [part.first(), part.last()] {
                let on_border = p.x.abs() < 1e-9
                    || (p.x - 10.0).abs() < 1e-9
                    || p.y.abs() < 1e-9
                    || (p.y - 10.0).abs() < 1e-9;
                assert!(on_border, "{p:?} not on border");
            }
        }
    }

    #[test]
    fn clip_fully_inside_unchanged() {
        let r = Rect::new(0.0, 0.0, 1.0, 1.0);
        let line = pl(&[(0.1, 0.1), (0.9, 0.9)]);
        let parts = clip_polyline_to_rect(&line, &r);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0], line);
    }

    #[test]
    fn clip_polygon_half_overlap() {
        let r = Rect::new(0.0, 0.0, 1.0, 1.0);
        let poly = Polygon::new(vec![
            Point2::new(0.5, -0.5),
            Point2::new(1.5, -0.5),
            Point2::new(1.5, 0.5),
            Point2::new(0.5, 0.5),
        ])
        .unwrap();
        let clipped = clip_polygon_to_rect(&poly, &r).unwrap();
        assert!((clipped.area() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn clip_polygon_outside_is_none() {
        let r = Rect::new(0.0, 0.0, 1.0, 1.0);
        let poly = Polygon::new(vec![
            Point2::new(5.0, 5.0),
            Point2::new(6.0, 5.0),
            Point2::new(6.0, 6.0),
        ])
        .unwrap();
        assert!(clip_polygon_to_rect(&poly, &r).is_none());
    }
}
