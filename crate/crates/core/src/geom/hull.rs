//! Convex hull (monotone chain) and minimum-area oriented rectangle
//! (rotating calipers).

use super::{Point2, Polygon, Result};

/// Andrew's monotone chain. Returns the hull counter-clockwise without
/// repeated first vertex. Collinear inputs collapse to the two extreme
/// points (or one point if all coincide).
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap().then(a.y.partial_cmp(&b.y).unwrap()));
    pts.dedup_by(|a, b| a.dist(*b) == 0.0);
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: Point2, a: Point2, b: Point2| (a - o).cross(b - o);
    let mut lower: Vec<Point2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 {
        // All points collinear; keep the two extremes.
        let mut ext = vec![pts[0], *pts.last().unwrap()];
        ext.dedup_by(|a, b| a.dist(*b) == 0.0);
        return ext;
    }
    lower
}

/// Minimum-area rectangle over a CCW convex hull with >= 3 vertices.
///
/// For each hull edge the three caliper indices (extreme along the edge,
/// extreme perpendicular, extreme against the edge) only advance, giving the
/// linear-time sweep. The minimum-area rectangle always has one side
/// collinear with a hull edge.
pub fn min_area_rect(hull: &[Point2]) -> Result<Polygon> {
    let n = hull.len();
    let edge_dir = |i: usize| {
        let v = hull[(i + 1) % n] - hull[i];
        v.scale(1.0 / v.norm())
    };
    let proj = |d: Point2, i: usize| d.dot(hull[i % n]);
    let perp = |d: Point2| Point2::new(-d.y, d.x);

    // Initialize calipers for edge 0 by scanning once.
    let d0 = edge_dir(0);
    let p0 = perp(d0);
    let argmax = |f: &dyn Fn(usize) -> f64| (0..n).max_by(|&a, &b| f(a).partial_cmp(&f(b)).unwrap()).unwrap();
    let mut i_max = argmax(&|i| proj(d0, i));
    let mut i_top = argmax(&|i| p0.dot(hull[i]));
    let mut i_min = argmax(&|i| -proj(d0, i));

    let mut best: Option<(f64, [Point2; 4])> = None;
    for e in 0..n {
        let d = edge_dir(e);
        let pn = perp(d);
        // Projections onto a fixed direction are unimodal over a convex hull;
        // ties only occur on an edge perpendicular to the direction, so the
        // n-step guard can never fire on valid hulls.
        let advance = |idx: &mut usize, f: &dyn Fn(usize) -> f64| {
            for _ in 0..n {
                let next = (*idx + 1) % n;
                if f(next) >= f(*idx) {
                    *idx = next;
                } else {
                    break;
                }
            }
        };
        advance(&mut i_max, &|i| proj(d, i));
        advance(&mut i_top, &|i| pn.dot(hull[i]));
        advance(&mut i_min, &|i| -proj(d, i));

        let lo = proj(d, i_min);
        let hi = proj(d, i_max);
        let base = pn.dot(hull[e]);
        let top = pn.dot(hull[i_top]);
        let area = (hi - lo) * (top - base);
        if best.as_ref().map_or(true, |(a, _)| area < *a) {
            let corner = |s: f64, t: f64| d.scale(s) + pn.scale(t);
            best = Some((
                area,
                [
                    corner(lo, base),
                    corner(hi, base),
                    corner(hi, top),
                    corner(lo, top),
                ],
            ));
        }
    }
    let (_, corners) = best.unwrap();
    Polygon::new(corners.to_vec())
}
