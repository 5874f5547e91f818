//! Group organization and cross-tile instance merging.

use super::{ElementInstance, LaneGroup, MapError};
use crate::geom::{min_bounding_rect, point_to_polygon, resample_polyline, Polygon, Polyline};

/// Assign elements to the scored polygons that contain them.
///
/// Each element goes to the polygon containing the majority of its points;
/// ties break toward the smallest mean point-to-centroid distance. Elements
/// contained by no polygon become singleton groups under their own bounding
/// rectangle.
pub fn organize_groups(
    elements: &[ElementInstance],
    polygons: &[(Polygon, f64)],
) -> Vec<LaneGroup> {
    let mut members: Vec<Vec<ElementInstance>> = vec![Vec::new(); polygons.len()];
    let mut singletons: Vec<ElementInstance> = Vec::new();

    for e in elements {
        let mut best: Option<(usize, usize, f64)> = None; // (poly idx, contained, tie dist)
        for (pi, (poly, _)) in polygons.iter().enumerate() {
            let contained = e
                .points
                .points()
                .iter()
                .filter(|p| point_to_polygon(**p, poly).0)
                .count();
            if contained == 0 {
                continue;
            }
            let centroid = poly.centroid();
            let mean_dist = e.points.points().iter().map(|p| p.dist(centroid)).sum::<f64>()
                / e.points.len() as f64;
            let better = match &best {
                None => true,
                Some((_, c, d)) => contained > *c || (contained == *c && mean_dist < *d),
            };
            if better {
                best = Some((pi, contained, mean_dist));
            }
        }
        // Winner is the polygon holding the most points; only elements with
        // zero containment anywhere fall back to singleton groups.
        match best {
            Some((pi, _, _)) => members[pi].push(e.clone()),
            None => singletons.push(e.clone()),
        }
    }

    let mut out = Vec::new();
    for (pi, (poly, score)) in polygons.iter().enumerate() {
        if members[pi].is_empty() {
            continue;
        }
        out.push(LaneGroup {
            group_id: format!("p{pi}"),
            elements: std::mem::take(&mut members[pi]),
            polygon: poly.clone(),
            polygon_score: *score,
        });
    }
    for (si, e) in singletons.into_iter().enumerate() {
        let polygon = min_bounding_rect(&[&e.points]).expect("element points are non-empty");
        out.push(LaneGroup {
            group_id: format!("s{si}"),
            elements: vec![e],
            polygon,
            polygon_score: 1.0,
        });
    }
    out
}

/// Merge two open instances of the same class at their nearest endpoint
/// pair, then resample back to `n_p` points. The merged score is the more
/// pessimistic of the two.
pub fn merge_instances(
    a: &ElementInstance,
    b: &ElementInstance,
    n_p: usize,
) -> Result<ElementInstance, MapError> {
    if a.class.is_closed() || b.class.is_closed() {
        return Err(MapError::MergeClosedShape);
    }
    if a.class != b.class {
        return Err(MapError::MergeClassMismatch);
    }
    // Four endpoint pairings; orient `a` to end at the junction and `b` to
    // start at it.
    let candidates = [
        (false, false, a.points.last().dist(b.points.first())),
        (false, true, a.points.last().dist(b.points.last())),
        (true, false, a.points.first().dist(b.points.first())),
        (true, true, a.points.first().dist(b.points.last())),
    ];
    let (flip_a, flip_b, _) = candidates
        .iter()
        .copied()
        .min_by(|x, y| x.2.partial_cmp(&y.2).unwrap())
        .unwrap();
    let pa = if flip_a { a.points.reversed() } else { a.points.clone() };
    let pb = if flip_b { b.points.reversed() } else { b.points.clone() };

    let mut pts = pa.points().to_vec();
    let junction_gap = pa.last().dist(pb.first());
    let mut rest = pb.points().iter();
    if junction_gap < 1e-9 {
        rest.next(); // drop the duplicate junction point
    }
    pts.extend(rest.copied());
    let merged = Polyline::new(pts)?;
    let resampled = resample_polyline(&merged, n_p)?;
    Ok(ElementInstance {
        instance_id: format!("{}+{}", a.instance_id, b.instance_id),
        class: a.class,
        points: resampled,
        score: a.score.min(b.score),
        frame: a.frame,
    })
}
