//! Instance-level map quality metrics: endpoint + overlap matching for open
//! elements, IoU matching for closed elements, and recall-at-precision
//! tables over a criteria grid.

mod report;

pub use report::{records_json, render_table};

use crate::geom::{polygon_iou, segment_to_polyline_distance, Segment};
use crate::map::{ElementClass, ElementInstance, VectorMap};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("open-shape matcher got a closed-shape element")]
    ClosedInOpenMatcher,
    #[error("closed-shape matcher got an open-shape element")]
    OpenInClosedMatcher,
}

/// Matching thresholds for one evaluation cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchCriteria {
    /// Projection distance threshold in meters.
    pub d: f64,
    /// Required fraction of 1 m segments within `d`.
    pub r: f64,
    /// Endpoint L2 limit in meters.
    pub endpoint_max: f64,
    /// Overlap segmentation step in meters.
    pub segment_step: f64,
    /// IoU threshold for closed shapes.
    pub iou_min: f64,
}

impl MatchCriteria {
    pub fn new(d: f64, r: f64) -> Self {
        Self { d, r, endpoint_max: 3.0, segment_step: 1.0, iou_min: 0.5 }
    }
}

/// The paper's evaluation grid: d in {0.5, 1} x r in {0.5, 0.8}.
pub fn criteria_grid() -> Vec<MatchCriteria> {
    let mut out = Vec::new();
    for d in [0.5, 1.0] {
        for r in [0.5, 0.8] {
            out.push(MatchCriteria::new(d, r));
        }
    }
    out
}

pub const DEFAULT_PRECISION_TARGETS: [f64; 3] = [0.80, 0.90, 0.95];

/// Do two open-shape instances match under the criteria?
///
/// Requires equal classes, endpoint distances below 3 m under the better of
/// direct/swapped endpoint pairing, and the prediction-side 1 m segment
/// overlap ratio above `r`. The trailing partial segment participates with
/// its length fraction as weight.
pub fn is_open_match(
    pred: &ElementInstance,
    gt: &ElementInstance,
    c: &MatchCriteria,
) -> Result<bool, EvalError> {
    if pred.class.is_closed() || gt.class.is_closed() {
        return Err(EvalError::ClosedInOpenMatcher);
    }
    if pred.class != gt.class {
        return Ok(false);
    }
    let (ps, pe) = (pred.points.first(), pred.points.last());
    let (gs, ge) = (gt.points.first(), gt.points.last());
    let direct = ps.dist(gs).max(pe.dist(ge));
    let swapped = ps.dist(ge).max(pe.dist(gs));
    if direct.min(swapped) >= c.endpoint_max {
        return Ok(false);
    }

    let total = pred.points.arc_length();
    let mut matched_w = 0.0;
    let mut total_w = 0.0;
    let mut s = 0.0;
    while s < total - 1e-12 {
        let step = c.segment_step.min(total - s);
        let a = pred.points.point_at(s);
        let b = pred.points.point_at(s + step);
        let w = step / c.segment_step;
        total_w += w;
        if let Ok(seg) = Segment::new(a, b) {
            if segment_to_polyline_distance(&seg, &gt.points) < c.d {
                matched_w += w;
            }
        }
        s += step;
    }
    if total_w <= 0.0 {
        return Ok(false);
    }
    Ok(matched_w / total_w > c.r)
}

/// Closed shapes match on class consistency and IoU above the threshold.
pub fn is_closed_match(
    pred: &ElementInstance,
    gt: &ElementInstance,
    c: &MatchCriteria,
) -> Result<bool, EvalError> {
    if !pred.class.is_closed() || !gt.class.is_closed() {
        return Err(EvalError::OpenInClosedMatcher);
    }
    if pred.class != gt.class {
        return Ok(false);
    }
    let (Some(pp), Some(gp)) = (pred.as_polygon(), gt.as_polygon()) else {
        return Ok(false);
    };
    Ok(polygon_iou(&pp, &gp) > c.iou_min)
}

fn instances_match(pred: &ElementInstance, gt: &ElementInstance, c: &MatchCriteria) -> bool {
    match (pred.class.is_closed(), gt.class.is_closed()) {
        (false, false) => is_open_match(pred, gt, c).unwrap_or(false),
        (true, true) => is_closed_match(pred, gt, c).unwrap_or(false),
        _ => false,
    }
}

/// Greedy score-ordered one-to-one matching: each prediction (descending
/// score, id as tie break) claims the first unmatched ground truth it
/// matches. Returns, per prediction in the *sorted* order, the matched gt
/// index, plus the sorted order itself.
pub fn match_tileset(
    preds: &[ElementInstance],
    gts: &[ElementInstance],
    c: &MatchCriteria,
) -> (Vec<usize>, Vec<Option<usize>>) {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .score
            .partial_cmp(&preds[a].score)
            .unwrap()
            .then_with(|| preds[a].instance_id.cmp(&preds[b].instance_id))
    });
    let mut taken = vec![false; gts.len()];
    let mut assigned: Vec<Option<usize>> = Vec::with_capacity(preds.len());
    for &pi in &order {
        let mut hit = None;
        for (gi, gt) in gts.iter().enumerate() {
            if !taken[gi] && instances_match(&preds[pi], gt, c) {
                taken[gi] = true;
                hit = Some(gi);
                break;
            }
        }
        assigned.push(hit);
    }
    (order, assigned)
}

/// Highest recall over score-threshold operating points whose precision
/// reaches `p_target`. Returns `(recall, reachable)`.
pub fn recall_at_precision(
    scores_matched: &[(f64, bool)],
    n_gt: usize,
    p_target: f64,
) -> (f64, bool) {
    if scores_matched.is_empty() {
        return if n_gt == 0 { (1.0, true) } else { (0.0, false) };
    }
    if n_gt == 0 {
        // Any prediction is a false positive; precision can only be 0.
        return (0.0, false);
    }
    let mut sorted: Vec<(f64, bool)> = scores_matched.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut best: Option<f64> = None;
    let mut tp = 0usize;
    for k in 0..sorted.len() {
        if sorted[k].1 {
            tp += 1;
        }
        // Operating points sit at score boundaries: skip mid-tie prefixes.
        if k + 1 < sorted.len() && sorted[k + 1].0 == sorted[k].0 {
            continue;
        }
        let precision = tp as f64 / (k + 1) as f64;
        let recall = tp as f64 / n_gt as f64;
        if precision >= p_target {
            best = Some(best.map_or(recall, |b: f64| b.max(recall)));
        }
    }
    match best {
        Some(r) => (r, true),
        None => (0.0, false),
    }
}

/// Metrics for one class (or pooled) in one criteria cell.
#[derive(Debug, Clone, Serialize)]
pub struct ClassReport {
    /// None = pooled over classes.
    pub class: Option<ElementClass>,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
    /// `(p_target, recall, reachable)` triplets.
    pub recall_at: Vec<(f64, f64, bool)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellReport {
    pub d: f64,
    pub r: f64,
    pub overall: ClassReport,
    pub per_class: Vec<ClassReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub cells: Vec<CellReport>,
}

/// Full grid evaluation of predictions against ground truth.
pub fn evaluate(pred: &VectorMap, gt: &VectorMap, p_targets: &[f64]) -> EvalReport {
    let preds: Vec<ElementInstance> = pred.elements().cloned().collect();
    let gts: Vec<ElementInstance> = gt.elements().cloned().collect();
    let mut cells = Vec::new();
    for c in criteria_grid() {
        let (order, assigned) = match_tileset(&preds, &gts, &c);
        let build = |class: Option<ElementClass>| -> ClassReport {
            let in_class = |e: &ElementInstance| class.map_or(true, |cl| e.class == cl);
            let scores: Vec<(f64, bool)> = order
                .iter()
                .zip(&assigned)
                .filter(|(pi, _)| in_class(&preds[**pi]))
                .map(|(pi, gi)| (preds[*pi].score, gi.is_some()))
                .collect();
            let n_gt = gts.iter().filter(|g| in_class(g)).count();
            let tp = scores.iter().filter(|(_, m)| *m).count();
            let fp = scores.len() - tp;
            let recall_at = p_targets
                .iter()
                .map(|&p| {
                    let (rec, ok) = recall_at_precision(&scores, n_gt, p);
                    (p, rec, ok)
                })
                .collect();
            ClassReport { class, tp, fp, fn_count: n_gt - tp, recall_at }
        };
        let mut classes: Vec<ElementClass> = gts
            .iter()
            .chain(preds.iter())
            .map(|e| e.class)
            .filter(|c| *c != ElementClass::GroupPolygon)
            .collect();
        classes.sort_by_key(|c| c.id());
        classes.dedup();
        cells.push(CellReport {
            d: c.d,
            r: c.r,
            overall: build(None),
            per_class: classes.into_iter().map(|cl| build(Some(cl))).collect(),
        });
    }
    EvalReport { cells }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Point2, Polyline};
    use crate::map::Frame;

    fn open(id: &str, score: f64, pts: &[(f64, f64)]) -> ElementInstance {
        ElementInstance::new(
            id,
            ElementClass::LaneSolid,
            Polyline::new(pts.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap(),
            score,
            Frame::World,
        )
    }

    fn line(id: &str, score: f64, y: f64, x0: f64, x1: f64) -> ElementInstance {
        let pts: Vec<(f64, f64)> = (0..=20)
            .map(|i| (x0 + (x1 - x0) * i as f64 / 20.0, y))
            .collect();
        open(id, score, &pts)
    }

    #[test]
    fn self_match_all_cells() {
        let gt = line("a", 1.0, 0.0, 0.0, 10.0);
        for c in criteria_grid() {
            assert!(is_open_match(&gt, &gt, &c).unwrap());
        }
    }

    #[test]
    fn lateral_offset_uniform() {
        let gt = line("gt", 1.0, 0.0, 0.0, 10.0);
        let pred = line("p", 0.9, 0.75, 0.0, 10.0);
        for r in [0.5, 0.8] {
            assert!(is_open_match(&pred, &gt, &MatchCriteria::new(1.0, r)).unwrap());
            assert!(!is_open_match(&pred, &gt, &MatchCriteria::new(0.5, r)).unwrap());
        }
    }

    #[test]
    fn tail_offset_partial_overlap() {
        let gt = line("gt", 1.0, 0.0, 0.0, 10.0);
        // First 7 m exact, last 3 m offset by 2 m laterally.
        let mut pts: Vec<(f64, f64)> = (0..=13).map(|i| (i as f64 * 0.5, 0.0)).collect();
        pts.push((7.0, 2.0));
        pts.extend((0..=6).map(|i| (7.0 + i as f64 * 0.5, 2.0)));
        let pred = open("p", 0.9, &pts);
        assert!(is_open_match(&pred, &gt, &MatchCriteria::new(1.0, 0.5)).unwrap());
        assert!(!is_open_match(&pred, &gt, &MatchCriteria::new(1.0, 0.8)).unwrap());
    }

    #[test]
    fn closed_match_iou() {
        let ring = |cx: f64| {
            let pts: Vec<(f64, f64)> =
                vec![(cx, 0.0), (cx + 2.0, 0.0), (cx + 2.0, 2.0), (cx, 2.0)];
            let mut e = open("cw", 1.0, &pts);
            e.class = ElementClass::Crosswalk;
            e
        };
        let c = MatchCriteria::new(1.0, 0.5);
        assert!(is_closed_match(&ring(0.0), &ring(0.0), &c).unwrap());
        assert!(!is_closed_match(&ring(0.0), &ring(10.0), &c).unwrap());
        // Half overlap: IoU = 1/3 < 0.5.
        assert!(!is_closed_match(&ring(1.0), &ring(0.0), &c).unwrap());
    }

    #[test]
    fn greedy_matching_duplicates() {
        let gt = vec![line("g", 1.0, 0.0, 0.0, 10.0)];
        let preds = vec![line("p1", 0.9, 0.0, 0.0, 10.0), line("p2", 0.8, 0.0, 0.0, 10.0)];
        let (order, assigned) = match_tileset(&preds, &gt, &MatchCriteria::new(1.0, 0.8));
        assert_eq!(order, vec![0, 1]);
        assert_eq!(assigned, vec![Some(0), None]);
    }

    #[test]
    fn rp_sweep_hand_oracle() {
        // Score ladder with TP pattern [1,1,0,1,1,1,0,0,1,0] over 10 gts.
        let flags = [true, true, false, true, true, true, false, false, true, false];
        let scores: Vec<(f64, bool)> = flags
            .iter()
            .enumerate()
            .map(|(i, &m)| (1.0 - i as f64 * 0.05, m))
            .collect();
        // Hand sweep: precision >= 0.8 holds at k = 1..=6 (p = 1, 1, 2/3...).
        // k=6: tp=5, p=5/6=0.833, recall=0.5; k=9: tp=7, p=7/9=0.777 < 0.8.
        let (rec, ok) = recall_at_precision(&scores, 10, 0.8);
        assert!(ok);
        assert!((rec - 0.5).abs() < 1e-12, "recall {rec}");
        // Perfect detector reaches recall 1 at any precision target.
        let perfect: Vec<(f64, bool)> = (0..10).map(|i| (1.0 - i as f64 * 0.01, true)).collect();
        assert_eq!(recall_at_precision(&perfect, 10, 0.95), (1.0, true));
        // No predictions.
        assert_eq!(recall_at_precision(&[], 10, 0.8), (0.0, false));
        assert_eq!(recall_at_precision(&[], 0, 0.8), (1.0, true));
    }

    #[test]
    fn evaluate_gt_vs_itself_is_all_ones() {
        let gt = VectorMap {
            groups: vec![crate::map::LaneGroup {
                group_id: "g".into(),
                elements: vec![line("a", 1.0, 0.0, 0.0, 10.0), line("b", 1.0, 3.5, 0.0, 10.0)],
                polygon: crate::geom::min_bounding_rect(&[
                    &line("a", 1.0, 0.0, 0.0, 10.0).points,
                    &line("b", 1.0, 3.5, 0.0, 10.0).points,
                ])
                .unwrap(),
                polygon_score: 1.0,
            }],
            provenance: vec![],
        };
        let report = evaluate(&gt, &gt, &DEFAULT_PRECISION_TARGETS);
        for cell in &report.cells {
            for (_, rec, ok) in &cell.overall.recall_at {
                assert!(*ok);
                assert_eq!(*rec, 1.0);
            }
            assert_eq!(cell.overall.fp, 0);
            assert_eq!(cell.overall.fn_count, 0);
        }
    }

    #[test]
    fn evaluate_empty_predictions_all_zero() {
        let gt = VectorMap {
            groups: vec![crate::map::LaneGroup {
                group_id: "g".into(),
                elements: vec![line("a", 1.0, 0.0, 0.0, 10.0)],
                polygon: crate::geom::min_bounding_rect(&[&line("a", 1.0, 0.0, 0.0, 10.0).points])
                    .unwrap(),
                polygon_score: 1.0,
            }],
            provenance: vec![],
        };
        let report = evaluate(&VectorMap::default(), &gt, &DEFAULT_PRECISION_TARGETS);
        for cell in &report.cells {
            for (_, rec, ok) in &cell.overall.recall_at {
                assert!(!ok);
                assert_eq!(*rec, 0.0);
            }
        }
    }
}
