//! Hierarchical bipartite matching: exact instance-level assignment over a
//! class + point-set cost, with a point-level search over the equivalent
//! permutations of each ground-truth instance.

use crate::geom::Point2;

/// Cost weights for the matching objective.
#[derive(Debug, Clone, Copy)]
pub struct MatchWeights {
    pub w_cls: f64,
    pub w_pts: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self { w_cls: 2.0, w_pts: 5.0 }
    }
}

/// A ground-truth instance as seen by the matcher (normalized coordinates).
#[derive(Debug, Clone)]
pub struct GtTarget {
    pub class_id: usize,
    pub points: Vec<Point2>,
    pub closed: bool,
}

#[derive(Debug, Clone)]
pub struct MatchedPair {
    pub pred_idx: usize,
    pub gt_idx: usize,
    /// Point alignment: prediction point `k` corresponds to ground-truth
    /// point `perm[k]`.
    pub perm: Vec<usize>,
    /// Mean per-point L1 distance under `perm`.
    pub point_cost: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_preds: Vec<usize>,
    pub total_cost: f64,
}

/// Equivalent point orderings: open shapes admit forward and reversed
/// orders; closed shapes admit all cyclic shifts in both directions.
pub fn equivalent_permutations(n: usize, closed: bool) -> Vec<Vec<usize>> {
    if !closed {
        let fwd: Vec<usize> = (0..n).collect();
        let rev: Vec<usize> = (0..n).rev().collect();
        return vec![fwd, rev];
    }
    let mut out = Vec::with_capacity(2 * n);
    for shift in 0..n {
        out.push((0..n).map(|k| (k + shift) % n).collect());
        out.push((0..n).map(|k| (n + shift - k % n) % n).collect());
    }
    out
}

fn mean_point_l1(pred: &[Point2], gt: &[Point2], perm: &[usize]) -> f64 {
    let n = pred.len();
    let mut s = 0.0;
    for k in 0..n {
        let d = pred[k] - gt[perm[k]];
        s += d.x.abs() + d.y.abs();
    }
    s / n as f64
}

/// Best equivalent permutation of `gt` against `pred`: (perm, mean L1).
pub fn best_permutation(pred: &[Point2], gt: &GtTarget) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for perm in equivalent_permutations(gt.points.len(), gt.closed) {
        let c = mean_point_l1(pred, &gt.points, &perm);
        if best.as_ref().map_or(true, |(_, bc)| c < *bc) {
            best = Some((perm, c));
        }
    }
    best.expect("at least one permutation")
}

/// Exact rectangular assignment (rows <= cols) by shortest augmenting paths
/// with potentials; O(rows^2 * cols).
pub fn hungarian(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = cost.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let m = cost[0].len();
    assert!(n <= m, "assignment needs rows <= cols, got {n} x {m}");
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1]; // column -> row (1-based, 0 = free)
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost[i][row_to_col[i]]).sum();
    (total, row_to_col)
}

/// Instance-level optimal assignment of ground truths to predictions under
/// `cost(i, j) = w_cls * (-prob_j[class_i]) + w_pts * min_perm mean L1`.
///
/// `pred_probs` are per-query class probabilities (background included);
/// `pred_points` are the per-query point sets in the same normalized frame
/// as the targets.
pub fn hierarchical_match(
    pred_probs: &[Vec<f64>],
    pred_points: &[Vec<Point2>],
    gts: &[GtTarget],
    weights: MatchWeights,
) -> MatchResult {
    let n_pred = pred_points.len();
    if gts.is_empty() || n_pred == 0 {
        return MatchResult {
            pairs: Vec::new(),
            unmatched_preds: (0..n_pred).collect(),
            total_cost: 0.0,
        };
    }
    assert!(gts.len() <= n_pred, "more ground truths than query budget");
    let mut perm_cache: Vec<Vec<(Vec<usize>, f64)>> = Vec::with_capacity(gts.len());
    let mut cost = vec![vec![0.0f64; n_pred]; gts.len()];
    for (gi, gt) in gts.iter().enumerate() {
        let mut row_cache = Vec::with_capacity(n_pred);
        for (pi, pts) in pred_points.iter().enumerate() {
            let (perm, pc) = best_permutation(pts, gt);
            cost[gi][pi] = weights.w_cls * (-pred_probs[pi][gt.class_id]) + weights.w_pts * pc;
            row_cache.push((perm, pc));
        }
        perm_cache.push(row_cache);
    }
    let (total_cost, assignment) = hungarian(&cost);
    let mut matched = vec![false; n_pred];
    let mut pairs = Vec::with_capacity(gts.len());
    for (gi, &pi) in assignment.iter().enumerate() {
        matched[pi] = true;
        let (perm, pc) = perm_cache[gi][pi].clone();
        pairs.push(MatchedPair { pred_idx: pi, gt_idx: gi, perm, point_cost: pc });
    }
    let unmatched_preds = (0..n_pred).filter(|i| !matched[*i]).collect();
    MatchResult { pairs, unmatched_preds, total_cost }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(raw: &[(f64, f64)]) -> Vec<Point2> {
        raw.iter().map(|&(x, y)| Point2::new(x, y)).collect()
    }

    #[test]
    fn exact_pair_matches_with_zero_point_cost() {
        let p = pts(&[(0.1, 0.1), (0.5, 0.5), (0.9, 0.9)]);
        let gt = GtTarget { class_id: 0, points: p.clone(), closed: false };
        let probs = vec![vec![0.7, 0.2, 0.1]];
        let res = hierarchical_match(&probs, &[p], &[gt], MatchWeights::default());
        assert_eq!(res.pairs.len(), 1);
        assert!(res.pairs[0].point_cost < 1e-12);
        assert!((res.total_cost - 2.0 * -0.7).abs() < 1e-12);
    }

    #[test]
    fn reversed_open_shape_matches_with_reversed_permutation() {
        let fwd = pts(&[(0.0, 0.0), (0.5, 0.1), (1.0, 0.0)]);
        let rev: Vec<Point2> = fwd.iter().rev().copied().collect();
        let gt = GtTarget { class_id: 0, points: rev, closed: false };
        let (perm, c) = best_permutation(&fwd, &gt);
        assert_eq!(perm, vec![2, 1, 0]);
        assert!(c < 1e-12);
    }

    #[test]
    fn closed_shape_cyclic_shift_is_free() {
        let square = pts(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
        let shifted: Vec<Point2> = (0..4).map(|k| square[(k + 2) % 4]).collect();
        let gt = GtTarget { class_id: 0, points: square, closed: true };
        let (_, c) = best_permutation(&shifted, &gt);
        assert!(c < 1e-12);
    }

    /// Brute force over all injections gts -> preds with the same per-pair
    /// minimal permutation cost.
    fn brute_force(
        probs: &[Vec<f64>],
        preds: &[Vec<Point2>],
        gts: &[GtTarget],
        w: MatchWeights,
    ) -> f64 {
        fn rec(
            gi: usize,
            used: &mut Vec<bool>,
            cost: &[Vec<f64>],
            acc: f64,
            best: &mut f64,
        ) {
            if gi == cost.len() {
                *best = best.min(acc);
                return;
            }
            for pi in 0..used.len() {
                if !used[pi] {
                    used[pi] = true;
                    rec(gi + 1, used, cost, acc + cost[gi][pi], best);
                    used[pi] = false;
                }
            }
        }
        let mut cost = vec![vec![0.0; preds.len()]; gts.len()];
        for (gi, gt) in gts.iter().enumerate() {
            for (pi, p) in preds.iter().enumerate() {
                let (_, pc) = best_permutation(p, gt);
                cost[gi][pi] = w.w_cls * (-probs[pi][gt.class_id]) + w.w_pts * pc;
            }
        }
        let mut best = f64::INFINITY;
        rec(0, &mut vec![false; preds.len()], &cost, 0.0, &mut best);
        best
    }

    #[test]
    fn matches_brute_force_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for case in 0..50 {
            let n_pred = rng.gen_range(1..=6);
            let n_gt = rng.gen_range(1..=n_pred.min(5));
            let n_pts = rng.gen_range(2..=6);
            let n_cls = 3;
            let preds: Vec<Vec<Point2>> = (0..n_pred)
                .map(|_| (0..n_pts).map(|_| Point2::new(rng.gen(), rng.gen())).collect())
                .collect();
            let probs: Vec<Vec<f64>> = (0..n_pred)
                .map(|_| {
                    let raw: Vec<f64> = (0..n_cls + 1).map(|_| rng.gen::<f64>()).collect();
                    let s: f64 = raw.iter().sum();
                    raw.into_iter().map(|x| x / s).collect()
                })
                .collect();
            let gts: Vec<GtTarget> = (0..n_gt)
                .map(|_| GtTarget {
                    class_id: rng.gen_range(0..n_cls),
                    points: (0..n_pts).map(|_| Point2::new(rng.gen(), rng.gen())).collect(),
                    closed: rng.gen_bool(0.4),
                })
                .collect();
            let w = MatchWeights::default();
            let fast = hierarchical_match(&probs, &preds, &gts, w);
            let slow = brute_force(&probs, &preds, &gts, w);
            assert!(
                (fast.total_cost - slow).abs() < 1e-9,
                "case {case}: fast {} brute {}",
                fast.total_cost,
                slow
            );
            // Every gt matched exactly once, assignment disjoint.
            let mut seen = std::collections::HashSet::new();
            for pair in &fast.pairs {
                assert!(seen.insert(pair.pred_idx));
            }
            assert_eq!(fast.pairs.len(), n_gt);
            assert_eq!(fast.unmatched_preds.len(), n_pred - n_gt);
        }
    }
}
