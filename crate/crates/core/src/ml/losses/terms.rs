//! Differentiable loss terms. Every function works for f32 and f64 tensors;
//! gradient checks run in double precision.

use crate::geom::{nearest_polygon_edge, point_to_polygon, Point2, Polygon};
use candle_core::{DType, Device, Result, Tensor, D};

pub const PROB_EPS: f64 = 1e-7;

/// How the aligned focal loss turns a matched pair's distance into the
/// classification target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// The literal formulation: the target is the distance itself.
    LiteralD,
    /// Similarity target `1 - d`, as in task-aligned detection heads.
    OneMinusD,
}

fn bce_prob(s: &Tensor, t: &Tensor) -> Result<Tensor> {
    let s = s.clamp(PROB_EPS, 1.0 - PROB_EPS)?;
    let one_minus_s = (1.0 - &s)?;
    let pos = t.broadcast_mul(&s.log()?)?;
    let neg = (1.0 - t)?.broadcast_mul(&one_minus_s.log()?)?;
    (pos + neg)?.neg()
}

/// Task-aligned focal classification loss over per-query probabilities.
///
/// Positives contribute `|t - s|^gamma * BCE(s, t)` with `t` derived from
/// the matched pair's mean point distance; negatives contribute
/// `s^gamma * BCE(s, 0)`. The result is the sum over queries.
pub fn aligned_focal_loss(
    s: &Tensor,
    d: &Tensor,
    positive: &[bool],
    gamma: f64,
    mode: TargetMode,
) -> Result<Tensor> {
    let device = s.device();
    let n = s.dims1()?;
    assert_eq!(positive.len(), n);
    let dtype = s.dtype();
    let mut total = Tensor::zeros((), dtype, device)?;
    let pos_idx: Vec<u32> = (0..n).filter(|i| positive[*i]).map(|i| i as u32).collect();
    let neg_idx: Vec<u32> = (0..n).filter(|i| !positive[*i]).map(|i| i as u32).collect();
    if !pos_idx.is_empty() {
        let idx = Tensor::from_vec(pos_idx.clone(), (pos_idx.len(),), device)?;
        let sp = s.index_select(&idx, 0)?;
        let dp = d.index_select(&idx, 0)?.clamp(0.0, 1.0)?;
        let t = match mode {
            TargetMode::LiteralD => dp,
            TargetMode::OneMinusD => (1.0 - dp)?,
        };
        let w = (&t - &sp)?.abs()?.powf(gamma)?;
        let bce = bce_prob(&sp, &t)?;
        total = (total + (w * bce)?.sum_all()?)?;
    }
    if !neg_idx.is_empty() {
        let idx = Tensor::from_vec(neg_idx.clone(), (neg_idx.len(),), device)?;
        let sn = s.index_select(&idx, 0)?;
        let w = sn.powf(gamma)?;
        let zeros = sn.zeros_like()?;
        let bce = bce_prob(&sn, &zeros)?;
        total = (total + (w * bce)?.sum_all()?)?;
    }
    Ok(total)
}

/// Mean over pairs of the per-pair mean point L1 distance.
pub fn l1_point_loss(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    if pred.dims()[0] == 0 {
        return Tensor::zeros((), pred.dtype(), pred.device());
    }
    (pred - gt)?.abs()?.sum(D::Minus1)?.mean(D::Minus1)?.mean(D::Minus1)
}

/// Mean `(1 - cos)` between predicted edge vectors and ground-truth unit
/// edge vectors (already permutation-aligned).
pub fn direction_loss(pred: &Tensor, gt_units: &Tensor) -> Result<Tensor> {
    let (k, n_p, _) = pred.dims3()?;
    if k == 0 {
        return Tensor::zeros((), pred.dtype(), pred.device());
    }
    let head = pred.narrow(1, 1, n_p - 1)?;
    let tail = pred.narrow(1, 0, n_p - 1)?;
    let v = (head - tail)?;
    let dot = v.mul(gt_units)?.sum(D::Minus1)?;
    let norm = (v.sqr()?.sum(D::Minus1)? + 1e-12)?.sqrt()?;
    let cos = (dot / norm)?;
    (1.0 - cos)?.mean_all()
}

/// Eq.-(6)-style auxiliary: for each instance, sum the distance from each
/// predicted point lying strictly outside its group polygon to the nearest
/// polygon edge; mean over instances. The outside test and the edge choice
/// (lowest index on ties) are made on the current values, the distance
/// itself stays differentiable in the predicted coordinates.
pub fn point_in_polygon_loss(pred: &Tensor, polygons: &[Polygon]) -> Result<Tensor> {
    let (k, n_p, _) = pred.dims3()?;
    assert_eq!(polygons.len(), k);
    let dtype = pred.dtype();
    let device = pred.device();
    if k == 0 {
        return Tensor::zeros((), dtype, device);
    }
    let values: Vec<f64> = pred.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
    let mut rows: Vec<u32> = Vec::new();
    let mut edge_a: Vec<f64> = Vec::new();
    let mut edge_b: Vec<f64> = Vec::new();
    for i in 0..k {
        let poly = &polygons[i];
        for p in 0..n_p {
            let base = (i * n_p + p) * 2;
            let pt = Point2::new(values[base], values[base + 1]);
            let (inside, _) = point_to_polygon(pt, poly);
            if inside {
                continue;
            }
            let (edge, _) = nearest_polygon_edge(pt, poly);
            let verts = poly.vertices();
            let a = verts[edge];
            let b = verts[(edge + 1) % verts.len()];
            rows.push((i * n_p + p) as u32);
            edge_a.extend([a.x, a.y]);
            edge_b.extend([b.x, b.y]);
        }
    }
    if rows.is_empty() {
        return Tensor::zeros((), dtype, device);
    }
    let m = rows.len();
    let idx = Tensor::from_vec(rows, (m,), device)?;
    let pts = pred.reshape((k * n_p, 2))?.index_select(&idx, 0)?; // (m, 2)
    let a = Tensor::from_vec(edge_a, (m, 2), device)?.to_dtype(dtype)?;
    let b = Tensor::from_vec(edge_b, (m, 2), device)?.to_dtype(dtype)?;
    let ab = (&b - &a)?;
    let len2 = ab.sqr()?.sum_keepdim(D::Minus1)?; // (m, 1)
    let t = ((&pts - &a)?.mul(&ab)?.sum_keepdim(D::Minus1)? / &len2)?.clamp(0.0, 1.0)?;
    let proj = (&a + ab.broadcast_mul(&t)?)?;
    let dist = (pts - proj)?.sqr()?.sum(D::Minus1)?.sqrt()?;
    // Sum over violating points, averaged over instances.
    dist.sum_all()? / k as f64
}

/// Binary cross entropy with logits plus soft Dice (smoothing 1.0).
pub fn segmentation_loss(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    let bce = {
        let relu = logits.relu()?;
        let xt = logits.mul(target)?;
        let softplus = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
        ((relu - xt)? + softplus)?.mean_all()?
    };
    let p = candle_nn::ops::sigmoid(logits)?;
    let inter = p.mul(target)?.sum_all()?;
    let denom = (p.sum_all()? + target.sum_all()?)?;
    let dice = (1.0 - ((inter * 2.0)? + 1.0)?.div(&(denom + 1.0)?)?)?;
    bce + dice
}

/// Binary focal loss over the topology matrix, mean-reduced; empty
/// matrices contribute zero.
pub fn topology_focal_loss(
    logits: &Tensor,
    target: &Tensor,
    gamma: f64,
    balance: f64,
) -> Result<Tensor> {
    let dims = logits.dims();
    if dims.iter().product::<usize>() == 0 {
        return Tensor::zeros((), logits.dtype(), logits.device());
    }
    let p = candle_nn::ops::sigmoid(logits)?;
    // -log p and -log(1-p) via softplus for stability.
    let log_p = (logits.neg()?.abs()?.neg()?.exp()? + 1.0)?.log()?.add(&logits.neg()?.relu()?)?;
    let log_1mp = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?.add(&logits.relu()?)?;
    let pos = target
        .mul(&(1.0 - &p)?.powf(gamma)?)?
        .mul(&log_p)?
        .affine(balance, 0.0)?;
    let neg = (1.0 - target)?
        .mul(&p.powf(gamma)?)?
        .mul(&log_1mp)?
        .affine(1.0 - balance, 0.0)?;
    (pos + neg)?.mean_all()
}

/// Per-term values for logging and the weighted total.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LossReport {
    pub total: f64,
    pub elements: f64,
    pub elements_cls: f64,
    pub elements_reg: f64,
    pub elements_dir: f64,
    pub topology: f64,
    pub polygons: f64,
    pub point_in_polygon: f64,
    pub segmentation: f64,
}

/// Scalar weights of Eq. (2).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub eta: f64,
    pub mu: f64,
    pub gamma: f64,
    pub topo_balance: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            lambda: 0.2,
            eta: 0.15,
            mu: 100.0,
            gamma: 2.0,
            topo_balance: 0.25,
        }
    }
}

pub struct LossTerms {
    pub elements: Tensor,
    pub elements_parts: (f64, f64, f64),
    pub topology: Tensor,
    pub polygons: Tensor,
    pub point_in_polygon: Tensor,
    pub segmentation: Tensor,
}

#[derive(Debug, thiserror::Error)]
#[error("non-finite loss term `{term}` = {value}")]
pub struct NonFiniteLoss {
    pub term: &'static str,
    pub value: f64,
}

/// Weighted total with a per-term finiteness check.
pub fn total_loss(
    terms: &LossTerms,
    w: &LossWeights,
) -> std::result::Result<(Tensor, LossReport), Box<dyn std::error::Error + Send + Sync>> {
    let scalar = |t: &Tensor| -> Result<f64> { t.to_dtype(DType::F64)?.to_scalar::<f64>() };
    let checked = |name: &'static str, t: &Tensor| -> std::result::Result<f64, NonFiniteLoss> {
        let v = scalar(t).map_err(|_| NonFiniteLoss { term: name, value: f64::NAN })?;
        if !v.is_finite() {
            return Err(NonFiniteLoss { term: name, value: v });
        }
        Ok(v)
    };
    let elements = checked("elements", &terms.elements)?;
    let topology = checked("topology", &terms.topology)?;
    let polygons = checked("polygons", &terms.polygons)?;
    let pip = checked("point_in_polygon", &terms.point_in_polygon)?;
    let seg = checked("segmentation", &terms.segmentation)?;
    let total = ((terms.elements.affine(w.alpha, 0.0)?
        + terms.topology.affine(w.beta, 0.0)?)?
        + ((terms.polygons.affine(w.lambda, 0.0)? + terms.point_in_polygon.affine(w.eta, 0.0)?)?
            + terms.segmentation.affine(w.mu, 0.0)?)?)?;
    let report = LossReport {
        total: checked("total", &total)?,
        elements,
        elements_cls: terms.elements_parts.0,
        elements_reg: terms.elements_parts.1,
        elements_dir: terms.elements_parts.2,
        topology,
        polygons,
        point_in_polygon: pip,
        segmentation: seg,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Var;

    fn dev() -> Device {
        Device::Cpu
    }

    #[test]
    fn focal_negatives_vanish_at_zero_score() {
        let s = Tensor::from_vec(vec![1e-9f64, 1e-9], (2,), &dev()).unwrap();
        let d = Tensor::zeros((2,), DType::F64, &dev()).unwrap();
        let loss = aligned_focal_loss(&s, &d, &[false, false], 2.0, TargetMode::LiteralD)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!(loss.abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn focal_positive_zero_when_s_equals_d() {
        let s = Tensor::from_vec(vec![0.3f64], (1,), &dev()).unwrap();
        let d = Tensor::from_vec(vec![0.3f64], (1,), &dev()).unwrap();
        let loss = aligned_focal_loss(&s, &d, &[true], 2.0, TargetMode::LiteralD)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!(loss.abs() < 1e-12, "loss {loss}");
    }

    /// Scalar transcription oracle for the focal loss.
    #[test]
    fn focal_matches_scalar_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.gen_range(1..8);
            let sv: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.99)).collect();
            let dv: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let flags: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            let gamma = 2.0;
            let s = Tensor::from_vec(sv.clone(), (n,), &dev()).unwrap();
            let d = Tensor::from_vec(dv.clone(), (n,), &dev()).unwrap();
            let fast = aligned_focal_loss(&s, &d, &flags, gamma, TargetMode::LiteralD)
                .unwrap()
                .to_scalar::<f64>()
                .unwrap();
            let mut slow = 0.0;
            for i in 0..n {
                let s = sv[i].clamp(PROB_EPS, 1.0 - PROB_EPS);
                if flags[i] {
                    let t = dv[i];
                    let bce = -(t * s.ln() + (1.0 - t) * (1.0 - s).ln());
                    slow += (t - s).abs().powf(gamma) * bce;
                } else {
                    slow += s.powf(gamma) * -(1.0 - s).ln();
                }
            }
            assert!((fast - slow).abs() < 1e-10, "fast {fast} slow {slow}");
        }
    }

    #[test]
    fn seg_loss_analytics() {
        // Uniform 0.5 prediction against all-background: BCE = ln 2 and the
        // dice term is 1 - 1/(sum p + 1).
        let logits = Tensor::zeros((4, 4), DType::F64, &dev()).unwrap();
        let target = Tensor::zeros((4, 4), DType::F64, &dev()).unwrap();
        let loss = segmentation_loss(&logits, &target).unwrap().to_scalar::<f64>().unwrap();
        let expected = (2f64).ln() + (1.0 - 1.0 / 9.0);
        assert!((loss - expected).abs() < 1e-9, "{loss} vs {expected}");
        // Saturated correct logits drive the loss to ~0.
        let big = Tensor::full(30.0f64, (4, 4), &dev()).unwrap();
        let ones = Tensor::ones((4, 4), DType::F64, &dev()).unwrap();
        let loss = segmentation_loss(&big, &ones).unwrap().to_scalar::<f64>().unwrap();
        assert!(loss < 1e-6, "{loss}");
    }

    #[test]
    fn topology_loss_empty_and_saturated() {
        let empty = Tensor::zeros((0, 5), DType::F64, &dev()).unwrap();
        let loss = topology_focal_loss(&empty, &empty, 2.0, 0.25)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert_eq!(loss, 0.0);
        let logits = Tensor::from_vec(vec![40.0f64, -40.0], (1, 2), &dev()).unwrap();
        let target = Tensor::from_vec(vec![1.0f64, 0.0], (1, 2), &dev()).unwrap();
        let loss = topology_focal_loss(&logits, &target, 2.0, 0.25)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn pip_loss_analytic_case() {
        // One point at (2.0, 0.5) against the unit square: distance 1.
        let k = 1;
        let n_p = 2;
        let pts = Tensor::from_vec(vec![0.5f64, 0.5, 2.0, 0.5], (k, n_p, 2), &dev()).unwrap();
        let square = Polygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ])
        .unwrap();
        let loss = point_in_polygon_loss(&pts, &[square]).unwrap().to_scalar::<f64>().unwrap();
        assert!((loss - 1.0).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn pip_loss_zero_inside() {
        let pts = Tensor::from_vec(vec![0.5f64, 0.5, 0.25, 0.75], (1, 2, 2), &dev()).unwrap();
        let square = Polygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ])
        .unwrap();
        let loss = point_in_polygon_loss(&pts, &[square]).unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn l1_and_direction_translated_prediction() {
        // gt along x, prediction translated by (delta, delta): L_reg = 2*delta,
        // L_dir = 0.
        let n_p = 5;
        let gt: Vec<f64> = (0..n_p).flat_map(|k| [k as f64 * 0.1, 0.2]).collect();
        let delta = 0.03;
        let pred: Vec<f64> = (0..n_p).flat_map(|k| [k as f64 * 0.1 + delta, 0.2 + delta]).collect();
        let gt_t = Tensor::from_vec(gt, (1, n_p, 2), &dev()).unwrap();
        let pr = Tensor::from_vec(pred, (1, n_p, 2), &dev()).unwrap();
        let reg = l1_point_loss(&pr, &gt_t).unwrap().to_scalar::<f64>().unwrap();
        assert!((reg - 2.0 * delta).abs() < 1e-12);
        let units: Vec<f64> = (0..n_p - 1).flat_map(|_| [1.0, 0.0]).collect();
        let units = Tensor::from_vec(units, (1, n_p - 1, 2), &dev()).unwrap();
        let dir = direction_loss(&pr, &units).unwrap().to_scalar::<f64>().unwrap();
        assert!(dir.abs() < 1e-9, "{dir}");
    }

    #[test]
    fn total_loss_weighted_sum_and_nan_detection() {
        let one = || Tensor::ones((), DType::F64, &dev()).unwrap();
        let terms = LossTerms {
            elements: one(),
            elements_parts: (0.4, 0.3, 0.3),
            topology: one(),
            polygons: one(),
            point_in_polygon: one(),
            segmentation: one(),
        };
        let (total, report) = total_loss(&terms, &LossWeights::default()).unwrap();
        let v = total.to_scalar::<f64>().unwrap();
        assert!((v - 102.35).abs() < 1e-9, "{v}");
        assert_eq!(report.total, v);
        // Doubling mu only doubles the segmentation contribution.
        let w2 = LossWeights { mu: 200.0, ..Default::default() };
        let (t2, _) = total_loss(&terms, &w2).unwrap();
        assert!((t2.to_scalar::<f64>().unwrap() - 202.35).abs() < 1e-9);
        let bad = LossTerms {
            elements: (one() * f64::NAN).unwrap(),
            elements_parts: (0.0, 0.0, 0.0),
            topology: one(),
            polygons: one(),
            point_in_polygon: one(),
            segmentation: one(),
        };
        let err = total_loss(&bad, &LossWeights::default()).unwrap_err();
        assert!(err.to_string().contains("elements"));
    }

    /// Central finite differences on a scalar function of a Var.
    pub fn grad_check<F: Fn(&Tensor) -> Tensor>(value: &mut Vec<f64>, shape: &[usize], f: F) {
        let dev = Device::Cpu;
        let var = Var::from_vec(value.clone(), shape, &dev).unwrap();
        let loss = f(var.as_tensor());
        let grads = loss.backward().unwrap();
        let analytic: Vec<f64> = match grads.get(&var) {
            Some(g) => g.flatten_all().unwrap().to_vec1().unwrap(),
            None => vec![0.0; value.len()],
        };
        let h = 1e-5;
        for i in 0..value.len() {
            let orig = value[i];
            value[i] = orig + h;
            let up = f(&Tensor::from_vec(value.clone(), shape, &dev).unwrap())
                .to_scalar::<f64>()
                .unwrap();
            value[i] = orig - h;
            let down = f(&Tensor::from_vec(value.clone(), shape, &dev).unwrap())
                .to_scalar::<f64>()
                .unwrap();
            value[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-3);
            assert!(
                (fd - analytic[i]).abs() / denom < 1e-4,
                "coordinate {i}: fd {fd} analytic {}",
                analytic[i]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences_smoke() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        // Segmentation.
        let mut logits: Vec<f64> = (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let target: Vec<f64> = (0..16).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let t = Tensor::from_vec(target, (4, 4), &dev()).unwrap();
        grad_check(&mut logits, &[4, 4], |x| segmentation_loss(x, &t).unwrap());
        // Point-in-polygon at non-degenerate points.
        let square = Polygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ])
        .unwrap();
        let mut pts = vec![1.7, 0.3, 0.5, 0.5, -0.4, 1.9, 0.2, -0.8];
        let polys = vec![square];
        grad_check(&mut pts, &[1, 4, 2], |x| point_in_polygon_loss(x, &polys).unwrap());
    }
}
