//! Contextual prompt encoding: sinusoidal coordinate features and a shared
//! class embedding, concatenated and projected per point.

use super::ModelConfig;
use crate::geom::Point2;
use candle_core::{DType, Device, Module, Result, Tensor, D};
use candle_nn::{linear, Linear, VarBuilder};

/// One contextual instance, already expressed in the *current* tile's
/// normalized frame (coordinates may lie outside [0, 1] for neighbors).
#[derive(Debug, Clone)]
pub struct PromptInstance {
    pub instance_id: String,
    pub source_tile: (usize, usize),
    pub class_id: usize,
    pub points: Vec<Point2>,
}

/// Identity carried along for every prompt row (topology rows).
#[derive(Debug, Clone, PartialEq)]
pub struct PromptMeta {
    pub instance_id: String,
    pub source_tile: (usize, usize),
}

/// Encoded prompts: `(M_ins, N_p, d_model)` plus per-instance identity.
/// `tensor` is `None` when there is no context at all.
#[derive(Debug, Clone)]
pub struct PromptEmbedding {
    pub tensor: Option<Tensor>,
    pub meta: Vec<PromptMeta>,
}

impl PromptEmbedding {
    pub fn empty() -> Self {
        Self { tensor: None, meta: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }
}

/// Sinusoidal features of 2D coordinates: raw (x, y) plus sin/cos at
/// `freqs` octaves, giving `2 + 4 * freqs` channels on the last dim.
pub fn coordinate_features(coords: &Tensor, freqs: usize) -> Result<Tensor> {
    let mut parts = vec![coords.clone()];
    for f in 0..freqs {
        let scale = std::f64::consts::PI * (1 << f) as f64;
        let scaled = (coords * scale)?;
        parts.push(scaled.sin()?);
        parts.push(scaled.cos()?);
    }
    Tensor::cat(&parts, D::Minus1)
}

/// Shared MLP stack encoding geometry + class cues into per-point vectors.
pub struct PromptEncoder {
    pos1: Linear,
    pos2: Linear,
    cls1: Linear,
    cls2: Linear,
    out1: Linear,
    out2: Linear,
    freqs: usize,
    class_dim: usize,
    n_points: usize,
    d_model: usize,
}

impl PromptEncoder {
    pub fn new(
        cfg: &ModelConfig,
        class_dim: usize,
        _tag: &str,
        vb: VarBuilder,
    ) -> Result<Self> {
        let d = cfg.d_model;
        let pe_dim = 2 + 4 * cfg.pos_frequencies;
        Ok(Self {
            pos1: linear(pe_dim, d, vb.pp("pos1"))?,
            pos2: linear(d, d, vb.pp("pos2"))?,
            cls1: linear(class_dim, d, vb.pp("cls1"))?,
            cls2: linear(d, d, vb.pp("cls2"))?,
            out1: linear(2 * d, d, vb.pp("out1"))?,
            out2: linear(d, d, vb.pp("out2"))?,
            freqs: cfg.pos_frequencies,
            class_dim,
            n_points: cfg.n_points,
            d_model: d,
        })
    }

    /// Tensor path: `coords (M, N_p, 2)` and `class_feat (M, class_dim)`
    /// (one-hot or soft probabilities) to `(M, N_p, d)`. Differentiable in
    /// both inputs.
    pub fn encode_features(&self, coords: &Tensor, class_feat: &Tensor) -> Result<Tensor> {
        let (m, n_p, _) = coords.dims3()?;
        let pe = coordinate_features(coords, self.freqs)?;
        let geo = self.pos2.forward(&self.pos1.forward(&pe)?.relu()?)?;
        let sem = self.cls2.forward(&self.cls1.forward(class_feat)?.relu()?)?; // (M, d)
        let sem = sem.unsqueeze(1)?.broadcast_as((m, n_p, self.d_model))?;
        let cat = Tensor::cat(&[&geo, &sem.contiguous()?], D::Minus1)?;
        self.out2.forward(&self.out1.forward(&cat)?.relu()?)
    }

    /// Encode a list of instances (constant inputs) on `device`.
    pub fn encode_instances(
        &self,
        instances: &[PromptInstance],
        device: &Device,
    ) -> Result<Tensor> {
        let m = instances.len();
        let mut coords = Vec::with_capacity(m * self.n_points * 2);
        let mut classes = vec![0f32; m * self.class_dim];
        for (i, inst) in instances.iter().enumerate() {
            assert_eq!(inst.points.len(), self.n_points, "prompt point budget");
            for p in &inst.points {
                coords.push(p.x as f32);
                coords.push(p.y as f32);
            }
            classes[i * self.class_dim + inst.class_id.min(self.class_dim - 1)] = 1.0;
        }
        let coords = Tensor::from_vec(coords, (m, self.n_points, 2), device)?;
        let class_feat = Tensor::from_vec(classes, (m, self.class_dim), device)?;
        self.encode_features(&coords, &class_feat)
    }
}

#[allow(unused)]
fn dtype_of(device: &Device) -> DType {
    DType::F32
}
