//! FIFO memory bank over per-tile vectorizations and the learned frame
//! gating that aggregates stored frames into one prompt embedding.
//!
//! Frames are stored as raw world-frame vectorizations, not embeddings:
//! prompt coordinates must be re-expressed in each new tile's normalized
//! frame before encoding, so encoding happens at view time.

use super::cpe::{PromptEmbedding, PromptInstance, PromptMeta};
use super::{Model, ModelConfig};
use crate::geom::Point2;
use crate::map::TileFrame;
use candle_core::{Module, Result, Tensor, D};
use candle_nn::{linear, Linear, VarBuilder};
use std::collections::VecDeque;

/// One stored contextual instance (world frame).
#[derive(Debug, Clone)]
pub struct PromptRecord {
    pub instance_id: String,
    pub class_id: usize,
    pub points: Vec<Point2>,
    pub score: f64,
}

/// One tile's worth of context.
#[derive(Debug, Clone)]
pub struct ContextFrame {
    pub tile_index: (usize, usize),
    pub instances: Vec<PromptRecord>,
}

/// FIFO of the last `capacity` frames; eviction is strictly oldest-first.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    slots: VecDeque<ContextFrame>,
    capacity: usize,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Self {
        Self { slots: VecDeque::new(), capacity }
    }

    pub fn push(&mut self, frame: ContextFrame) {
        if self.capacity == 0 {
            return;
        }
        if self.slots.len() == self.capacity {
            self.slots.pop_front();
        }
        self.slots.push_back(frame);
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn frames(&self) -> impl Iterator<Item = &ContextFrame> {
        self.slots.iter()
    }

    /// Frames 8-adjacent to `tile` (the prompt set A of the sweep).
    pub fn adjacent_frames(&self, tile: (usize, usize)) -> Vec<&ContextFrame> {
        self.slots
            .iter()
            .filter(|f| {
                f.tile_index != tile
                    && f.tile_index.0.abs_diff(tile.0) <= 1
                    && f.tile_index.1.abs_diff(tile.1) <= 1
            })
            .collect()
    }
}

/// Learnable per-slot weighting: an MLP on the pooled slot embedding,
/// softmax-normalized over occupied slots. The gate applied to each slot is
/// `weight * slot_count`, which preserves single-frame content exactly and
/// keeps instance rows separable for the topology head.
pub struct MemoryGate {
    w1: Linear,
    w2: Linear,
}

impl MemoryGate {
    pub fn new(cfg: &ModelConfig, vb: VarBuilder) -> Result<Self> {
        let d = cfg.d_model;
        let hidden = (d / 4).max(4);
        Ok(Self { w1: linear(d, hidden, vb.pp("w1"))?, w2: linear(hidden, 1, vb.pp("w2"))? })
    }

    fn score(&self, pooled: &Tensor) -> Result<Tensor> {
        self.w2.forward(&self.w1.forward(pooled)?.relu()?)
    }
}

/// Encode contextual frames into one gated prompt embedding expressed in
/// `target`'s normalized frame. Empty frames contribute nothing; an empty
/// context yields an empty embedding.
pub fn encode_context(
    model: &Model,
    gate: &MemoryGate,
    frames: &[ContextFrame],
    target: &TileFrame,
) -> Result<PromptEmbedding> {
    let normalize = |p: &Point2| {
        let px = target.world_to_pixel(*p);
        Point2::new(px.x / target.width_px as f64, px.y / target.height_px as f64)
    };
    let mut encoded: Vec<Tensor> = Vec::new();
    let mut pooled: Vec<Tensor> = Vec::new();
    let mut meta: Vec<Vec<PromptMeta>> = Vec::new();
    for frame in frames {
        if frame.instances.is_empty() {
            continue;
        }
        let instances: Vec<PromptInstance> = frame
            .instances
            .iter()
            .map(|r| PromptInstance {
                instance_id: r.instance_id.clone(),
                source_tile: frame.tile_index,
                class_id: r.class_id,
                points: r.points.iter().map(&normalize).collect(),
            })
            .collect();
        let emb = model.cpe.encode_instances(&instances, &model.device)?; // (M_t, N_p, d)
        pooled.push(emb.mean(1)?.mean(0)?); // (d,)
        encoded.push(emb);
        meta.push(
            instances
                .iter()
                .map(|i| PromptMeta {
                    instance_id: i.instance_id.clone(),
                    source_tile: i.source_tile,
                })
                .collect(),
        );
    }
    if encoded.is_empty() {
        return Ok(PromptEmbedding::empty());
    }
    let s = encoded.len();
    let stacked = Tensor::stack(&pooled, 0)?; // (S, d)
    let scores = gate.score(&stacked)?.squeeze(D::Minus1)?; // (S,)
    let weights = candle_nn::ops::softmax(&scores, 0)?;
    let gates = (weights * s as f64)?;
    let mut gated = Vec::with_capacity(s);
    for (t, emb) in encoded.into_iter().enumerate() {
        let g = gates.narrow(0, t, 1)?.reshape(())?;
        gated.push(emb.broadcast_mul(&g)?);
    }
    let tensor = Tensor::cat(&gated, 0)?;
    Ok(PromptEmbedding { tensor: Some(tensor), meta: meta.into_iter().flatten().collect() })
}
