//! The vectorization network: convolutional BEV encoder, contextual prompt
//! encoder with a weighted memory bank, hierarchical-query transformer
//! decoder, and the prediction heads (classification, regression,
//! segmentation, cross-tile topology).

mod checkpoint;
mod cpe;
mod decoder;
mod encoder;
mod heads;
mod memory;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use cpe::{PromptEmbedding, PromptInstance, PromptMeta};
pub use memory::{encode_context, ContextFrame, MemoryBank};

use candle_core::{DType, Device, Result, Tensor};
use candle_nn::{VarBuilder, VarMap};
use serde::{Deserialize, Serialize};

/// Network hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Group polygon queries (N_g).
    pub n_group_queries: usize,
    /// Element instance queries (N_l).
    pub n_element_queries: usize,
    /// Points per instance (N_p).
    pub n_points: usize,
    /// Foreground element classes (background is appended internally).
    pub n_classes: usize,
    pub d_model: usize,
    pub decoder_layers: usize,
    /// Memory bank depth T.
    pub memory_depth: usize,
    /// Input image side in pixels.
    pub image_size: usize,
    /// Channels of the four encoder stages (stride 2 each).
    pub encoder_channels: [usize; 4],
    pub attention_heads: usize,
    /// Octaves of the sinusoidal coordinate encoding.
    pub pos_frequencies: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_group_queries: 10,
            n_element_queries: 25,
            n_points: 20,
            n_classes: crate::map::N_CLASSES,
            d_model: 256,
            decoder_layers: 6,
            memory_depth: 4,
            image_size: 256,
            encoder_channels: [32, 64, 128, 256],
            attention_heads: 8,
            pos_frequencies: 8,
        }
    }
}

impl ModelConfig {
    /// Paper-scale preset: 768 px input, 50/50 queries, 6 decoder layers.
    pub fn paper_scale() -> Self {
        Self {
            n_group_queries: 50,
            n_element_queries: 50,
            n_points: 20,
            image_size: 768,
            ..Default::default()
        }
    }

    /// A small configuration for CPU experiments and tests.
    pub fn tiny(image_size: usize) -> Self {
        Self {
            n_group_queries: 6,
            n_element_queries: 14,
            n_points: 12,
            d_model: 64,
            decoder_layers: 2,
            memory_depth: 5,
            image_size,
            encoder_channels: [12, 24, 48, 64],
            attention_heads: 4,
            pos_frequencies: 6,
        }
    }

    pub fn feature_side(&self) -> usize {
        self.image_size / 16
    }

    /// Total query tokens: (N_l + N_g + 1) * N_p.
    pub fn token_count(&self) -> usize {
        (self.n_element_queries + self.n_group_queries + 1) * self.n_points
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.d_model % self.attention_heads != 0 {
            return Err(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.attention_heads
            ));
        }
        if self.image_size % 16 != 0 {
            return Err(format!("image_size {} must be divisible by 16", self.image_size));
        }
        if self.n_points < 2 {
            return Err("n_points must be at least 2".into());
        }
        Ok(())
    }
}

/// Raw per-tile network outputs (single sample, no batch dimension).
#[derive(Debug, Clone)]
pub struct RawPredictions {
    /// (N_l, N_cls + 1) class logits, background last.
    pub elem_logits: Tensor,
    /// (N_l, N_p, 2) normalized point coordinates in (0, 1).
    pub elem_points: Tensor,
    /// (N_g, 2) polygon-vs-background logits.
    pub poly_logits: Tensor,
    /// (N_g, N_p, 2) polygon point coordinates.
    pub poly_points: Tensor,
    /// (H, W) foreground logits.
    pub fg_logits: Tensor,
    /// (M_ins, N_l) topology logits; zero rows when no context.
    pub topo_logits: Tensor,
    /// Identity of each topology row.
    pub context_meta: Vec<PromptMeta>,
}

/// The assembled network.
pub struct Model {
    pub config: ModelConfig,
    pub device: Device,
    encoder: encoder::BevEncoder,
    pub(crate) cpe: cpe::PromptEncoder,
    memory_gate: memory::MemoryGate,
    queries: decoder::QueryCombination,
    decoder: decoder::Decoder,
    heads: heads::PredictionHeads,
    topo: heads::TopologyHead,
}

impl Model {
    pub fn new(config: &ModelConfig, vb: VarBuilder) -> Result<Self> {
        config.validate().map_err(candle_core::Error::msg)?;
        let device = vb.device().clone();
        Ok(Self {
            config: config.clone(),
            device,
            encoder: encoder::BevEncoder::new(config, vb.pp("encoder"))?,
            cpe: cpe::PromptEncoder::new(config, config.n_classes, "cpe", vb.pp("cpe"))?,
            memory_gate: memory::MemoryGate::new(config, vb.pp("memory"))?,
            queries: decoder::QueryCombination::new(config, vb.pp("queries"))?,
            decoder: decoder::Decoder::new(config, vb.pp("decoder"))?,
            heads: heads::PredictionHeads::new(config, vb.pp("heads"))?,
            topo: heads::TopologyHead::new(config, vb.pp("topo"))?,
        })
    }

    /// Fresh model with its parameter store.
    pub fn init(config: &ModelConfig, device: &Device) -> Result<(Self, VarMap)> {
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, device);
        let model = Self::new(config, vb)?;
        Ok((model, varmap))
    }

    /// Encode contextual frames into prompt embeddings in the target tile's
    /// normalized frame (gated by the learned memory weights).
    pub fn encode_prompts(
        &self,
        frames: &[ContextFrame],
        target: &crate::map::TileFrame,
    ) -> Result<PromptEmbedding> {
        memory::encode_context(self, &self.memory_gate, frames, target)
    }

    /// Full forward pass for one image and optional prompt embeddings.
    pub fn forward(&self, image: &Tensor, prompts: &PromptEmbedding) -> Result<RawPredictions> {
        let f_i = self.encoder.forward(image)?; // (d, h, w)
        let (f_l, f_g, f_s) = self.decoder.forward(
            &self.queries,
            &f_i,
            prompts.tensor.as_ref(),
        )?;
        let (elem_logits, elem_points, poly_logits, poly_points, fg_logits) =
            self.heads.forward(&f_l, &f_g, &f_s, &f_i)?;
        let topo_logits = self.topo.forward(
            &elem_points,
            &elem_logits,
            prompts.tensor.as_ref(),
            self.config.n_element_queries,
            &self.device,
        )?;
        Ok(RawPredictions {
            elem_logits,
            elem_points,
            poly_logits,
            poly_points,
            fg_logits,
            topo_logits,
            context_meta: prompts.meta.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::TileFrame;

    fn tiny() -> (Model, VarMap, ModelConfig) {
        let config = ModelConfig::tiny(64);
        let (model, varmap) = Model::init(&config, &Device::Cpu).unwrap();
        (model, varmap, config)
    }

    fn frame() -> TileFrame {
        TileFrame {
            origin_world: crate::geom::Point2::new(0.0, 0.0),
            pixel_size: 0.16,
            width_px: 64,
            height_px: 64,
            tile_index: (0, 0),
            scan_order: 0,
        }
    }

    fn image(cfg: &ModelConfig) -> Tensor {
        Tensor::zeros((1, cfg.image_size, cfg.image_size), DType::F32, &Device::Cpu).unwrap()
    }

    #[test]
    fn forward_shapes_match_contract() {
        let (model, _vm, cfg) = tiny();
        let empty = PromptEmbedding::empty();
        let out = model.forward(&image(&cfg), &empty).unwrap();
        assert_eq!(
            out.elem_logits.dims(),
            &[cfg.n_element_queries, cfg.n_classes + 1]
        );
        assert_eq!(out.elem_points.dims(), &[cfg.n_element_queries, cfg.n_points, 2]);
        assert_eq!(out.poly_logits.dims(), &[cfg.n_group_queries, 2]);
        assert_eq!(out.poly_points.dims(), &[cfg.n_group_queries, cfg.n_points, 2]);
        assert_eq!(out.fg_logits.dims(), &[cfg.image_size, cfg.image_size]);
        assert_eq!(out.topo_logits.dims(), &[0, cfg.n_element_queries]);
    }

    #[test]
    fn outputs_finite_and_in_range() {
        let (model, _vm, cfg) = tiny();
        let out = model.forward(&image(&cfg), &PromptEmbedding::empty()).unwrap();
        let pts: Vec<f32> = out.elem_points.flatten_all().unwrap().to_vec1().unwrap();
        assert!(pts.iter().all(|v| v.is_finite() && *v > 0.0 && *v < 1.0));
        let logits: Vec<f32> = out.elem_logits.flatten_all().unwrap().to_vec1().unwrap();
        assert!(logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn forward_is_deterministic() {
        let (model, _vm, cfg) = tiny();
        let img = image(&cfg);
        let a = model.forward(&img, &PromptEmbedding::empty()).unwrap();
        let b = model.forward(&img, &PromptEmbedding::empty()).unwrap();
        let va: Vec<f32> = a.elem_points.flatten_all().unwrap().to_vec1().unwrap();
        let vb: Vec<f32> = b.elem_points.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(va, vb);
    }

    #[test]
    fn prompt_identity_when_context_empty() {
        // Zero contextual instances must reproduce the no-prompt network
        // outputs exactly under identical parameters.
        let (model, _vm, cfg) = tiny();
        let img = image(&cfg);
        let empty_frames: Vec<ContextFrame> = Vec::new();
        let prompts = model.encode_prompts(&empty_frames, &frame()).unwrap();
        assert!(prompts.tensor.is_none());
        let a = model.forward(&img, &prompts).unwrap();
        let b = model.forward(&img, &PromptEmbedding::empty()).unwrap();
        let va: Vec<f32> = a.elem_points.flatten_all().unwrap().to_vec1().unwrap();
        let vb: Vec<f32> = b.elem_points.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(va, vb);
    }
}
