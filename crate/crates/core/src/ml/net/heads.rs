//! Prediction heads: a shared classification branch, a shared per-point
//! regression branch, the foreground segmentation kernel, and the
//! correlation-based cross-tile topology head.

use super::cpe::PromptEncoder;
use super::ModelConfig;
use candle_core::{Device, Module, Result, Tensor, D};
use candle_nn::{linear, Linear, VarBuilder};

pub struct PredictionHeads {
    trunk: Linear,
    elem_cls: Linear,
    poly_cls: Linear,
    reg1: Linear,
    reg2: Linear,
    seg1: Linear,
    seg2: Linear,
    image_size: usize,
}

impl PredictionHeads {
    pub fn new(cfg: &ModelConfig, vb: VarBuilder) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            trunk: linear(d, d, vb.pp("trunk"))?,
            elem_cls: linear(d, cfg.n_classes + 1, vb.pp("elem_cls"))?,
            poly_cls: linear(d, 2, vb.pp("poly_cls"))?,
            reg1: linear(d, d, vb.pp("reg1"))?,
            reg2: linear(d, 2, vb.pp("reg2"))?,
            seg1: linear(d, d, vb.pp("seg1"))?,
            seg2: linear(d, d, vb.pp("seg2"))?,
            image_size: cfg.image_size,
        })
    }

    fn classify(&self, f: &Tensor, head: &Linear) -> Result<Tensor> {
        let pooled = f.mean(1)?; // (N, d)
        head.forward(&self.trunk.forward(&pooled)?.relu()?)
    }

    fn regress(&self, f: &Tensor) -> Result<Tensor> {
        let h = self.reg1.forward(f)?.relu()?;
        candle_nn::ops::sigmoid(&self.reg2.forward(&h)?)
    }

    /// Returns (elem_logits, elem_points, poly_logits, poly_points,
    /// fg_logits).
    pub fn forward(
        &self,
        f_l: &Tensor,
        f_g: &Tensor,
        f_s: &Tensor,
        f_i: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor, Tensor, Tensor)> {
        let elem_logits = self.classify(f_l, &self.elem_cls)?;
        let poly_logits = self.classify(f_g, &self.poly_cls)?;
        let elem_points = self.regress(f_l)?;
        let poly_points = self.regress(f_g)?;

        // Segmentation kernel from the pooled foreground embedding.
        let kernel = self.seg2.forward(&self.seg1.forward(&f_s.mean(1)?)?.relu()?)?; // (1, d)
        let (d, h, w) = f_i.dims3()?;
        let tokens = f_i.reshape((d, h * w))?; // (d, hw)
        let logits = kernel.matmul(&tokens)?.reshape((h, w))?;
        let fg_logits = bilinear_upsample(&logits, self.image_size, self.image_size)?;
        Ok((elem_logits, elem_points, poly_logits, poly_points, fg_logits))
    }
}

/// Bilinear upsampling expressed as two constant interpolation matmuls, so
/// it is differentiable and bit-deterministic.
pub fn bilinear_upsample(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = x.dims2()?;
    let up_h = interp_matrix(out_h, h, x.device())?;
    let up_w = interp_matrix(out_w, w, x.device())?;
    up_h.matmul(x)?.matmul(&up_w.t()?)
}

fn interp_matrix(out: usize, inp: usize, device: &Device) -> Result<Tensor> {
    let mut m = vec![0f32; out * inp];
    for i in 0..out {
        if inp == 1 {
            m[i * inp] = 1.0;
            continue;
        }
        let src = i as f64 * (inp - 1) as f64 / (out - 1).max(1) as f64;
        let j0 = src.floor() as usize;
        let j1 = (j0 + 1).min(inp - 1);
        let t = src - j0 as f64;
        m[i * inp + j0] += (1.0 - t) as f32;
        m[i * inp + j1] += t as f32;
    }
    Tensor::from_vec(m, (out, inp), device)
}

/// Cross-tile topology: re-encode the predicted elements with a prompt-style
/// sub-network, pool per instance, correlate with the pooled prompt
/// embeddings, and map each correlation through a small MLP.
pub struct TopologyHead {
    encoder: PromptEncoder,
    mlp1: Linear,
    mlp2: Linear,
    d_model: usize,
}

impl TopologyHead {
    pub fn new(cfg: &ModelConfig, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            // Class input is the soft probability vector over all classes
            // including background.
            encoder: PromptEncoder::new(cfg, cfg.n_classes + 1, "topo", vb.pp("enc"))?,
            mlp1: linear(1, 16, vb.pp("mlp1"))?,
            mlp2: linear(16, 1, vb.pp("mlp2"))?,
            d_model: cfg.d_model,
        })
    }

    pub fn forward(
        &self,
        elem_points: &Tensor,
        elem_logits: &Tensor,
        prompts: Option<&Tensor>,
        n_l: usize,
        device: &Device,
    ) -> Result<Tensor> {
        let Some(p) = prompts else {
            return Tensor::zeros((0, n_l), elem_points.dtype(), device);
        };
        let m = p.dims()[0];
        if m == 0 {
            return Tensor::zeros((0, n_l), elem_points.dtype(), device);
        }
        let probs = candle_nn::ops::softmax(elem_logits, D::Minus1)?;
        let f_e = self.encoder.encode_features(elem_points, &probs)?; // (N_l, N_p, d)
        let e = f_e.mean(1)?; // (N_l, d)
        let c = p.mean(1)?; // (M, d)
        let corr = (c.matmul(&e.t()?)? / (self.d_model as f64).sqrt())?; // (M, N_l)
        let h = self.mlp1.forward(&corr.unsqueeze(D::Minus1)?)?.relu()?;
        self.mlp2.forward(&h)?.squeeze(D::Minus1)
    }
}
