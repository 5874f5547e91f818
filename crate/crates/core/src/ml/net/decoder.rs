//! Hierarchical-query transformer decoder. Each layer runs, in order:
//! joint self-attention, cross-attention into the BEV feature map,
//! cross-attention into the prompt embeddings (identity when there is no
//! context), and self-attention restricted to each instance's point
//! queries. Pre-norm residual blocks throughout.

use super::cpe::coordinate_features;
use super::ModelConfig;
use candle_core::{Module, Result, Tensor, D};
use candle_nn::{layer_norm, linear, LayerNorm, Linear, VarBuilder};

/// Hierarchical queries: instance embeddings plus a point embedding table
/// shared by element, polygon and foreground queries.
pub struct QueryCombination {
    elem: Tensor,
    poly: Tensor,
    fg: Tensor,
    point: Tensor,
    cfg: QueryDims,
}

#[derive(Clone, Copy)]
struct QueryDims {
    n_l: usize,
    n_g: usize,
    n_p: usize,
    d: usize,
}

impl QueryCombination {
    pub fn new(cfg: &ModelConfig, vb: VarBuilder) -> Result<Self> {
        let d = cfg.d_model;
        let init = candle_nn::Init::Randn { mean: 0.0, stdev: 0.02 };
        Ok(Self {
            elem: vb.get_with_hints((cfg.n_element_queries, d), "elem", init)?,
            poly: vb.get_with_hints((cfg.n_group_queries, d), "poly", init)?,
            fg: vb.get_with_hints((1, d), "fg", init)?,
            point: vb.get_with_hints((cfg.n_points, d), "point", init)?,
            cfg: QueryDims {
                n_l: cfg.n_element_queries,
                n_g: cfg.n_group_queries,
                n_p: cfg.n_points,
                d,
            },
        })
    }

    /// Positional query tensor `(instances, N_p, d)` with
    /// `query(i, k) = instance_embed(i) + point_embed(k)`.
    pub fn positional(&self) -> Result<Tensor> {
        let QueryDims { n_l, n_g, n_p, d } = self.cfg;
        let inst = Tensor::cat(&[&self.elem, &self.poly, &self.fg], 0)?; // (I, d)
        let i_total = n_l + n_g + 1;
        let a = inst.unsqueeze(1)?.broadcast_as((i_total, n_p, d))?;
        let b = self.point.unsqueeze(0)?.broadcast_as((i_total, n_p, d))?;
        (a.contiguous()? + b.contiguous()?)
    }
}

/// Multi-head attention with separated Q/K/V inputs.
pub struct Mha {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    heads: usize,
    dh: usize,
}

impl Mha {
    fn new(d: usize, heads: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            wq: linear(d, d, vb.pp("q"))?,
            wk: linear(d, d, vb.pp("k"))?,
            wv: linear(d, d, vb.pp("v"))?,
            wo: linear(d, d, vb.pp("o"))?,
            heads,
            dh: d / heads,
        })
    }

    /// `(Lq, d) x (Lk, d) -> (Lq, d)`.
    pub fn attend(&self, q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
        let out = self.attend_weights(q, k, v)?.0;
        Ok(out)
    }

    /// Attention with the per-head probability matrix `(h, Lq, Lk)` exposed
    /// for inspection in tests.
    pub fn attend_weights(&self, q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
        let (lq, _) = q.dims2()?;
        let (lk, _) = k.dims2()?;
        let split = |t: &Tensor, l: usize| -> Result<Tensor> {
            t.reshape((l, self.heads, self.dh))?.transpose(0, 1)?.contiguous()
        };
        let qh = split(&self.wq.forward(q)?, lq)?;
        let kh = split(&self.wk.forward(k)?, lk)?;
        let vh = split(&self.wv.forward(v)?, lk)?;
        let scale = 1.0 / (self.dh as f64).sqrt();
        let attn = (qh.matmul(&kh.transpose(1, 2)?)? * scale)?;
        let probs = candle_nn::ops::softmax(&attn, D::Minus1)?;
        let out = probs.matmul(&vh)?; // (h, Lq, dh)
        let out = out.transpose(0, 1)?.contiguous()?.reshape((lq, self.heads * self.dh))?;
        Ok((self.wo.forward(&out)?, probs))
    }

    /// Batched self-attention over `(B, L, d)` blocks (intra-instance).
    pub fn attend_blocks(&self, q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
        let (b, l, d) = q.dims3()?;
        let split = |t: &Tensor| -> Result<Tensor> {
            t.reshape((b, l, self.heads, self.dh))?
                .permute((0, 2, 1, 3))?
                .contiguous()?
                .reshape((b * self.heads, l, self.dh))
        };
        let qh = split(&self.wq.forward(q)?)?;
        let kh = split(&self.wk.forward(k)?)?;
        let vh = split(&self.wv.forward(v)?)?;
        let scale = 1.0 / (self.dh as f64).sqrt();
        let attn = (qh.matmul(&kh.transpose(1, 2)?)? * scale)?;
        let probs = candle_nn::ops::softmax(&attn, D::Minus1)?;
        let out = probs
            .matmul(&vh)?
            .reshape((b, self.heads, l, self.dh))?
            .permute((0, 2, 1, 3))?
            .contiguous()?
            .reshape((b, l, d))?;
        self.wo.forward(&out)
    }
}

struct DecoderLayer {
    self_attn: Mha,
    cross_image: Mha,
    cross_prompt: Mha,
    intra: Mha,
    ffn1: Linear,
    ffn2: Linear,
    norms: Vec<LayerNorm>,
}

impl DecoderLayer {
    fn new(cfg: &ModelConfig, vb: VarBuilder) -> Result<Self> {
        let d = cfg.d_model;
        let h = cfg.attention_heads;
        let mut norms = Vec::new();
        for i in 0..5 {
            norms.push(layer_norm(d, 1e-5, vb.pp(format!("norm{i}")))?);
        }
        Ok(Self {
            self_attn: Mha::new(d, h, vb.pp("self"))?,
            cross_image: Mha::new(d, h, vb.pp("cross_image"))?,
            cross_prompt: Mha::new(d, h, vb.pp("cross_prompt"))?,
            intra: Mha::new(d, h, vb.pp("intra"))?,
            ffn1: linear(d, 4 * d, vb.pp("ffn1"))?,
            ffn2: linear(4 * d, d, vb.pp("ffn2"))?,
            norms,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn forward(
        &self,
        x: &Tensor,
        query_pos: &Tensor,
        img_tokens: &Tensor,
        img_pos: &Tensor,
        prompts: Option<&Tensor>,
        instances: usize,
        n_p: usize,
    ) -> Result<Tensor> {
        let d = x.dims2()?.1;
        // Joint self-attention over all queries.
        let h = self.norms[0].forward(x)?;
        let qk = (&h + query_pos)?;
        let x = (x + self.self_attn.attend(&qk, &qk, &h)?)?;
        // Cross-attention into image tokens.
        let h = self.norms[1].forward(&x)?;
        let q = (&h + query_pos)?;
        let k = (img_tokens + img_pos)?;
        let x = (x + self.cross_image.attend(&q, &k, img_tokens)?)?;
        // Cross-attention into prompts (skipped as identity without context).
        let x = match prompts {
            Some(p) if p.dims()[0] > 0 => {
                let h = self.norms[2].forward(&x)?;
                let q = (&h + query_pos)?;
                let flat = p.reshape((p.dims()[0] * p.dims()[1], d))?;
                (x + self.cross_prompt.attend(&q, &flat, &flat)?)?
            }
            _ => x,
        };
        // Intra-instance attention between each instance's points.
        let h = self.norms[3].forward(&x)?;
        let qk = (&h + query_pos)?.reshape((instances, n_p, d))?;
        let v = h.reshape((instances, n_p, d))?;
        let blocks = self.intra.attend_blocks(&qk, &qk, &v)?;
        let x = (x + blocks.reshape((instances * n_p, d))?)?;
        // Feed-forward.
        let h = self.norms[4].forward(&x)?;
        let x = (&x + self.ffn2.forward(&self.ffn1.forward(&h)?.relu()?)?)?;
        Ok(x)
    }
}

pub struct Decoder {
    layers: Vec<DecoderLayer>,
    final_norm: LayerNorm,
    cfg: DecoderDims,
}

#[derive(Clone, Copy)]
struct DecoderDims {
    n_l: usize,
    n_g: usize,
    n_p: usize,
    d: usize,
    freqs: usize,
}

impl Decoder {
    pub fn new(cfg: &ModelConfig, vb: VarBuilder) -> Result<Self> {
        let mut layers = Vec::with_capacity(cfg.decoder_layers);
        for i in 0..cfg.decoder_layers {
            layers.push(DecoderLayer::new(cfg, vb.pp(format!("layer{i}")))?);
        }
        Ok(Self {
            layers,
            final_norm: layer_norm(cfg.d_model, 1e-5, vb.pp("final_norm"))?,
            cfg: DecoderDims {
                n_l: cfg.n_element_queries,
                n_g: cfg.n_group_queries,
                n_p: cfg.n_points,
                d: cfg.d_model,
                freqs: cfg.pos_frequencies,
            },
        })
    }

    /// Sinusoidal 2D position features for the flattened image tokens,
    /// projected into d_model by zero-padded truncation.
    fn image_positions(&self, h: usize, w: usize, f_i: &Tensor) -> Result<Tensor> {
        let device = f_i.device();
        let mut coords = Vec::with_capacity(h * w * 2);
        for y in 0..h {
            for x in 0..w {
                coords.push((x as f32 + 0.5) / w as f32);
                coords.push((y as f32 + 0.5) / h as f32);
            }
        }
        let coords = Tensor::from_vec(coords, (h * w, 2), device)?;
        let feats = coordinate_features(&coords, self.cfg.freqs)?; // (hw, 2+4F)
        let dim = feats.dims2()?.1;
        if dim >= self.cfg.d {
            feats.narrow(1, 0, self.cfg.d)
        } else {
            let pad = Tensor::zeros((h * w, self.cfg.d - dim), feats.dtype(), device)?;
            Tensor::cat(&[&feats, &pad], 1)
        }
    }

    /// Returns `(F_l, F_g, F_s)` query embeddings.
    pub fn forward(
        &self,
        queries: &QueryCombination,
        f_i: &Tensor,
        prompts: Option<&Tensor>,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let DecoderDims { n_l, n_g, n_p, d, .. } = self.cfg;
        let instances = n_l + n_g + 1;
        let (dc, h, w) = f_i.dims3()?;
        debug_assert_eq!(dc, d);
        let img_tokens = f_i.reshape((d, h * w))?.transpose(0, 1)?.contiguous()?; // (hw, d)
        let img_pos = self.image_positions(h, w, f_i)?;
        let query_pos = queries.positional()?.reshape((instances * n_p, d))?;
        let mut x = Tensor::zeros((instances * n_p, d), f_i.dtype(), f_i.device())?;
        for layer in &self.layers {
            x = layer.forward(&x, &query_pos, &img_tokens, &img_pos, prompts, instances, n_p)?;
        }
        let x = self.final_norm.forward(&x)?;
        let x = x.reshape((instances, n_p, d))?;
        let f_l = x.narrow(0, 0, n_l)?;
        let f_g = x.narrow(0, n_l, n_g)?;
        let f_s = x.narrow(0, n_l + n_g, 1)?;
        Ok((f_l, f_g, f_s))
    }
}
