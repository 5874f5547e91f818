//! Convolutional BEV image encoder: four stride-2 stages plus an FPN-style
//! top-down fusion, producing a single d_model feature map at stride 16.

use super::ModelConfig;
use candle_core::{Module, Result, Tensor};
use candle_nn::{conv2d, group_norm, Conv2d, Conv2dConfig, GroupNorm, VarBuilder};

struct ConvBlock {
    conv: Conv2d,
    norm: GroupNorm,
}

impl ConvBlock {
    fn new(c_in: usize, c_out: usize, stride: usize, vb: VarBuilder) -> Result<Self> {
        let cfg = Conv2dConfig { padding: 1, stride, ..Default::default() };
        let conv = conv2d(c_in, c_out, 3, cfg, vb.pp("conv"))?;
        let groups = if c_out % 8 == 0 { 8 } else { 1 };
        let norm = group_norm(groups, c_out, 1e-5, vb.pp("norm"))?;
        Ok(Self { conv, norm })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.norm.forward(&self.conv.forward(x)?)?.relu()
    }
}

pub struct BevEncoder {
    stages: Vec<ConvBlock>,
    lateral3: Conv2d,
    lateral4: Conv2d,
    fuse: Conv2d,
}

impl BevEncoder {
    pub fn new(cfg: &ModelConfig, vb: VarBuilder) -> Result<Self> {
        let ch = cfg.encoder_channels;
        let mut stages = Vec::new();
        let mut c_in = 1;
        for (i, c_out) in ch.iter().enumerate() {
            stages.push(ConvBlock::new(c_in, *c_out, 2, vb.pp(format!("stage{i}")))?);
            c_in = *c_out;
        }
        let one = Conv2dConfig::default();
        let lateral3 = conv2d(ch[2], cfg.d_model, 1, one, vb.pp("lateral3"))?;
        let lateral4 = conv2d(ch[3], cfg.d_model, 1, one, vb.pp("lateral4"))?;
        let fuse = conv2d(
            cfg.d_model,
            cfg.d_model,
            3,
            Conv2dConfig { padding: 1, stride: 2, ..Default::default() },
            vb.pp("fuse"),
        )?;
        Ok(Self { stages, lateral3, lateral4, fuse })
    }

    /// (1, H, W) image in [0, 1] -> (d_model, H/16, W/16) feature map.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let mut x = image.unsqueeze(0)?; // (1, 1, H, W)
        let mut taps = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            x = stage.forward(&x)?;
            taps.push(x.clone());
        }
        let p4 = self.lateral4.forward(&taps[3])?; // stride 16
        let (_, _, h8, w8) = taps[2].dims4()?;
        let up = p4.upsample_nearest2d(h8, w8)?;
        let p3 = (self.lateral3.forward(&taps[2])? + up)?; // stride 8
        let fused = self.fuse.forward(&p3)?; // back to stride 16
        fused.squeeze(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use candle_nn::{VarBuilder, VarMap};

    fn encoder(image_size: usize) -> (BevEncoder, ModelConfig) {
        let cfg = ModelConfig { image_size, ..ModelConfig::tiny(image_size) };
        let vm = VarMap::new();
        let vb = VarBuilder::from_varmap(&vm, DType::F32, &Device::Cpu);
        (BevEncoder::new(&cfg, vb).unwrap(), cfg)
    }

    #[test]
    fn stride_16_shape() {
        let (enc, cfg) = encoder(64);
        let img = Tensor::zeros((1, 64, 64), DType::F32, &Device::Cpu).unwrap();
        let f = enc.forward(&img).unwrap();
        assert_eq!(f.dims(), &[cfg.d_model, 4, 4]);
    }

    #[test]
    fn zero_image_finite() {
        let (enc, _) = encoder(64);
        let img = Tensor::zeros((1, 64, 64), DType::F32, &Device::Cpu).unwrap();
        let f: Vec<f32> = enc.forward(&img).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn single_pixel_changes_features() {
        let (enc, _) = encoder(64);
        let zeros = Tensor::zeros((1, 64, 64), DType::F32, &Device::Cpu).unwrap();
        let mut one = vec![0f32; 64 * 64];
        one[64 * 32 + 32] = 1.0;
        let poked = Tensor::from_vec(one, (1, 64, 64), &Device::Cpu).unwrap();
        let a: Vec<f32> = enc.forward(&zeros).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = enc.forward(&poked).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let max_diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!(max_diff > 0.0);
    }
}
