//! Checkpoint files: one safetensors archive holding every named parameter
//! plus the model configuration and step counter in the header metadata.

use super::ModelConfig;
use candle_core::{DType, Device, Tensor};
use candle_nn::VarMap;
use safetensors::tensor::{Dtype, TensorView};
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
}

pub fn save_checkpoint(
    varmap: &VarMap,
    config: &ModelConfig,
    step: usize,
    path: &Path,
) -> Result<(), CheckpointError> {
    let data = varmap.data().lock().unwrap();
    let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::with_capacity(data.len());
    for (name, var) in data.iter() {
        let t = var.as_tensor().to_dtype(DType::F32)?;
        let shape = t.dims().to_vec();
        let flat: Vec<f32> = t.flatten_all()?.to_vec1()?;
        let bytes: Vec<u8> = flat.iter().flat_map(|v| v.to_le_bytes()).collect();
        buffers.push((name.clone(), shape, bytes));
    }
    buffers.sort_by(|a, b| a.0.cmp(&b.0));
    let views: Vec<(String, TensorView)> = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            let view = TensorView::new(Dtype::F32, shape.clone(), bytes)
                .expect("buffer length matches shape");
            (name.clone(), view)
        })
        .collect();
    let mut metadata = HashMap::new();
    metadata.insert("format_version".to_string(), CHECKPOINT_VERSION.to_string());
    metadata.insert(
        "config".to_string(),
        serde_json::to_string(config).expect("config serializes"),
    );
    metadata.insert("step".to_string(), step.to_string());
    safetensors::serialize_to_file(views, &Some(metadata), path)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    Ok(())
}

/// Load a checkpoint into a fresh `VarMap`. The caller rebuilds the model
/// from the returned config; parameter names must line up exactly.
pub fn load_checkpoint(
    path: &Path,
    device: &Device,
) -> Result<(ModelConfig, VarMap, usize), CheckpointError> {
    let bytes = std::fs::read(path)?;
    let st = safetensors::SafeTensors::deserialize(&bytes)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let meta = safetensors::SafeTensors::read_metadata(&bytes)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?
        .1;
    let metadata = meta
        .metadata()
        .as_ref()
        .ok_or_else(|| CheckpointError::Corrupt("missing metadata".into()))?
        .clone();
    let version = metadata
        .get("format_version")
        .ok_or_else(|| CheckpointError::Corrupt("missing format_version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Corrupt(format!("unsupported version {version}")));
    }
    let config: ModelConfig = serde_json::from_str(
        metadata
            .get("config")
            .ok_or_else(|| CheckpointError::Corrupt("missing config".into()))?,
    )
    .map_err(|e| CheckpointError::Corrupt(format!("bad config: {e}")))?;
    let step: usize = metadata
        .get("step")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CheckpointError::Corrupt("missing step".into()))?;

    let varmap = VarMap::new();
    {
        let mut data = varmap.data().lock().unwrap();
        for name in st.names() {
            let view = st
                .tensor(name)
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            if view.dtype() != Dtype::F32 {
                return Err(CheckpointError::Corrupt(format!(
                    "tensor {name} has dtype {:?}",
                    view.dtype()
                )));
            }
            let floats: Vec<f32> = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::from_vec(floats, view.shape(), device)?;
            data.insert(name.to_string(), candle_core::Var::from_tensor(&t)?);
        }
    }
    Ok((config, varmap, step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::net::Model;

    #[test]
    fn checkpoint_roundtrip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.safetensors");
        let cfg = ModelConfig::tiny(64);
        let device = Device::Cpu;
        let (model, varmap) = Model::init(&cfg, &device).unwrap();
        let img = Tensor::rand(0f32, 1f32, (1, 64, 64), &device).unwrap();
        let before = model
            .forward(&img, &crate::ml::net::PromptEmbedding::empty())
            .unwrap();
        save_checkpoint(&varmap, &cfg, 123, &path).unwrap();

        let (cfg2, varmap2, step) = load_checkpoint(&path, &device).unwrap();
        assert_eq!(step, 123);
        assert_eq!(cfg2, cfg);
        let vb = candle_nn::VarBuilder::from_varmap(&varmap2, DType::F32, &device);
        let model2 = Model::new(&cfg2, vb).unwrap();
        let after = model2
            .forward(&img, &crate::ml::net::PromptEmbedding::empty())
            .unwrap();
        let a: Vec<f32> = before.elem_points.flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = after.elem_points.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.safetensors");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(
            load_checkpoint(&path, &Device::Cpu),
            Err(CheckpointError::Corrupt(_))
        ));
    }
}
