//! Checkpoint directory: `checkpoint.toml` (config, epoch, class names,
//! normalisation, tensor table) plus `params.bin`, a rank-1 tensor file with
//! every parameter concatenated in table order.
//!
//! Parameters are stored as f32, so a reloaded model matches the trained one
//! to single precision.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{C3DConfig, Model, ModelError, Result};
use crate::dataset::format::{self, TensorFile};
use crate::dataset::NormStats;
use crate::nn::Tensor;

const FORMAT: &str = "csilab-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub class_names: Vec<String>,
    pub normalization: NormStats,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    meta: CheckpointMeta,
    model: C3DConfig,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(model: &Model, meta: &CheckpointMeta, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let data: Vec<f32> = model.flat_params().iter().map(|&v| v as f32).collect();
    let file = TensorFile::unlabeled(vec![data.len()], data);
    format::write_tensor_file(&dir.join("params.bin"), &file)?;
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        meta: meta.clone(),
        model: model.config().clone(),
        tensors: model
            .param_names()
            .into_iter()
            .zip(model.params())
            .map(|(n, p)| TensorEntry { name: n.to_string(), shape: p.shape().to_vec() })
            .collect(),
    };
    let text = toml::to_string(&manifest).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    format::write_atomic(&dir.join("checkpoint.toml"), text.as_bytes())?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, CheckpointMeta)> {
    let text = fs::read_to_string(dir.join("checkpoint.toml"))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| ModelError::Checkpoint(format!("checkpoint.toml: {e}")))?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported checkpoint {} v{}", m.format, m.version)));
    }
    let file = format::read_tensor_file(&dir.join("params.bin"))?;
    let total: usize = m.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if file.dims != [total] {
        return Err(ModelError::Checkpoint(format!(
            "params.bin dims {:?}, tensor table needs [{total}]",
            file.dims
        )));
    }
    let mut off = 0;
    let mut params = Vec::with_capacity(m.tensors.len());
    for t in &m.tensors {
        let n: usize = t.shape.iter().product();
        let vals = file.data[off..off + n].iter().map(|&v| v as f64).collect();
        params.push(Tensor::new(&t.shape, vals)?);
        off += n;
    }
    let model = Model::from_parts(m.model, params)?;
    if model.param_names().iter().zip(&m.tensors).any(|(a, b)| *a != b.name) {
        return Err(ModelError::Checkpoint("tensor names disagree with the model layout".into()));
    }
    Ok((model, m.meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_parameters_to_single_precision() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::build(C3DConfig::reduced(3).with_attention(true, true), 1).unwrap();
        let meta = CheckpointMeta {
            epoch: 4,
            class_names: vec!["a".into(), "b".into(), "c".into()],
            normalization: NormStats { mean: 1.5, std: 0.25 },
        };
        save_checkpoint(&model, &meta, dir.path()).unwrap();
        let (back, m) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(m, meta);
        assert_eq!(back.config(), model.config());
        let diff = back.flat_params().iter().zip(model.flat_params()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-6, "{diff}");
        // Saving the reloaded model reproduces the files byte for byte.
        let dir2 = tempfile::tempdir().unwrap();
        save_checkpoint(&back, &m, dir2.path()).unwrap();
        for f in ["params.bin", "checkpoint.toml"] {
            assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(dir2.path().join(f)).unwrap());
        }
    }

    #[test]
    fn truncated_params_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::build(C3DConfig::reduced(2), 1).unwrap();
        let meta = CheckpointMeta { epoch: 0, class_names: vec![], normalization: NormStats { mean: 0.0, std: 1.0 } };
        save_checkpoint(&model, &meta, dir.path()).unwrap();
        let p = dir.path().join("params.bin");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
