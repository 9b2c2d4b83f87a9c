use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::detector::DetectionConfig;
use super::heads::{HeadDims, ProjectionHeads};
use crate::{Error, Result};

pub const HEADS_FILE: &str = "heads.bin";
pub const CONFIG_FILE: &str = "config.json";
const LAYOUT: &str = "f32-le-row-major";
const TENSORS: [&str; 6] = ["object.w1", "object.b1", "object.w2", "object.b2", "text.w", "text.b"];

/// Adapter tags a checkpoint was trained against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTags {
    pub detector: String,
    pub backbone: String,
    pub embedder: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub dims: HeadDims,
    pub tags: ModelTags,
    pub c_min: f64,
    pub n_max: usize,
    pub layout: String,
    pub tensors: Vec<String>,
}

impl CheckpointConfig {
    pub fn new(dims: HeadDims, tags: ModelTags, detection: DetectionConfig) -> Self {
        Self {
            dims,
            tags,
            c_min: detection.c_min,
            n_max: detection.n_max,
            layout: LAYOUT.to_string(),
            tensors: TENSORS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn detection(&self) -> DetectionConfig {
        DetectionConfig {
            c_min: self.c_min,
            n_max: self.n_max,
        }
    }

    /// Fails unless the checkpoint was trained with the given adapters.
    pub fn expect_tags(&self, tags: &ModelTags) -> Result<()> {
        if &self.tags != tags {
            return Err(Error::Checkpoint(format!(
                "trained with {:?}, runtime uses {:?}",
                self.tags, tags
            )));
        }
        Ok(())
    }
}

/// Writes `heads.bin` and `config.json` into `dir`. Parameters are stored as
/// f32, so a reload equals `heads` rounded to f32.
pub fn save_checkpoint(dir: impl AsRef<Path>, heads: &ProjectionHeads, config: &CheckpointConfig) -> Result<()> {
    let dir = dir.as_ref();
    if heads.dims() != config.dims {
        return Err(Error::Checkpoint("heads do not match config dims".into()));
    }
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(heads.param_count() * 4);
    for t in heads.tensors() {
        for &v in t {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let tmp = dir.join(".heads.bin.tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, dir.join(HEADS_FILE))?;
    fs::write(dir.join(CONFIG_FILE), serde_json::to_vec_pretty(config)?)?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(ProjectionHeads, CheckpointConfig)> {
    let dir = dir.as_ref();
    let cfg_path = dir.join(CONFIG_FILE);
    let cfg_text = fs::read(&cfg_path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", cfg_path.display())))?;
    let config: CheckpointConfig = serde_json::from_slice(&cfg_text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", cfg_path.display())))?;
    if config.layout != LAYOUT || config.tensors != TENSORS {
        return Err(Error::Checkpoint(format!("unsupported layout {:?}", config.layout)));
    }
    let bin_path = dir.join(HEADS_FILE);
    let bytes = fs::read(&bin_path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", bin_path.display())))?;
    let mut heads = ProjectionHeads::zeros(config.dims);
    let expected = heads.param_count() * 4;
    if bytes.len() != expected {
        return Err(Error::Checkpoint(format!(
            "{} holds {} bytes, dims need {expected}",
            bin_path.display(),
            bytes.len()
        )));
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    for t in heads.tensors_mut() {
        for slot in t.iter_mut() {
            *slot = values.next().expect("length checked");
        }
    }
    if !heads.is_finite() {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    Ok((heads, config))
}

impl ProjectionHeads {
    /// Rounds every parameter to f32 precision, matching a save/load cycle.
    pub fn rounded_to_f32(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            for v in t.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
        out
    }
}
