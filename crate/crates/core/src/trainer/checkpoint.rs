//! Single-file training archives: safetensors payload plus one JSON metadata entry.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::models::{CycleModel, Parameterized};

pub const META_KEY: &str = "ps2man";
pub const FORMAT_VERSION: u32 = 1;

pub fn epoch_name(epoch: usize) -> String {
    format!("ckpt_e{epoch}.bin")
}
pub const BEST_NAME: &str = "ckpt_best.bin";
pub const LAST_NAME: &str = "ckpt_last.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: u32,
    pub epoch: usize,
    /// Completed optimization steps; per-step randomness derives from it.
    pub step: u64,
    pub config_hash: String,
    /// Resolved configuration as TOML.
    pub config: String,
    pub best_val: Option<f64>,
    /// Adam step counters by optimizer name.
    pub optimizers: BTreeMap<String, u64>,
    /// Replay buffer `(stored images, swaps)` by buffer name.
    pub replay: BTreeMap<String, (usize, u64)>,
}

/// Raw archive contents.
#[derive(Debug)]
pub struct Archive {
    pub meta: CheckpointMeta,
    pub tensors: HashMap<String, Tensor>,
}

fn corrupt(path: &Path, reason: impl ToString) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

pub fn encode(meta: &CheckpointMeta, tensors: Vec<(String, Tensor)>) -> Result<Vec<u8>> {
    let json = serde_json::to_string(meta).expect("metadata serializes");
    let info = HashMap::from([(META_KEY.to_string(), json)]);
    safetensors::serialize(tensors, Some(info)).map_err(|e| Error::Config(format!("checkpoint encoding: {e}")))
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp: PathBuf = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("ckpt")
    ));
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Archive> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes)
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Archive> {
    let (_, header) = safetensors::SafeTensors::read_metadata(bytes).map_err(|e| corrupt(path, e))?;
    let json = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| corrupt(path, "missing metadata"))?;
    let meta: CheckpointMeta = serde_json::from_str(json).map_err(|e| corrupt(path, e))?;
    if meta.format != FORMAT_VERSION {
        return Err(corrupt(path, format!("unsupported format {}", meta.format)));
    }
    let tensors = candle_core::safetensors::load_buffer(bytes, &Device::Cpu).map_err(|e| corrupt(path, e))?;
    Ok(Archive { meta, tensors })
}

impl Archive {
    pub fn config(&self, path: &Path) -> Result<Config> {
        Config::from_toml_str(&self.meta.config).map_err(|e| corrupt(path, e))
    }

    pub fn take(&self, path: &Path, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| corrupt(path, format!("missing tensor {name}")))
    }

    /// Copies every `model.*` tensor into `model`.
    pub fn restore_model(&self, path: &Path, model: &CycleModel) -> Result<()> {
        for (name, var) in model.state() {
            let t = self.take(path, &format!("model.{name}"))?;
            if t.dims() != var.dims() {
                return Err(corrupt(path, format!("{name}: stored {:?}, expected {:?}", t.dims(), var.dims())));
            }
            var.set(t)?;
        }
        Ok(())
    }
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// The trained networks and resolved configuration stored in a checkpoint.
pub fn load_model(path: &Path) -> Result<(CycleModel, Config)> {
    let archive = read(path)?;
    let config = archive.config(path)?;
    let model = CycleModel::build(&config.model, config.seed)?;
    archive.restore_model(path, &model)?;
    Ok((model, config))
}

pub fn model_tensors(model: &CycleModel) -> Vec<(String, Tensor)> {
    model
        .state()
        .into_iter()
        .map(|(n, v)| (format!("model.{n}"), v.as_tensor().clone()))
        .collect()
}
