//! Checkpoints: `params.bin` (little-endian f32, flattening order) plus a
//! `params.json` manifest describing the model and the tensor layout.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_resnet9, Model, ModelSpec, ParamEntry};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const PARAMS_BIN: &str = "params.bin";
pub const PARAMS_JSON: &str = "params.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub layer: String,
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub length: usize,
}

impl From<ParamEntry> for CheckpointEntry {
    fn from(e: ParamEntry) -> Self {
        Self { layer: e.layer, name: e.name, shape: e.shape, offset: e.offset, length: e.len }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model: ModelSpec,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    pub dtype: String,
    pub param_count: usize,
    pub entries: Vec<CheckpointEntry>,
}

pub fn save_checkpoint<T: Scalar>(
    dir: &Path,
    spec: &ModelSpec,
    model: &Model<T>,
    dataset: Option<&Path>,
) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir)?;
    let params = model.parameters();
    let mut bytes = Vec::with_capacity(params.len() * 4);
    for p in &params {
        bytes.extend_from_slice(&(p.as_f64() as f32).to_le_bytes());
    }
    fs::write(dir.join(PARAMS_BIN), bytes)?;
    let manifest = CheckpointManifest {
        model: spec.clone(),
        dataset: dataset.map(Path::to_path_buf),
        dtype: "<f4".into(),
        param_count: params.len(),
        entries: model.param_entries().into_iter().map(Into::into).collect(),
    };
    fs::write(dir.join(PARAMS_JSON), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Rebuild the model described by `dir/params.json` and load its weights.
pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<(Model<T>, CheckpointManifest)> {
    let json = dir.join(PARAMS_JSON);
    let bin = dir.join(PARAMS_BIN);
    for p in [&json, &bin] {
        if !p.exists() {
            return Err(Error::NotFound(p.clone()));
        }
    }
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(&json)?)?;
    if manifest.dtype != "<f4" {
        return Err(Error::UnsupportedDtype(manifest.dtype.clone()));
    }
    let mut model = build_resnet9::<T, _>(&manifest.model, &mut ChaCha8Rng::seed_from_u64(0))?;
    let expected: Vec<CheckpointEntry> = model.param_entries().into_iter().map(Into::into).collect();
    if expected != manifest.entries || manifest.param_count != model.param_count() {
        return Err(Error::Format(format!("{} does not match the model it describes", json.display())));
    }
    let bytes = fs::read(&bin)?;
    if bytes.len() != 4 * manifest.param_count {
        return Err(Error::Format(format!(
            "{} holds {} bytes, expected {}",
            bin.display(),
            bytes.len(),
            4 * manifest.param_count
        )));
    }
    let params: Vec<T> = bytes
        .chunks_exact(4)
        .map(|c| T::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("{} contains non-finite values", bin.display())));
    }
    model.set_parameters(&params)?;
    Ok((model, manifest))
}
