//! Checkpoint directories: `manifest.json` plus one PTNS file per parameter
//! under `params/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::spec::{ModelVariant, NetworkSpec, Scale};
use super::{ArchitectureError, Result};
use crate::tensor::{read_ptns_file, write_ptns_file};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_DIR: &str = "params";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub variant: ModelVariant,
    pub scale: Scale,
    pub seed: u64,
    pub params: Vec<ParamEntry>,
    /// Free-form training metadata (epoch, validation MAE, ...).
    #[serde(default)]
    pub training: serde_json::Value,
}

fn file_name(param: &str) -> String {
    format!("{}.ptns", param.replace('/', "."))
}

fn ckpt_err(path: &Path, message: impl ToString) -> ArchitectureError {
    ArchitectureError::Checkpoint {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

pub fn save_checkpoint(dir: impl AsRef<Path>, params: &ModelParams, training: serde_json::Value) -> Result<()> {
    let dir = dir.as_ref();
    let tensor_dir = dir.join(PARAMS_DIR);
    fs::create_dir_all(&tensor_dir).map_err(|e| ckpt_err(&tensor_dir, e))?;
    let mut entries = Vec::with_capacity(params.len());
    for (name, tensor) in params.iter() {
        let file = file_name(name);
        write_ptns_file(tensor, tensor_dir.join(&file))?;
        entries.push(ParamEntry {
            name: name.to_owned(),
            shape: tensor.shape().to_vec(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        variant: params.variant,
        scale: params.scale,
        seed: params.seed,
        params: entries,
        training,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| ckpt_err(&path, e))? + "\n";
    fs::write(&path, json).map_err(|e| ckpt_err(&path, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(NetworkSpec, ModelParams, CheckpointManifest)> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| ckpt_err(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| ckpt_err(&path, e))?;
    let spec = NetworkSpec::new(manifest.variant, manifest.scale);
    let mut tensors = BTreeMap::new();
    for entry in &manifest.params {
        let tensor_path = dir.join(PARAMS_DIR).join(&entry.file);
        let tensor = read_ptns_file(&tensor_path).map_err(|e| ckpt_err(&tensor_path, e))?;
        if tensor.shape() != entry.shape {
            return Err(ckpt_err(
                &tensor_path,
                format!("shape {:?} disagrees with manifest {:?}", tensor.shape(), entry.shape),
            ));
        }
        tensors.insert(entry.name.clone(), tensor);
    }
    let params = ModelParams::from_tensors(&spec, manifest.seed, tensors)?;
    Ok((spec, params, manifest))
}
