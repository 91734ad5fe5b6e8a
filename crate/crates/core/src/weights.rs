//! Model weights as NTSR containers, one entry per parameter. Values are
//! always stored as f32; 64-bit models are narrowed on save.

use std::path::Path;

use thiserror::Error;

use crate::model::{param_manifest, IntentModel, ModelConfig};
use crate::numeric::{read_ntsr, read_ntsr_file, write_ntsr, write_ntsr_file, NtsrError, ParamStore, Real, Tensor};

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error(transparent)]
    Container(#[from] NtsrError),
    #[error("weights file lacks parameter `{0}`")]
    MissingParam(String),
    #[error("weights file has unexpected entries: {}", .0.join(", "))]
    UnexpectedEntries(Vec<String>),
    #[error("parameter `{name}` has shape {got:?}, config expects {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("duplicate entry `{0}`")]
    DuplicateEntry(String),
}

fn narrowed<T: Real>(model: &IntentModel<T>) -> Vec<(String, Tensor<f32>)> {
    model.params.iter().map(|(n, t)| (n.to_owned(), t.cast::<f32>())).collect()
}

pub fn weights_bytes<T: Real>(model: &IntentModel<T>) -> Vec<u8> {
    let owned = narrowed(model);
    let entries: Vec<(&str, &Tensor<f32>)> = owned.iter().map(|(n, t)| (n.as_str(), t)).collect();
    write_ntsr(&entries)
}

pub fn save_weights<T: Real>(model: &IntentModel<T>, path: &Path) -> Result<(), WeightsError> {
    let owned = narrowed(model);
    let entries: Vec<(&str, &Tensor<f32>)> = owned.iter().map(|(n, t)| (n.as_str(), t)).collect();
    Ok(write_ntsr_file(path, &entries)?)
}

/// Accept the entries only if they match the manifest of `config` exactly.
pub fn model_from_entries<T: Real>(
    entries: Vec<(String, Tensor<f32>)>,
    config: &ModelConfig,
) -> Result<IntentModel<T>, WeightsError> {
    let manifest = param_manifest(config);
    let unexpected: Vec<String> = entries
        .iter()
        .filter(|(n, _)| !manifest.iter().any(|s| &s.name == n))
        .map(|(n, _)| n.clone())
        .collect();
    if !unexpected.is_empty() {
        return Err(WeightsError::UnexpectedEntries(unexpected));
    }
    let mut params = ParamStore::new();
    for (name, t) in entries {
        if params.contains(&name) {
            return Err(WeightsError::DuplicateEntry(name));
        }
        params.insert(name, t.cast::<T>()).expect("checked for duplicates");
    }
    for spec in &manifest {
        let t = params.get(&spec.name).ok_or_else(|| WeightsError::MissingParam(spec.name.clone()))?;
        if t.shape() != spec.shape.as_slice() {
            return Err(WeightsError::ShapeMismatch {
                name: spec.name.clone(),
                expected: spec.shape.clone(),
                got: t.shape().to_vec(),
            });
        }
    }
    Ok(IntentModel::from_params(config.clone(), params).expect("manifest already validated"))
}

pub fn load_weights<T: Real>(path: &Path, config: &ModelConfig) -> Result<IntentModel<T>, WeightsError> {
    model_from_entries(read_ntsr_file(path)?, config)
}

pub fn weights_from_bytes<T: Real>(bytes: &[u8], config: &ModelConfig) -> Result<IntentModel<T>, WeightsError> {
    model_from_entries(read_ntsr(bytes)?, config)
}
