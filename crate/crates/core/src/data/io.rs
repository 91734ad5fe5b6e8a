//! On-disk layout: `manifest.json` (array of [`ManifestEntry`]) plus one NTSR
//! container per sequence holding `frames [T,C,H,W]`, `boxes [T,4]` and, when
//! the scene has vehicles, `vehicle_boxes [V,T,4]`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{PedestrianSequence, Trajectory};
use crate::numeric::{read_ntsr_file, write_ntsr_file, NtsrError, Tensor};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub crossing: bool,
    pub event_frame: usize,
    pub fps: u32,
    pub file: String,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: {source}")]
    Container { path: PathBuf, source: NtsrError },
    #[error("{path}: {reason}")]
    Inconsistent { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_owned(), source }
}

fn file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.ntsr")
}

/// Write every sequence container, then the manifest.
pub fn write_dataset(dir: &Path, sequences: &[PedestrianSequence]) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = Vec::with_capacity(sequences.len());
    for seq in sequences {
        seq.validate().map_err(|e| DatasetError::Inconsistent { path: dir.to_owned(), reason: e.to_string() })?;
        let file = file_name(&seq.id);
        let path = dir.join(&file);
        let boxes = seq.trajectory.to_tensor();
        let vehicles = (!seq.vehicles.is_empty()).then(|| {
            let data: Vec<f32> = seq.vehicles.iter().flat_map(|v| v.to_tensor().into_data()).collect();
            Tensor::new(vec![seq.vehicles.len(), seq.len(), 4], data).expect("validated lengths")
        });
        let mut entries: Vec<(&str, &Tensor<f32>)> = vec![("frames", &seq.frames), ("boxes", &boxes)];
        if let Some(v) = &vehicles {
            entries.push(("vehicle_boxes", v));
        }
        write_ntsr_file(&path, &entries).map_err(|source| DatasetError::Container { path: path.clone(), source })?;
        manifest.push(ManifestEntry {
            id: seq.id.clone(),
            t: seq.len(),
            crossing: seq.crossing,
            event_frame: seq.event_frame,
            fps: seq.fps,
            file,
        });
    }
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(io_err(&path))
}

pub fn read_dataset(dir: &Path) -> Result<Vec<PedestrianSequence>, DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(DatasetError::MissingFile(path));
    }
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Vec<ManifestEntry> = serde_json::from_str(&text)
        .map_err(|e| DatasetError::MalformedManifest { path: path.clone(), reason: e.to_string() })?;
    manifest.into_iter().map(|entry| read_sequence(dir, entry)).collect()
}

fn read_sequence(dir: &Path, entry: ManifestEntry) -> Result<PedestrianSequence, DatasetError> {
    let path = dir.join(&entry.file);
    if !path.is_file() {
        return Err(DatasetError::MissingFile(path));
    }
    let inconsistent = |reason: String| DatasetError::Inconsistent { path: path.clone(), reason };
    let mut tensors = read_ntsr_file(&path).map_err(|source| DatasetError::Container { path: path.clone(), source })?;
    let mut take = |name: &str| tensors.iter().position(|(n, _)| n == name).map(|i| tensors.remove(i).1);
    let frames = take("frames").ok_or_else(|| inconsistent("no `frames` entry".into()))?;
    let boxes = take("boxes").ok_or_else(|| inconsistent("no `boxes` entry".into()))?;
    let vehicle_boxes = take("vehicle_boxes");

    if boxes.shape() != [entry.t, 4] {
        return Err(inconsistent(format!("boxes shape {:?}, manifest T = {}", boxes.shape(), entry.t)));
    }
    let vehicles = match vehicle_boxes {
        None => Vec::new(),
        Some(v) if v.rank() == 3 && v.shape()[1] == entry.t && v.shape()[2] == 4 => {
            v.data().chunks_exact(entry.t * 4).map(Trajectory::from_rows).collect()
        }
        Some(v) => return Err(inconsistent(format!("vehicle_boxes shape {:?}", v.shape()))),
    };
    let seq = PedestrianSequence {
        id: entry.id,
        frames,
        trajectory: Trajectory::from_rows(boxes.data()),
        vehicles,
        crossing: entry.crossing,
        event_frame: entry.event_frame,
        fps: entry.fps,
    };
    seq.validate().map_err(|e| inconsistent(e.to_string()))?;
    Ok(seq)
}
