//! Synthetic relational traffic scenes, dataset persistence and
//! time-to-event window sampling.

mod io;
mod sampling;
pub mod scenario;
mod split;

pub use io::{read_dataset, write_dataset, DatasetError, ManifestEntry, MANIFEST_FILE};
pub use sampling::{
    batch_samples, eligible_last_frames, normalize_box, stride, subsample_tte, window_refs, ObservationSample,
    SampleSource, SamplingConfig, WindowRef, WindowSet,
};
pub use scenario::{generate_dataset, generate_scenario, ScenarioParams};
pub use split::{split_dataset, DatasetSplit};

use thiserror::Error;

use crate::numeric::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("invalid sampling: {0}")]
    InvalidSampling(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("sequence `{id}`: {reason}")]
    InvalidSequence { id: String, reason: String },
}

/// Bounding box in pixels: center `(u, v)`, width `w`, height `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub u: f32,
    pub v: f32,
    pub w: f32,
    pub h: f32,
}

impl BBox {
    pub fn to_array(self) -> [f32; 4] {
        [self.u, self.v, self.w, self.h]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub boxes: Vec<BBox>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// `[T, 4]` pixel boxes.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let data = self.boxes.iter().flat_map(|b| b.to_array()).collect();
        Tensor::new(vec![self.boxes.len().max(1), 4], data).unwrap_or_else(|_| Tensor::zeros(&[1, 4]))
    }

    /// Inverse of [`Trajectory::to_tensor`]; `data` is row-major `[T, 4]`.
    pub fn from_rows(data: &[f32]) -> Self {
        Trajectory {
            boxes: data.chunks_exact(4).map(|c| BBox { u: c[0], v: c[1], w: c[2], h: c[3] }).collect(),
        }
    }
}

/// One tracked pedestrian with its rendered scene.
#[derive(Debug, Clone, PartialEq)]
pub struct PedestrianSequence {
    pub id: String,
    /// `[T, C, H, W]`
    pub frames: Tensor<f32>,
    pub trajectory: Trajectory,
    /// Other actors in the scene, each with `T` boxes.
    pub vehicles: Vec<Trajectory>,
    pub crossing: bool,
    /// Decision frame `t_d`.
    pub event_frame: usize,
    pub fps: u32,
}

impl PedestrianSequence {
    pub fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty()
    }

    /// Frame geometry `(C, H, W)`.
    pub fn frame_geometry(&self) -> (usize, usize, usize) {
        let s = self.frames.shape();
        (s[1], s[2], s[3])
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |reason: String| DataError::InvalidSequence { id: self.id.clone(), reason };
        let s = self.frames.shape();
        if s.len() != 4 {
            return Err(bad(format!("frames must be rank 4, got shape {s:?}")));
        }
        let t = self.trajectory.len();
        if s[0] != t {
            return Err(bad(format!("{} frames but {t} boxes", s[0])));
        }
        if self.event_frame >= t {
            return Err(bad(format!("event_frame {} outside 0..{t}", self.event_frame)));
        }
        if let Some(i) = self.trajectory.boxes.iter().position(|b| !(b.w > 0.0 && b.h > 0.0)) {
            return Err(bad(format!("box {i} has non-positive size")));
        }
        if let Some(i) = self.vehicles.iter().position(|v| v.len() != t) {
            return Err(bad(format!("vehicle {i} has {} boxes, expected {t}", self.vehicles[i].len())));
        }
        Ok(())
    }
}
