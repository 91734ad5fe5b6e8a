//! Fixed-length observation windows whose last frame lies a bounded number of
//! frames before the event.

use serde::{Deserialize, Serialize};

use super::{BBox, DataError, PedestrianSequence};
use crate::model::ModelInput;
use crate::numeric::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub tau: usize,
    /// Fraction of a window shared with the next one, in `[0, 1)`.
    pub overlap: f64,
    pub tte_min: usize,
    pub tte_max: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { tau: 16, overlap: 0.8, tte_min: 30, tte_max: 60 }
    }
}

impl SamplingConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.tau == 0 {
            v.push("sampling.tau: must be ≥ 1".into());
        }
        if !(0.0..1.0).contains(&self.overlap) {
            v.push(format!("sampling.overlap: must be in [0, 1), got {}", self.overlap));
        }
        if self.tte_min > self.tte_max {
            v.push(format!(
                "sampling.tte_min: {} exceeds tte_max {}",
                self.tte_min, self.tte_max
            ));
        }
        v
    }

    fn check(&self) -> Result<(), DataError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(DataError::InvalidSampling(v.join("; ")))
        }
    }
}

/// `max(1, round(tau·(1 − overlap)))`, rounding half away from zero.
pub fn stride(tau: usize, overlap: f64) -> usize {
    ((tau as f64 * (1.0 - overlap)).round() as usize).max(1)
}

/// Last-frame indices of every emitted window for a track of `t_len` frames.
pub fn eligible_last_frames(t_len: usize, event_frame: usize, cfg: &SamplingConfig) -> Vec<usize> {
    if cfg.tau == 0 || event_frame < cfg.tte_min || t_len == 0 {
        return Vec::new();
    }
    let lo = event_frame.saturating_sub(cfg.tte_max).max(cfg.tau - 1);
    let hi = (event_frame - cfg.tte_min).min(t_len - 1);
    if lo > hi {
        return Vec::new();
    }
    (lo..=hi).step_by(stride(cfg.tau, cfg.overlap)).collect()
}

/// `(u/W, v/H, w/W, h/H)` clamped to `[0, 1]`.
pub fn normalize_box(b: &BBox, width: usize, height: usize) -> [f32; 4] {
    let (w, h) = (width as f32, height as f32);
    [b.u / w, b.v / h, b.w / w, b.h / h].map(|x| x.clamp(0.0, 1.0))
}

/// A materialized window.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSample {
    /// `[tau, C, H, W]`
    pub frames: Tensor<f32>,
    /// `[tau, 4]`
    pub boxes_norm: Tensor<f32>,
    pub label: bool,
    pub tte: usize,
    pub source_id: String,
    pub t_last: usize,
}

/// A window identified by its sequence index and last frame, materialized on
/// demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    pub seq: usize,
    pub t_last: usize,
    pub tte: usize,
    pub label: bool,
}

fn copy_window(
    seq: &PedestrianSequence,
    t_last: usize,
    tau: usize,
    frames: &mut Vec<f32>,
    boxes: &mut Vec<f32>,
) {
    let (c, h, w) = seq.frame_geometry();
    let frame_len = c * h * w;
    let first = t_last + 1 - tau;
    frames.extend_from_slice(&seq.frames.data()[first * frame_len..(t_last + 1) * frame_len]);
    for b in &seq.trajectory.boxes[first..=t_last] {
        boxes.extend_from_slice(&normalize_box(b, w, h));
    }
}

/// Every window of `seq`, materialized.
pub fn subsample_tte(
    seq: &PedestrianSequence,
    tau: usize,
    overlap: f64,
    tte_min: usize,
    tte_max: usize,
) -> Result<Vec<ObservationSample>, DataError> {
    let cfg = SamplingConfig { tau, overlap, tte_min, tte_max };
    cfg.check()?;
    seq.validate()?;
    let (c, h, w) = seq.frame_geometry();
    eligible_last_frames(seq.len(), seq.event_frame, &cfg)
        .into_iter()
        .map(|t_last| {
            let (mut frames, mut boxes) = (Vec::new(), Vec::new());
            copy_window(seq, t_last, tau, &mut frames, &mut boxes);
            Ok(ObservationSample {
                frames: Tensor::new(vec![tau, c, h, w], frames).expect("window shape"),
                boxes_norm: Tensor::new(vec![tau, 4], boxes).expect("window shape"),
                label: seq.crossing,
                tte: seq.event_frame - t_last,
                source_id: seq.id.clone(),
                t_last,
            })
        })
        .collect()
}

/// Window references for every sequence in `sequences`.
pub fn window_refs(sequences: &[PedestrianSequence], cfg: &SamplingConfig) -> Result<Vec<WindowRef>, DataError> {
    cfg.check()?;
    let mut out = Vec::new();
    for (i, seq) in sequences.iter().enumerate() {
        seq.validate()?;
        out.extend(eligible_last_frames(seq.len(), seq.event_frame, cfg).into_iter().map(|t_last| {
            WindowRef { seq: i, t_last, tte: seq.event_frame - t_last, label: seq.crossing }
        }));
    }
    Ok(out)
}

/// Windows over a borrowed set of sequences, batched lazily.
#[derive(Debug, Clone)]
pub struct WindowSet<'a> {
    pub sequences: &'a [PedestrianSequence],
    pub windows: Vec<WindowRef>,
    pub tau: usize,
}

impl<'a> WindowSet<'a> {
    pub fn new(sequences: &'a [PedestrianSequence], cfg: &SamplingConfig) -> Result<Self, DataError> {
        let windows = window_refs(sequences, cfg)?;
        Ok(WindowSet { sequences, windows, tau: cfg.tau })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.windows.iter().map(|w| w.label).collect()
    }

    /// Keep the first `n` windows.
    pub fn truncate(&mut self, n: usize) {
        self.windows.truncate(n);
    }

    pub fn sample(&self, i: usize) -> ObservationSample {
        let r = self.windows[i];
        let seq = &self.sequences[r.seq];
        let (c, h, w) = seq.frame_geometry();
        let (mut frames, mut boxes) = (Vec::new(), Vec::new());
        copy_window(seq, r.t_last, self.tau, &mut frames, &mut boxes);
        ObservationSample {
            frames: Tensor::new(vec![self.tau, c, h, w], frames).expect("window shape"),
            boxes_norm: Tensor::new(vec![self.tau, 4], boxes).expect("window shape"),
            label: r.label,
            tte: r.tte,
            source_id: seq.id.clone(),
            t_last: r.t_last,
        }
    }

    /// Frame geometry `(C, H, W)` of the underlying sequences.
    pub fn frame_geometry(&self) -> Option<(usize, usize, usize)> {
        self.sequences.first().map(PedestrianSequence::frame_geometry)
    }

    /// Stack `indices` into a model batch plus `[B]` labels.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> (ModelInput<T>, Tensor<T>) {
        let (mut frames, mut boxes) = (Vec::new(), Vec::new());
        let mut labels = Vec::with_capacity(indices.len());
        let mut geom = (0, 0, 0);
        for &i in indices {
            let r = self.windows[i];
            let seq = &self.sequences[r.seq];
            geom = seq.frame_geometry();
            copy_window(seq, r.t_last, self.tau, &mut frames, &mut boxes);
            labels.push(if r.label { T::one() } else { T::zero() });
        }
        stack(frames, boxes, labels, indices.len(), self.tau, geom)
    }
}

/// Anything that can be batched for the network.
pub trait SampleSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, i: usize) -> bool;

    /// Stack `indices` into a model batch plus `[B]` labels.
    fn batch<T: Real>(&self, indices: &[usize]) -> (ModelInput<T>, Tensor<T>);

    /// `(tau, C, H, W)` of every window, `None` when empty.
    fn window_geometry(&self) -> Option<(usize, usize, usize, usize)>;
}

impl SampleSource for WindowSet<'_> {
    fn len(&self) -> usize {
        self.windows.len()
    }

    fn label(&self, i: usize) -> bool {
        self.windows[i].label
    }

    fn batch<T: Real>(&self, indices: &[usize]) -> (ModelInput<T>, Tensor<T>) {
        WindowSet::batch(self, indices)
    }

    fn window_geometry(&self) -> Option<(usize, usize, usize, usize)> {
        let first = self.windows.first()?;
        let (c, h, w) = self.sequences[first.seq].frame_geometry();
        Some((self.tau, c, h, w))
    }
}

impl SampleSource for [ObservationSample] {
    fn len(&self) -> usize {
        <[ObservationSample]>::len(self)
    }

    fn label(&self, i: usize) -> bool {
        self[i].label
    }

    fn batch<T: Real>(&self, indices: &[usize]) -> (ModelInput<T>, Tensor<T>) {
        let picked: Vec<&ObservationSample> = indices.iter().map(|&i| &self[i]).collect();
        batch_samples(&picked)
    }

    fn window_geometry(&self) -> Option<(usize, usize, usize, usize)> {
        let s = self.first()?.frames.shape();
        Some((s[0], s[1], s[2], s[3]))
    }
}

/// Stack materialized samples into a model batch plus `[B]` labels.
pub fn batch_samples<T: Real>(samples: &[&ObservationSample]) -> (ModelInput<T>, Tensor<T>) {
    let tau = samples.first().map_or(0, |s| s.frames.shape()[0]);
    let geom = samples.first().map_or((0, 0, 0), |s| {
        let sh = s.frames.shape();
        (sh[1], sh[2], sh[3])
    });
    let mut frames = Vec::new();
    let mut boxes = Vec::new();
    for s in samples {
        frames.extend_from_slice(s.frames.data());
        boxes.extend_from_slice(s.boxes_norm.data());
    }
    let labels = samples.iter().map(|s| if s.label { T::one() } else { T::zero() }).collect();
    stack(frames, boxes, labels, samples.len(), tau, geom)
}

fn stack<T: Real>(
    frames: Vec<f32>,
    boxes: Vec<f32>,
    labels: Vec<T>,
    batch: usize,
    tau: usize,
    (c, h, w): (usize, usize, usize),
) -> (ModelInput<T>, Tensor<T>) {
    let rows = (batch * tau).max(1);
    let frames = Tensor::new(vec![rows, c.max(1), h.max(1), w.max(1)], frames)
        .unwrap_or_else(|_| Tensor::zeros(&[rows, c.max(1), h.max(1), w.max(1)]))
        .cast();
    let boxes = Tensor::new(vec![rows, 4], boxes).unwrap_or_else(|_| Tensor::zeros(&[rows, 4])).cast();
    let labels = Tensor::new(vec![batch.max(1)], labels).unwrap_or_else(|_| Tensor::zeros(&[1]));
    (ModelInput { frames, boxes, batch }, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let cfg = SamplingConfig::default();
        let t: Vec<usize> = eligible_last_frames(100, 90, &cfg);
        assert_eq!(t, (30..=60).step_by(3).collect::<Vec<_>>());
        assert_eq!(t.len(), 11);
    }

    #[test]
    fn stride_examples() {
        assert_eq!(stride(16, 0.8), 3);
        assert_eq!(stride(16, 0.6), 6);
        assert_eq!(stride(16, 0.99), 1);
        assert_eq!(stride(4, 0.375), 3);
    }

    #[test]
    fn infeasible_window_is_empty() {
        assert!(eligible_last_frames(100, 10, &SamplingConfig::default()).is_empty());
    }

    #[test]
    fn normalization_clamps() {
        let b = BBox { u: -3.0, v: 24.0, w: 60.0, h: 4.8 };
        assert_eq!(normalize_box(&b, 48, 48), [0.0, 0.5, 1.0, 0.1]);
    }

    #[test]
    fn bad_sampling_is_rejected() {
        let cfg = SamplingConfig { tau: 0, overlap: 1.0, tte_min: 5, tte_max: 1 };
        assert_eq!(cfg.violations().len(), 3);
    }
}
