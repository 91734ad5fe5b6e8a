use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{metrics_from_scores, MetricsReport, TrainError};
use crate::data::{read_dataset, split_dataset, PedestrianSequence, SampleSource, SamplingConfig, WindowSet};
use crate::model::{Graph, IntentModel, ModelConfig, ModelInput};
use crate::numeric::{kernels, optimizer_step, rng, OptimState, OptimizerConfig, Real, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.7, val: 0.1, test: 0.2 }
    }
}

/// Loop hyperparameters; the `train` section of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Drives initialization and shuffling.
    pub seed: u64,
    /// Decision threshold on `ŷ` for Acc/P/R/F1.
    pub threshold: f64,
    pub split: SplitRatios,
    /// Drives the sequence-level split, independent of `seed`.
    pub split_seed: u64,
    /// Return the epoch with the best validation F1 instead of the last one.
    pub select_best_val_f1: bool,
    /// Batch size used for inference.
    pub eval_batch_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 20,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            threshold: 0.5,
            split: SplitRatios::default(),
            split_seed: 0,
            select_best_val_f1: false,
            eval_batch_size: 64,
        }
    }
}

impl TrainSettings {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.epochs == 0 {
            v.push("train.epochs: must be ≥ 1".into());
        }
        if self.batch_size == 0 {
            v.push("train.batch_size: must be ≥ 1".into());
        }
        if self.eval_batch_size == 0 {
            v.push("train.eval_batch_size: must be ≥ 1".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            v.push(format!("train.threshold: must be in (0, 1), got {}", self.threshold));
        }
        let o = &self.optimizer;
        if !(o.lr >= 0.0 && o.lr.is_finite()) {
            v.push(format!("train.optimizer.lr: must be finite and ≥ 0, got {}", o.lr));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            v.push("train.optimizer.beta1/beta2: must be in [0, 1)".into());
        }
        if !(o.eps > 0.0) {
            v.push("train.optimizer.eps: must be > 0".into());
        }
        let s = self.split;
        if !(s.train > 0.0 && s.val > 0.0 && s.test > 0.0) || (s.train + s.val + s.test - 1.0).abs() > 1e-9 {
            v.push(format!(
                "train.split: ratios must be positive and sum to 1, got ({}, {}, {})",
                s.train, s.val, s.test
            ));
        }
        v
    }
}

/// Everything a training run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub train: TrainSettings,
    pub model: ModelConfig,
    pub sampling: SamplingConfig,
    pub dataset_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            train: TrainSettings::default(),
            model: ModelConfig::default(),
            sampling: SamplingConfig::default(),
            dataset_dir: PathBuf::from("data"),
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.train.violations();
        v.extend(self.model.violations());
        v.extend(self.sampling.violations());
        if self.sampling.tau != self.model.tau {
            v.push(format!(
                "sampling.tau: {} must equal model.tau {}",
                self.sampling.tau, self.model.tau
            ));
        }
        v
    }

    pub fn check(&self) -> Result<(), TrainError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(TrainError::Config(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss per epoch (over samples, before each update).
    pub epoch_loss: Vec<f64>,
    /// Validation metrics per epoch; empty when no validation set is given.
    pub val_metrics: Vec<MetricsReport>,
    /// Zero-based epoch whose parameters were returned.
    pub selected_epoch: usize,
}

impl TrainHistory {
    pub fn epochs_run(&self) -> usize {
        self.epoch_loss.len()
    }
}

/// Sequences of each partition.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub train: Vec<PedestrianSequence>,
    pub val: Vec<PedestrianSequence>,
    pub test: Vec<PedestrianSequence>,
}

impl PreparedData {
    /// Split `sequences` by id.
    pub fn split(sequences: Vec<PedestrianSequence>, settings: &TrainSettings) -> Result<Self, TrainError> {
        let ids: Vec<String> = sequences.iter().map(|s| s.id.clone()).collect();
        let r = settings.split;
        let split = split_dataset(&ids, (r.train, r.val, r.test), settings.split_seed)?;
        let mut slots: Vec<Option<PedestrianSequence>> = sequences.into_iter().map(Some).collect();
        let mut part = |names: &[String]| -> Result<Vec<PedestrianSequence>, TrainError> {
            names
                .iter()
                .map(|n| {
                    let i = ids.iter().position(|id| id == n).expect("split ids come from sequences");
                    slots[i].take().ok_or_else(|| TrainError::DuplicateId(n.clone()))
                })
                .collect()
        };
        Ok(PreparedData { train: part(&split.train)?, val: part(&split.val)?, test: part(&split.test)? })
    }

    pub fn windows<'a>(
        &'a self,
        sampling: &SamplingConfig,
    ) -> Result<(WindowSet<'a>, WindowSet<'a>, WindowSet<'a>), TrainError> {
        Ok((
            WindowSet::new(&self.train, sampling)?,
            WindowSet::new(&self.val, sampling)?,
            WindowSet::new(&self.test, sampling)?,
        ))
    }
}

fn check_geometry<S: SampleSource + ?Sized>(config: &ModelConfig, samples: &S, what: &str) -> Result<(), TrainError> {
    let want = (config.tau, config.frame_channels, config.frame_height, config.frame_width);
    match samples.window_geometry() {
        None => Err(TrainError::EmptySamples),
        Some(got) if got != want => Err(TrainError::Geometry(format!(
            "{what} windows have (tau, C, H, W) = {got:?}, model expects {want:?}"
        ))),
        Some(_) => Ok(()),
    }
}

/// One minibatch update; returns the batch loss before the update.
pub fn train_step<T: Real>(
    model: &mut IntentModel<T>,
    state: &mut OptimState<T>,
    input: &ModelInput<T>,
    labels: &Tensor<T>,
    optimizer: &OptimizerConfig,
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let mut g = Graph::new(&mut tape, model);
    let logits = g.logits(input)?;
    let y = tape.input(labels.clone());
    let loss = tape.bce_with_logits(logits, y)?;
    let value = tape.value(loss).data()[0].as_f64();
    let grads = tape.backward(loss)?;
    optimizer_step(&mut model.params, grads.params(), state, optimizer)?;
    Ok(value)
}

/// `ŷ` for every sample, in order.
pub fn predict_scores<T: Real, S: SampleSource + ?Sized>(
    model: &IntentModel<T>,
    samples: &S,
    batch_size: usize,
) -> Result<Vec<f64>, TrainError> {
    let indices: Vec<usize> = (0..samples.len()).collect();
    let mut scores = Vec::with_capacity(samples.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let (input, _) = samples.batch::<T>(chunk);
        let mut tape = Tape::new();
        let mut g = Graph::new(&mut tape, model);
        let logits = g.logits(&input)?;
        scores.extend(tape.value(logits).data().iter().map(|&l| kernels::sigmoid(l).as_f64()));
    }
    Ok(scores)
}

/// Metrics of `model` on `samples` at `threshold`.
pub fn evaluate<T: Real, S: SampleSource + ?Sized>(
    model: &IntentModel<T>,
    samples: &S,
    threshold: f64,
) -> Result<MetricsReport, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySamples);
    }
    check_geometry(&model.config, samples, "evaluation")?;
    let scores = predict_scores(model, samples, 64)?;
    let labels: Vec<bool> = (0..samples.len()).map(|i| samples.label(i)).collect();
    metrics_from_scores(&scores, &labels, threshold)
}

/// Train a freshly initialized model on in-memory samples.
pub fn fit<T: Real, S: SampleSource + ?Sized>(
    settings: &TrainSettings,
    model_config: &ModelConfig,
    train: &S,
    val: Option<&S>,
) -> Result<(IntentModel<T>, TrainHistory), TrainError> {
    let mut v = settings.violations();
    v.extend(model_config.violations());
    if !v.is_empty() {
        return Err(TrainError::Config(v));
    }
    check_geometry(model_config, train, "training")?;
    if let Some(val) = val {
        check_geometry(model_config, val, "validation")?;
    }

    let mut model = IntentModel::<T>::init(model_config.clone(), settings.seed)?;
    let mut state = OptimState::new(&model.params);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, IntentModel<T>)> = None;
    let val_labels: Option<Vec<bool>> = val.map(|v| (0..v.len()).map(|i| v.label(i)).collect());
    let n = train.len();

    for epoch in 0..settings.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(settings.seed, &format!("shuffle.{epoch}")));
        let mut total = 0.0;
        for chunk in order.chunks(settings.batch_size) {
            let (input, labels) = train.batch::<T>(chunk);
            total += train_step(&mut model, &mut state, &input, &labels, &settings.optimizer)? * chunk.len() as f64;
        }
        history.epoch_loss.push(total / n as f64);

        if let (Some(val), Some(labels)) = (val, &val_labels) {
            let scores = predict_scores(&model, val, settings.eval_batch_size)?;
            let report = metrics_from_scores(&scores, labels, settings.threshold)?;
            if settings.select_best_val_f1 && best.as_ref().map_or(true, |(f1, _)| report.f1 > *f1) {
                best = Some((report.f1, model.clone()));
                history.selected_epoch = epoch;
            }
            history.val_metrics.push(report);
        }
    }
    match best {
        Some((_, m)) => Ok((m, history)),
        None => {
            history.selected_epoch = settings.epochs - 1;
            Ok((model, history))
        }
    }
}

/// Train on the train partition of `data`, validating on its val partition.
pub fn train_on<T: Real>(data: &PreparedData, config: &TrainConfig) -> Result<(IntentModel<T>, TrainHistory), TrainError> {
    config.check()?;
    let (train, val, _) = data.windows(&config.sampling)?;
    let val = (!val.is_empty()).then_some(&val);
    fit(&config.train, &config.model, &train, val)
}

/// Read the dataset at `config.dataset_dir`, split it and train.
pub fn train<T: Real>(config: &TrainConfig) -> Result<(IntentModel<T>, TrainHistory), TrainError> {
    config.check()?;
    let sequences = read_dataset(&config.dataset_dir)?;
    let data = PreparedData::split(sequences, &config.train)?;
    train_on(&data, config)
}
