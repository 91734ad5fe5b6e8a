//! Intent-prediction network: per-frame conv backbone, temporal mixing per
//! cell, trajectory GRU, trajectory-conditioned pairwise relation module and
//! an MLP classifier, plus the flattened-map baseline used for ablation.

mod config;
mod graph;
mod ops;

pub use config::{ConvBlock, ModelConfig, PairSum, Variant, KERNEL, PADDING};
pub use graph::{Graph, ModelInput};
pub use ops::{
    baseline_forward, encode_trajectory, gru_cell_step, predict_intent, relation_forward,
    relation_forward_traced, spatial_encode, temporal_aggregate, visual_features, Prediction,
    VisualFeatures,
};

use rand::Rng;
use thiserror::Error;

use crate::numeric::{rng, NumericError, ParamStore, Real, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    Geometry { what: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("operation requires variant {expected}, model is {got}")]
    VariantMismatch { expected: Variant, got: Variant },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("unexpected parameter `{0}`")]
    UnexpectedParam(String),
    #[error("parameter `{name}` has shape {got:?}, config expects {expected:?}")]
    ParamShape { name: String, expected: Vec<usize>, got: Vec<usize> },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// One entry of the parameter manifest. `fan_in` is `None` for biases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: Option<usize>,
}

fn weight(name: String, shape: Vec<usize>) -> ParamSpec {
    let fan_in = shape[1..].iter().product();
    ParamSpec { name, shape, fan_in: Some(fan_in) }
}

fn bias(name: String, len: usize) -> ParamSpec {
    ParamSpec { name, shape: vec![len], fan_in: None }
}

/// Parameter names and shapes implied by `config`, sorted by name.
pub fn param_manifest(config: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut c_in = config.frame_channels;
    for (i, b) in config.backbone_blocks.iter().enumerate() {
        specs.push(weight(format!("backbone.{i}.weight"), vec![b.out_channels, c_in, KERNEL, KERNEL]));
        specs.push(bias(format!("backbone.{i}.bias"), b.out_channels));
        c_in = b.out_channels;
    }
    let c = config.feature_channels;
    specs.push(weight("temporal.weight".into(), vec![c, config.tau * c]));
    specs.push(bias("temporal.bias".into(), c));

    let dh = config.traj_hidden;
    for gate in ["z", "r", "h"] {
        specs.push(weight(format!("gru.w_{gate}"), vec![dh, 4]));
        specs.push(weight(format!("gru.u_{gate}"), vec![dh, dh]));
        specs.push(bias(format!("gru.b_{gate}"), dh));
    }

    let d_r = config.relation_dim;
    match config.variant {
        Variant::Relation => {
            specs.push(weight("relation.weight".into(), vec![d_r, 2 * c + dh]));
            specs.push(bias("relation.bias".into(), d_r));
        }
        Variant::NoRelation => {
            specs.push(weight("fusion.weight".into(), vec![d_r, config.cells() * c + dh]));
            specs.push(bias("fusion.bias".into(), d_r));
        }
    }

    let mut width = d_r;
    for (i, &h) in config.classifier_hidden.iter().chain(std::iter::once(&1)).enumerate() {
        specs.push(weight(format!("classifier.{i}.weight"), vec![h, width]));
        specs.push(bias(format!("classifier.{i}.bias"), h));
        width = h;
    }
    specs.sort_by(|a, b| a.name.cmp(&b.name));
    specs
}

/// True for parameters present in both variants.
pub fn is_shared_param(name: &str) -> bool {
    !(name.starts_with("relation.") || name.starts_with("fusion."))
}

/// A configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentModel<T: Real = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> IntentModel<T> {
    /// Weights uniform in ±√(1/fan_in), biases zero. Each tensor draws from
    /// its own stream keyed by `(seed, "init.<name>")`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        Self::check_config(&config)?;
        let mut params = ParamStore::new();
        for spec in param_manifest(&config) {
            let n: usize = spec.shape.iter().product();
            let data = match spec.fan_in {
                None => vec![T::zero(); n],
                Some(fan_in) => {
                    let bound = (1.0 / fan_in as f64).sqrt();
                    let mut s = rng::stream(seed, &format!("init.{}", spec.name));
                    (0..n).map(|_| T::lit(s.gen_range(-bound..=bound))).collect()
                }
            };
            params.insert(spec.name, Tensor::new(spec.shape, data)?)?;
        }
        Ok(IntentModel { config, params })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        Self::check_config(&config)?;
        let mut params = ParamStore::new();
        for spec in param_manifest(&config) {
            params.insert(spec.name, Tensor::zeros(&spec.shape))?;
        }
        Ok(IntentModel { config, params })
    }

    /// Accept `params` only if names and shapes match the manifest exactly.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self, ModelError> {
        Self::check_config(&config)?;
        let manifest = param_manifest(&config);
        for spec in &manifest {
            match params.get(&spec.name) {
                None => return Err(ModelError::MissingParam(spec.name.clone())),
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(ModelError::ParamShape {
                        name: spec.name.clone(),
                        expected: spec.shape.clone(),
                        got: t.shape().to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = params.names().find(|n| !manifest.iter().any(|s| s.name == *n)) {
            return Err(ModelError::UnexpectedParam(extra.to_owned()));
        }
        Ok(IntentModel { config, params })
    }

    fn check_config(config: &ModelConfig) -> Result<(), ModelError> {
        let v = config.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Config(v))
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    pub fn cast<U: Real>(&self) -> IntentModel<U> {
        IntentModel { config: self.config.clone(), params: self.params.cast() }
    }
}
