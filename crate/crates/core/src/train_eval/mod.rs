//! Loss, metrics, the training loop and the relation ablation.

mod ablation;
mod metrics;
mod train;

pub use ablation::{
    ablation_compare, ablation_on, ablation_over_seeds, AblationReport, AblationSummary, MetricDeltas, ROW_BASELINE,
    ROW_RELATION,
};
pub use metrics::{bce_loss, compute_auc, metrics_from_scores, DegenerateFlags, MetricsReport};
pub use train::{
    evaluate, fit, predict_scores, train, train_on, train_step, PreparedData, SplitRatios, TrainConfig,
    TrainHistory, TrainSettings,
};

use thiserror::Error;

use crate::data::{DataError, DatasetError};
use crate::model::ModelError;
use crate::numeric::NumericError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("geometry mismatch: {0}")]
    Geometry(String),
    #[error("{0}")]
    Shape(String),
    #[error("no samples")]
    EmptySamples,
    #[error("AUC undefined for single-class labels ({positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("scores contain NaN")]
    NonFiniteScore,
    #[error("duplicate sequence id `{0}`")]
    DuplicateId(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}
