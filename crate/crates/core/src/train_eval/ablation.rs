use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate, train_on, MetricsReport, PreparedData, TrainConfig, TrainError};
use crate::config::config_hash;
use crate::data::read_dataset;
use crate::model::{is_shared_param, IntentModel, Variant};
use crate::numeric::Real;

pub const ROW_BASELINE: &str = "Ours (w/o relation)";
pub const ROW_RELATION: &str = "Ours";

/// Per-metric `relation − baseline`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub accuracy: f64,
    pub auc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

impl MetricDeltas {
    fn between(relation: &MetricsReport, baseline: &MetricsReport) -> Self {
        MetricDeltas {
            accuracy: relation.accuracy - baseline.accuracy,
            auc: relation.auc - baseline.auc,
            f1: relation.f1 - baseline.f1,
            precision: relation.precision - baseline.precision,
            recall: relation.recall - baseline.recall,
        }
    }

    pub fn columns(&self) -> [f64; 5] {
        [self.accuracy, self.auc, self.f1, self.precision, self.recall]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub config_hash: String,
    pub baseline: MetricsReport,
    pub relation: MetricsReport,
    pub delta: MetricDeltas,
    pub baseline_params: usize,
    pub relation_params: usize,
    pub baseline_has_more_params: bool,
    /// Checksum over the parameters both variants share, at initialization.
    pub shared_init_checksum: String,
    pub shared_init_identical: bool,
    pub train_windows: usize,
    pub test_windows: usize,
}

impl AblationReport {
    pub fn relation_wins_f1(&self) -> bool {
        self.relation.f1 >= self.baseline.f1
    }

    /// Aligned text table with the baseline row, the relation row and the delta row.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed {}  config {}", self.seed, &self.config_hash[..12.min(self.config_hash.len())]);
        let _ = writeln!(out, "{:<22}{:>8}{:>8}{:>8}{:>8}{:>8}{:>10}", "Model", "Acc", "AUC", "F1", "P", "R", "Params");
        for (name, m, p) in [
            (ROW_BASELINE, &self.baseline, self.baseline_params),
            (ROW_RELATION, &self.relation, self.relation_params),
        ] {
            let _ = write!(out, "{name:<22}");
            for v in m.columns() {
                let _ = write!(out, "{v:>8.3}");
            }
            let _ = writeln!(out, "{p:>10}");
        }
        let _ = write!(out, "{:<22}", "Delta");
        for v in self.delta.columns() {
            let _ = write!(out, "{v:>+8.3}");
        }
        let _ = writeln!(out);
        out
    }
}

/// Train both variants on `data` with identical seeds and budget and compare
/// them on the test partition.
pub fn ablation_on<T: Real>(data: &PreparedData, config: &TrainConfig) -> Result<AblationReport, TrainError> {
    config.check()?;
    let relation_cfg = TrainConfig { model: config.model.clone().with_variant(Variant::Relation), ..config.clone() };
    let baseline_cfg = TrainConfig { model: config.model.clone().with_variant(Variant::NoRelation), ..config.clone() };

    let seed = config.train.seed;
    let init_rel = IntentModel::<T>::init(relation_cfg.model.clone(), seed)?;
    let init_base = IntentModel::<T>::init(baseline_cfg.model.clone(), seed)?;
    let shared_rel = init_rel.params.checksum(is_shared_param);
    let shared_base = init_base.params.checksum(is_shared_param);

    let (train_w, _, test_w) = data.windows(&config.sampling)?;
    let (relation_model, _) = train_on::<T>(data, &relation_cfg)?;
    let relation = evaluate(&relation_model, &test_w, config.train.threshold)?;
    let (baseline_model, _) = train_on::<T>(data, &baseline_cfg)?;
    let baseline = evaluate(&baseline_model, &test_w, config.train.threshold)?;

    Ok(AblationReport {
        seed,
        config_hash: config_hash(config),
        delta: MetricDeltas::between(&relation, &baseline),
        baseline,
        relation,
        baseline_params: init_base.num_parameters(),
        relation_params: init_rel.num_parameters(),
        baseline_has_more_params: init_base.num_parameters() > init_rel.num_parameters(),
        shared_init_identical: shared_rel == shared_base,
        shared_init_checksum: shared_rel,
        train_windows: train_w.len(),
        test_windows: test_w.len(),
    })
}

/// [`ablation_on`] over the dataset at `config.dataset_dir`.
pub fn ablation_compare<T: Real>(config: &TrainConfig) -> Result<AblationReport, TrainError> {
    config.check()?;
    let data = PreparedData::split(read_dataset(&config.dataset_dir)?, &config.train)?;
    ablation_on::<T>(&data, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub runs: Vec<AblationReport>,
    /// Seeds where relation F1 ≥ baseline F1.
    pub relation_wins: usize,
}

impl AblationSummary {
    pub fn from_runs(runs: Vec<AblationReport>) -> Self {
        let relation_wins = runs.iter().filter(|r| r.relation_wins_f1()).count();
        AblationSummary { runs, relation_wins }
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        for r in &self.runs {
            out.push_str(&r.table());
            out.push('\n');
        }
        let _ = writeln!(out, "relation F1 ≥ baseline F1 in {}/{} seeds", self.relation_wins, self.runs.len());
        out
    }
}

/// [`ablation_on`] once per seed.
pub fn ablation_over_seeds<T: Real>(
    data: &PreparedData,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationSummary, TrainError> {
    let runs = seeds
        .iter()
        .map(|&seed| {
            let mut cfg = config.clone();
            cfg.train.seed = seed;
            ablation_on::<T>(data, &cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AblationSummary::from_runs(runs))
}
