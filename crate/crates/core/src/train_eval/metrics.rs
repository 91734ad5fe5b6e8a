use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::numeric::{bce_from_logits, Real, Tensor};

/// Mean binary cross-entropy of `labels` under `σ(logits)`.
pub fn bce_loss<T: Real>(logits: &Tensor<T>, labels: &Tensor<T>) -> Result<T, TrainError> {
    if logits.shape() != labels.shape() || logits.rank() > 1 {
        return Err(TrainError::Shape(format!(
            "bce_loss: logits {:?} and labels {:?} must be equal-length vectors",
            logits.shape(),
            labels.shape()
        )));
    }
    Ok(bce_from_logits(logits.data(), labels.data())?)
}

/// Rank-based (Mann–Whitney) AUC; ties count one half.
pub fn compute_auc(scores: &[f64], labels: &[bool]) -> Result<f64, TrainError> {
    if scores.len() != labels.len() {
        return Err(TrainError::Shape(format!(
            "compute_auc: {} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(TrainError::NonFiniteScore);
    }
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(TrainError::SingleClass { positives: positives as usize, negatives: negatives as usize });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the U statistic, kept integral.
    let mut twice_u: u128 = 0;
    let mut negatives_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice_u += 2 * u128::from(pos) * u128::from(negatives_below) + u128::from(pos) * u128::from(neg);
        negatives_below += neg;
        i = j;
    }
    Ok(twice_u as f64 / (2 * u128::from(positives) * u128::from(negatives)) as f64)
}

/// Conditions under which a metric was reported as 0 instead of undefined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateFlags {
    /// No sample predicted positive; precision is 0.
    pub no_predicted_positives: bool,
    /// No positive labels; recall is 0.
    pub no_actual_positives: bool,
    /// Precision and recall are both 0; F1 is 0.
    pub zero_f1_denominator: bool,
    /// Labels are single-class; AUC is 0.
    pub single_class: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub auc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n: usize,
    pub threshold: f64,
    pub flags: DegenerateFlags,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "Acc,AUC,F1,P,R";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.accuracy, self.auc, self.f1, self.precision, self.recall
        )
    }

    /// Metric values in table column order: Acc, AUC, F1, P, R.
    pub fn columns(&self) -> [f64; 5] {
        [self.accuracy, self.auc, self.f1, self.precision, self.recall]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Threshold `scores` (predicted positive iff `score ≥ threshold`) and report.
pub fn metrics_from_scores(scores: &[f64], labels: &[bool], threshold: f64) -> Result<MetricsReport, TrainError> {
    if scores.is_empty() {
        return Err(TrainError::EmptySamples);
    }
    if scores.len() != labels.len() {
        return Err(TrainError::Shape(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let n = scores.len();
    let mut flags = DegenerateFlags::default();
    let precision = ratio(tp, tp + fp).unwrap_or_else(|| {
        flags.no_predicted_positives = true;
        0.0
    });
    let recall = ratio(tp, tp + fn_).unwrap_or_else(|| {
        flags.no_actual_positives = true;
        0.0
    });
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        flags.zero_f1_denominator = true;
        0.0
    };
    let auc = match compute_auc(scores, labels) {
        Ok(a) => a,
        Err(TrainError::SingleClass { .. }) => {
            flags.single_class = true;
            0.0
        }
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        accuracy: (tp + tn) as f64 / n as f64,
        auc,
        f1,
        precision,
        recall,
        tp,
        fp,
        tn,
        fn_,
        n,
        threshold,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_examples() {
        let l = Tensor::new(vec![2], vec![0.0f64, 9f64.ln()]).unwrap();
        let y = Tensor::new(vec![2], vec![0.0, 1.0]).unwrap();
        let loss = bce_loss(&l, &y).unwrap();
        assert!((loss - (2f64.ln() - 0.9f64.ln()) / 2.0).abs() < 1e-12);
        assert!((loss - 0.399254).abs() < 1e-6);
        let bad = Tensor::new(vec![2], vec![0.0, 0.5]).unwrap();
        assert!(bce_loss(&l, &bad).is_err());
    }

    #[test]
    fn auc_examples() {
        let labels = [true, false, true, false];
        assert_eq!(compute_auc(&[0.9, 0.8, 0.3, 0.1], &labels).unwrap(), 0.75);
        assert_eq!(compute_auc(&[0.9, 0.1, 0.8, 0.2], &labels).unwrap(), 1.0);
        assert_eq!(compute_auc(&[0.1, 0.9, 0.2, 0.8], &labels).unwrap(), 0.0);
        assert_eq!(compute_auc(&[0.4; 4], &labels).unwrap(), 0.5);
        assert!(matches!(compute_auc(&[0.1, 0.2], &[true, true]), Err(TrainError::SingleClass { .. })));
    }

    #[test]
    fn confusion_example() {
        let r = metrics_from_scores(&[0.9, 0.8, 0.3, 0.1], &[true, false, true, false], 0.5).unwrap();
        assert_eq!((r.tp, r.fp, r.tn, r.fn_), (1, 1, 1, 1));
        assert_eq!(r.columns(), [0.5, 0.75, 0.5, 0.5, 0.5]);
        assert_eq!(r.flags, DegenerateFlags::default());
    }

    #[test]
    fn degenerate_conventions() {
        let r = metrics_from_scores(&[0.1, 0.2, 0.3], &[true, false, true], 0.5).unwrap();
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.recall, 0.0);
        assert!(r.flags.no_predicted_positives && r.flags.zero_f1_denominator);
        assert!(!r.flags.no_actual_positives);
        assert!(metrics_from_scores(&[], &[], 0.5).is_err());
    }

    #[test]
    fn json_uses_fn_key() {
        let r = metrics_from_scores(&[0.9, 0.1], &[true, false], 0.5).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["fn"], 0);
        assert_eq!(MetricsReport::CSV_HEADER, "Acc,AUC,F1,P,R");
        assert_eq!(r.csv_row(), "1.000000,1.000000,1.000000,1.000000,1.000000");
    }
}
