use proptest::prelude::*;
use rand::Rng;
use relnet::data::ObservationSample;
use relnet::model::{baseline_forward, predict_intent, IntentModel, ModelConfig, Variant};
use relnet::numeric::{rng, Tensor};
use relnet::train_eval::{compute_auc, evaluate, metrics_from_scores, MetricsReport};

fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice = 0u64;
    let (mut p, mut n) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            n += 1;
            continue;
        }
        p += 1;
        for (j, &lj) in labels.iter().enumerate() {
            if !lj {
                twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    twice as f64 / (2 * p * n) as f64
}

struct Hand {
    tp: usize,
    fp: usize,
    tn: usize,
    fn_: usize,
}

fn hand_count(scores: &[f64], labels: &[bool], threshold: f64) -> Hand {
    let mut h = Hand { tp: 0, fp: 0, tn: 0, fn_: 0 };
    for (s, y) in scores.iter().zip(labels) {
        let predicted = *s >= threshold;
        if predicted && *y {
            h.tp += 1;
        } else if predicted {
            h.fp += 1;
        } else if *y {
            h.fn_ += 1;
        } else {
            h.tn += 1;
        }
    }
    h
}

fn assert_matches_hand(m: &MetricsReport, h: &Hand, scores: &[f64], labels: &[bool]) {
    assert_eq!((m.tp, m.fp, m.tn, m.fn_), (h.tp, h.fp, h.tn, h.fn_));
    assert_eq!(m.tp + m.fp + m.tn + m.fn_, m.n);
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = div(h.tp, h.tp + h.fp);
    let recall = div(h.tp, h.tp + h.fn_);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    assert_eq!(m.accuracy, div(h.tp + h.tn, labels.len()));
    assert_eq!(m.precision, precision);
    assert_eq!(m.recall, recall);
    assert_eq!(m.f1, f1);
    assert_eq!(m.flags.no_predicted_positives, h.tp + h.fp == 0);
    assert_eq!(m.flags.no_actual_positives, h.tp + h.fn_ == 0);
    let both = labels.iter().any(|&l| l) && labels.iter().any(|&l| !l);
    assert_eq!(m.auc, if both { brute_force_auc(scores, labels) } else { 0.0 });
    for v in m.columns() {
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn worked_example() {
    let scores = [0.9, 0.8, 0.3, 0.1];
    let labels = [true, false, true, false];
    let m = metrics_from_scores(&scores, &labels, 0.5).unwrap();
    assert_eq!((m.tp, m.fp, m.tn, m.fn_), (1, 1, 1, 1));
    assert_eq!([m.accuracy, m.precision, m.recall, m.f1], [0.5; 4]);
    assert_eq!(m.auc, 0.75);
    assert_eq!(brute_force_auc(&scores, &labels), 0.75);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn auc_matches_pair_count(
        pairs in prop::collection::vec((0u8..12, any::<bool>()), 2..60),
        fine in any::<bool>(),
    ) {
        let mut labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        labels[0] = true;
        labels[1] = false;
        // Coarse scores force many ties; fine ones mostly avoid them.
        let scores: Vec<f64> = pairs
            .iter()
            .enumerate()
            .map(|(i, p)| if fine { f64::from(p.0) / 12.0 + i as f64 * 1e-3 } else { f64::from(p.0) / 12.0 })
            .collect();
        prop_assert_eq!(compute_auc(&scores, &labels).unwrap(), brute_force_auc(&scores, &labels));
    }

    #[test]
    fn confusion_counts_match_hand_enumeration(
        pairs in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..80),
        threshold in 0.05f64..0.95,
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        let m = metrics_from_scores(&scores, &labels, threshold).unwrap();
        assert_matches_hand(&m, &hand_count(&scores, &labels, threshold), &scores, &labels);
    }
}

fn random_samples(config: &ModelConfig, n: usize, r: &mut impl Rng) -> Vec<ObservationSample> {
    let (tau, c, h, w) = (config.tau, config.frame_channels, config.frame_height, config.frame_width);
    (0..n)
        .map(|i| ObservationSample {
            frames: Tensor::new(vec![tau, c, h, w], (0..tau * c * h * w).map(|_| r.gen_range(0.0..1.0)).collect())
                .unwrap(),
            boxes_norm: Tensor::new(vec![tau, 4], (0..tau * 4).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap(),
            label: r.gen_bool(0.5),
            tte: 30,
            source_id: format!("s{i}"),
            t_last: tau - 1,
        })
        .collect()
}

/// `evaluate` against per-sample forward passes counted by hand.
#[test]
fn evaluate_matches_hand_enumeration_on_100_instances() {
    for i in 0..100 {
        let mut r = rng::stream(11, &format!("evaluate.{i}"));
        let variant = if i % 2 == 0 { Variant::Relation } else { Variant::NoRelation };
        let config = ModelConfig::miniature().with_variant(variant);
        let mut model = IntentModel::<f64>::init(config.clone(), r.gen()).unwrap();
        for v in model.params.get_mut("classifier.1.bias").unwrap().data_mut() {
            *v = r.gen_range(-0.3..0.3);
        }
        let samples = random_samples(&config, r.gen_range(1..40), &mut r);
        let scores: Vec<f64> = samples
            .iter()
            .map(|s| {
                let frames = s.frames.cast::<f64>();
                let boxes = s.boxes_norm.cast::<f64>();
                match variant {
                    Variant::Relation => predict_intent(&frames, &boxes, &model),
                    Variant::NoRelation => baseline_forward(&frames, &boxes, &model),
                }
                .unwrap()
                .probability
            })
            .collect();
        let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let threshold = sorted[sorted.len() / 2];
        let m = evaluate(&model, samples.as_slice(), threshold).unwrap();
        let h = hand_count(&scores, &labels, threshold);
        assert_matches_hand(&m, &h, &scores, &labels);
    }
}
