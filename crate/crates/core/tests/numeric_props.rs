use proptest::prelude::*;
use rand::Rng;
use relnet::model::{Graph, IntentModel, ModelConfig, ModelInput, Variant};
use relnet::numeric::{rng, OptimState, OptimizerConfig, Tape, Tensor};
use relnet::train_eval::{bce_loss, train_step};

/// Direct cross-correlation with zero padding.
fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> (Vec<usize>, Vec<f64>) {
    let (b, ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; b * co * oh * ow];
    for n in 0..b {
        for o in 0..co {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (y * stride + dy) as isize - pad as isize;
                                let ix = (xx * stride + dx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x.data()[((n * ci + c) * h + iy as usize) * w + ix as usize];
                                acc += xv * k.data()[((o * ci + c) * kh + dy) * kw + dx];
                            }
                        }
                    }
                    out[((n * co + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    (vec![b, co, oh, ow], out)
}

fn random(shape: &[usize], r: &mut impl Rng) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), (0..shape.iter().product()).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

proptest! {
    #[test]
    fn conv_shape_and_values(
        b in 1usize..3, ci in 1usize..4, co in 1usize..4,
        h in 1usize..10, w in 1usize..10, kh in 1usize..5, kw in 1usize..5,
        stride in 1usize..4, pad in 0usize..3, seed: u64,
    ) {
        let mut r = rng::stream(seed, "conv");
        let x = random(&[b, ci, h, w], &mut r);
        let k = random(&[co, ci, kh, kw], &mut r);
        let mut tape = Tape::new();
        let (xi, ki) = (tape.input(x.clone()), tape.input(k.clone()));
        let out = tape.conv2d(xi, ki, stride, pad);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            prop_assert!(out.is_err());
        } else {
            let out = out.unwrap();
            let (shape, values) = naive_conv(&x, &k, stride, pad);
            prop_assert_eq!(tape.value(out).shape(), &shape[..]);
            for (a, e) in tape.value(out).data().iter().zip(&values) {
                prop_assert!((a - e).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn bce_at_logit_zero_is_ln2() {
    for y in [0.0, 1.0] {
        let l = bce_loss(&Tensor::from_vec(vec![0.0f64]), &Tensor::from_vec(vec![y])).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-9);
    }
    let logits = Tensor::from_vec(vec![9.0f64.ln(), 0.0]);
    let l = bce_loss(&logits, &Tensor::from_vec(vec![1.0, 1.0])).unwrap();
    assert!((l - (-(0.9f64).ln() + std::f64::consts::LN_2) / 2.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn bce_matches_naive_form(logit in -10.0f64..10.0, positive: bool) {
        let y = if positive { 1.0 } else { 0.0 };
        let p = 1.0 / (1.0 + (-logit).exp());
        let naive = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        let stable = bce_loss(&Tensor::from_vec(vec![logit]), &Tensor::from_vec(vec![y])).unwrap();
        prop_assert!((stable - naive).abs() < 1e-6, "{stable} vs {naive}");
    }
}

#[test]
fn bce_rejects_non_binary_labels() {
    assert!(bce_loss(&Tensor::from_vec(vec![0.0f64]), &Tensor::from_vec(vec![0.5])).is_err());
}

fn single_loss(model: &IntentModel<f64>, input: &ModelInput<f64>, labels: &Tensor<f64>) -> f64 {
    let mut tape = Tape::new();
    let mut g = Graph::new(&mut tape, model);
    let logits = g.logits(input).unwrap();
    let y = tape.input(labels.clone());
    let loss = tape.bce_with_logits(logits, y).unwrap();
    tape.value(loss).data()[0]
}

#[test]
fn one_small_step_decreases_the_loss() {
    for i in 0..100 {
        let mut r = rng::stream(5, &format!("descent.{i}"));
        let variant = if i % 2 == 0 { Variant::Relation } else { Variant::NoRelation };
        let config = ModelConfig::miniature().with_variant(variant);
        let mut model = IntentModel::<f64>::init(config.clone(), r.gen()).unwrap();
        let (tau, c, h, w) = (config.tau, config.frame_channels, config.frame_height, config.frame_width);
        let frames = Tensor::new(vec![tau, c, h, w], (0..tau * c * h * w).map(|_| r.gen_range(0.0..1.0)).collect());
        let boxes = Tensor::new(vec![tau, 4], (0..tau * 4).map(|_| r.gen_range(0.0..1.0)).collect());
        let input = ModelInput::single(frames.unwrap(), boxes.unwrap());
        let labels = Tensor::from_vec(vec![if r.gen_bool(0.5) { 1.0 } else { 0.0 }]);
        let optimizer = OptimizerConfig::sgd(1e-4);
        let mut state = OptimState::new(&model.params);
        let before = train_step(&mut model, &mut state, &input, &labels, &optimizer).unwrap();
        let after = single_loss(&model, &input, &labels);
        assert!(after < before, "instance {i}: {before} → {after}");
    }
}

#[test]
fn replayed_forward_is_bit_identical() {
    let config = ModelConfig::miniature();
    let model = IntentModel::<f32>::init(config.clone(), 3).unwrap();
    let mut r = rng::stream(3, "replay");
    let n = 2 * config.tau;
    let frames = Tensor::new(vec![n, 3, 8, 8], (0..n * 192).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap();
    let boxes = Tensor::new(vec![n, 4], (0..n * 4).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap();
    let input = ModelInput { frames, boxes, batch: 2 };
    let run = || {
        let mut tape = Tape::new();
        let mut g = Graph::new(&mut tape, &model);
        let l = g.logits(&input).unwrap();
        tape.value(l).clone()
    };
    assert!(run().bit_eq(&run()));
}
