use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use relnet::model::{relation_forward, relation_forward_traced, IntentModel, ModelConfig, PairSum};
use relnet::numeric::{rng, Real, Tensor};
use relnet::verify::{baseline_permutation_sensitivity, conditioning_gradient_norm, relation_config};

/// `Σ_{m,n} W·[f_m, f_n, q] + b` by direct summation over ordered pairs.
fn reference(f_st: &[f64], q: &[f64], model: &IntentModel<f64>) -> Vec<f64> {
    let cfg = &model.config;
    let (k, c, dh, dr) = (cfg.cells(), cfg.feature_channels, cfg.traj_hidden, cfg.relation_dim);
    let w = model.params.get("relation.weight").unwrap().data();
    let b = model.params.get("relation.bias").unwrap().data();
    let mut out = vec![0.0; dr];
    for m in 0..k {
        for n in 0..k {
            if m == n && !cfg.include_self_pairs {
                continue;
            }
            let triplet: Vec<f64> =
                f_st[m * c..(m + 1) * c].iter().chain(&f_st[n * c..(n + 1) * c]).chain(q).copied().collect();
            for (o, acc) in out.iter_mut().enumerate() {
                let row = &w[o * (2 * c + dh)..(o + 1) * (2 * c + dh)];
                *acc += row.iter().zip(&triplet).map(|(a, x)| a * x).sum::<f64>() + b[o];
            }
        }
    }
    out
}

struct Instance<T: Real> {
    model: IntentModel<T>,
    f_st: Tensor<T>,
    q: Tensor<T>,
    perm: Vec<usize>,
}

fn instance<T: Real>(seed: u64, side: usize, self_pairs: bool) -> Instance<T> {
    let mut r = rng::stream(seed, "relation_props");
    let config = relation_config(side, self_pairs || side == 1);
    let mut model = IntentModel::<f64>::init(config.clone(), r.gen()).unwrap();
    for v in model.params.get_mut("relation.bias").unwrap().data_mut() {
        *v = r.gen_range(-0.5..0.5);
    }
    let c = config.feature_channels;
    let f_st = Tensor::new(vec![side, side, c], (0..side * side * c).map(|_| r.gen_range(-1.0..1.0)).collect());
    let q = Tensor::new(vec![config.traj_hidden], (0..config.traj_hidden).map(|_| r.gen_range(-1.0..1.0)).collect());
    let mut perm: Vec<usize> = (0..config.cells()).collect();
    perm.shuffle(&mut r);
    Instance { model: model.cast(), f_st: f_st.unwrap().cast(), q: q.unwrap().cast(), perm }
}

fn permuted<T: Real>(f_st: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let c = f_st.shape()[2];
    let data = perm.iter().flat_map(|&src| f_st.data()[src * c..(src + 1) * c].to_vec()).collect();
    Tensor::new(f_st.shape().to_vec(), data).unwrap()
}

fn deviation<T: Real>(i: &Instance<T>) -> f64 {
    let a = relation_forward(&i.f_st, &i.q, &i.model).unwrap();
    let b = relation_forward(&permuted(&i.f_st, &i.perm), &i.q, &i.model).unwrap();
    a.max_abs_diff(&b).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn both_strategies_match_direct_summation(seed: u64, side in 1usize..4, self_pairs: bool) {
        let inst = instance::<f64>(seed, side, self_pairs);
        let expect = reference(inst.f_st.data(), inst.q.data(), &inst.model);
        let scale = expect.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for mode in [PairSum::Enumerate, PairSum::Factorized] {
            let (got, _) = relation_forward_traced(&inst.f_st, &inst.q, &inst.model, mode).unwrap();
            for (g, e) in got.data().iter().zip(&expect) {
                prop_assert!((g - e).abs() <= 1e-12 * scale, "{mode:?}: {g} vs {e}");
            }
        }
    }

    #[test]
    fn permutation_invariance_f32(seed: u64, side in 1usize..4, self_pairs: bool) {
        prop_assert!(deviation(&instance::<f32>(seed, side, self_pairs)) <= 1e-4);
    }

    #[test]
    fn permutation_invariance_f64(seed: u64, side in 1usize..4, self_pairs: bool) {
        prop_assert!(deviation(&instance::<f64>(seed, side, self_pairs)) <= 1e-10);
    }

    #[test]
    fn pair_count_law(seed: u64, side in 1usize..4, self_pairs: bool) {
        let inst = instance::<f64>(seed, side, self_pairs);
        let k = inst.model.config.cells();
        let (_, evaluations) = relation_forward_traced(&inst.f_st, &inst.q, &inst.model, PairSum::Enumerate).unwrap();
        let expect = if inst.model.config.include_self_pairs { k * k } else { k * k - k };
        prop_assert_eq!(evaluations, expect);
    }
}

#[test]
fn output_depends_on_trajectory_state() {
    for seed in 0..10 {
        assert!(conditioning_gradient_norm(seed).unwrap() > 1e-3);
    }
}

#[test]
fn baseline_is_position_aware() {
    assert!(baseline_permutation_sensitivity(100, 1e-6, 0).unwrap() >= 95);
}

#[test]
fn default_geometry_has_36_cells() {
    let c = ModelConfig::default();
    assert_eq!(c.cells(), 36);
    assert_eq!(c.pair_count(), 36 * 36);
}
