//! Verification suites: finite-difference gradient checks for every tape
//! primitive and the composed network, plus algebraic checks of the relation
//! module.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::model::{
    param_manifest, relation_forward, relation_forward_traced, ConvBlock, Graph, IntentModel, ModelConfig, ModelError,
    ModelInput, PairSum, Variant,
};
use crate::numeric::{
    compare_gradients, kernels, rng, GradComparison, NodeId, NumericError,
    ParamStore, Real, Tape, Tensor,
};

pub const GRADCHECK_EPS: f64 = 1e-3;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Fresh random instances tried before a case with too many kinked elements
/// is reported as failed.
pub const MAX_ATTEMPTS: usize = 8;
/// Largest share of elements that may be excluded for straddling a kink.
pub const MAX_KINKED_FRACTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub comparison: GradComparison,
    /// Instances drawn; more than one means earlier ones had too many kinks.
    pub attempts: usize,
    /// Elements excluded because their stencil crossed a kink.
    pub kinked: usize,
}

impl CaseResult {
    pub fn kink_fraction(&self) -> f64 {
        self.kinked as f64 / (self.kinked + self.comparison.elements).max(1) as f64
    }

    pub fn passed(&self) -> bool {
        self.comparison.passed() && self.comparison.elements > 0 && self.kink_fraction() <= MAX_KINKED_FRACTION
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub cases: Vec<CaseResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(CaseResult::passed)
    }

    pub fn elements(&self) -> usize {
        self.cases.iter().map(|c| c.comparison.elements).sum()
    }

    pub fn max_relative_error(&self) -> f64 {
        self.cases.iter().map(|c| c.comparison.max_relative_error).fold(0.0, f64::max)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<30}{:>9}{:>8}{:>13}{:>7}  worst", "case", "checked", "kinked", "max rel err", "status");
        for c in &self.cases {
            let status = if c.passed() { "ok" } else { "FAIL" };
            let _ = writeln!(
                out,
                "{:<30}{:>9}{:>8}{:>13.3e}{:>7}  {}[{}]",
                c.name,
                c.comparison.elements,
                c.kinked,
                c.comparison.max_relative_error,
                status,
                c.comparison.worst_param,
                c.comparison.worst_index
            );
        }
        out
    }
}

type Build = dyn Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId, NumericError>;

fn uniform(r: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(lo..hi)).collect()).expect("positive shape")
}

/// Evaluate `build` on `params` (as tape parameters, in name order), reduce
/// to a scalar with fixed random weights, and return the tape and loss node.
fn scalar_tape(
    params: &ParamStore<f64>,
    build: &Build,
    weights_seed: u64,
) -> Result<(Tape<f64>, NodeId), NumericError> {
    let mut tape = Tape::new().with_finite_checks(true);
    let ids: Vec<NodeId> = params.iter().map(|(n, t)| tape.param(n, t.clone())).collect();
    let out = build(&mut tape, &ids)?;
    if tape.value(out).rank() == 0 {
        return Ok((tape, out));
    }
    let shape = tape.value(out).shape().to_vec();
    let w = uniform(&mut rng::stream(weights_seed, "gradcheck.weights"), &shape, -1.0, 1.0);
    let w = tape.input(w);
    let prod = tape.mul(out, w)?;
    let loss = tape.sum_all(prod)?;
    Ok((tape, loss))
}

/// Five-point central differences with step ε per parameter element.
/// Elements whose stencil changes any ReLU's active set are excluded from the
/// comparison.
fn check_instance(params: &ParamStore<f64>, build: &Build, weights_seed: u64) -> Result<(GradComparison, usize), NumericError> {
    let (tape, loss) = scalar_tape(params, build, weights_seed)?;
    let pattern = tape.relu_pattern_hash();
    let analytic = tape.backward(loss)?.into_params();
    let mut work = params.clone();
    let mut numeric = BTreeMap::new();
    let mut masked = BTreeMap::new();
    let mut skipped = 0;
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for name in names {
        let a = analytic.get(&name).ok_or_else(|| NumericError::MissingGradient(name.clone()))?;
        let mut fd = Vec::with_capacity(a.len());
        let mut an = Vec::with_capacity(a.len());
        for i in 0..a.len() {
            let orig = work.require(&name)?.data()[i];
            let mut eval = |v: f64| -> Result<(f64, bool), NumericError> {
                work.get_mut(&name).expect("present").data_mut()[i] = v;
                let (t, l) = scalar_tape(&work, build, weights_seed)?;
                Ok((t.value(l).data()[0], t.relu_pattern_hash() == pattern))
            };
            let mut smooth = true;
            let mut at = |k: f64| -> Result<f64, NumericError> {
                let (v, same) = eval(orig + k * GRADCHECK_EPS)?;
                smooth &= same;
                Ok(v)
            };
            let (p1, m1, p2, m2) = (at(1.0)?, at(-1.0)?, at(2.0)?, at(-2.0)?);
            work.get_mut(&name).expect("present").data_mut()[i] = orig;
            if smooth {
                fd.push((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * GRADCHECK_EPS));
                an.push(a.data()[i]);
            } else {
                skipped += 1;
            }
        }
        numeric.insert(name.clone(), Tensor::from_vec(fd));
        masked.insert(name, Tensor::from_vec(an));
    }
    Ok((compare_gradients(&masked, &numeric, GRADCHECK_TOLERANCE)?, skipped))
}

/// Draw instances from `make` until at most [`MAX_KINKED_FRACTION`] of the
/// elements straddle a kink, then compare the rest.
fn run_case(
    name: &str,
    seed: u64,
    make: impl Fn(&mut rng::Stream) -> ParamStore<f64>,
    build: &Build,
) -> Result<CaseResult, NumericError> {
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let instance_seed = seed.wrapping_add(attempt as u64);
        let params = make(&mut rng::stream(instance_seed, &format!("gradcheck.{name}")));
        let (comparison, skipped) = check_instance(&params, build, instance_seed)?;
        let result = CaseResult { name: name.to_owned(), comparison, attempts: attempt + 1, kinked: skipped };
        let done = result.kink_fraction() <= MAX_KINKED_FRACTION;
        last = Some(result);
        if done {
            break;
        }
    }
    Ok(last.expect("at least one attempt"))
}

fn store(entries: Vec<(&str, Tensor<f64>)>) -> ParamStore<f64> {
    entries.into_iter().map(|(n, t)| (n.to_owned(), t)).collect()
}

/// Gradient checks of every tape primitive on small random inputs.
pub fn primitive_cases(seed: u64) -> Result<Vec<CaseResult>, NumericError> {
    type Maker = Box<dyn Fn(&mut rng::Stream) -> ParamStore<f64>>;
    let shapes = |list: Vec<(&'static str, Vec<usize>)>| -> Maker {
        Box::new(move |r| store(list.iter().map(|(n, s)| (*n, uniform(r, s, -1.0, 1.0))).collect()))
    };
    let cases: Vec<(&str, Maker, Box<Build>)> = vec![
        (
            "linear",
            shapes(vec![("a_x", vec![3, 4]), ("b_w", vec![2, 4]), ("c_b", vec![2])]),
            Box::new(|t, p| t.linear(p[0], p[1], p[2])),
        ),
        (
            "matmul_nt",
            shapes(vec![("a_x", vec![3, 4]), ("b_w", vec![5, 4])]),
            Box::new(|t, p| t.matmul_nt(p[0], p[1])),
        ),
        (
            "conv2d_stride1",
            shapes(vec![("a_x", vec![2, 2, 5, 5]), ("b_k", vec![3, 2, 3, 3])]),
            Box::new(|t, p| t.conv2d(p[0], p[1], 1, 1)),
        ),
        (
            "conv2d_stride2",
            shapes(vec![("a_x", vec![2, 3, 6, 5]), ("b_k", vec![2, 3, 3, 3])]),
            Box::new(|t, p| t.conv2d(p[0], p[1], 2, 1)),
        ),
        (
            "add_channel_bias",
            shapes(vec![("a_x", vec![2, 3, 2, 2]), ("b_b", vec![3])]),
            Box::new(|t, p| t.add_channel_bias(p[0], p[1])),
        ),
        ("add", shapes(vec![("a", vec![2, 3]), ("b", vec![2, 3])]), Box::new(|t, p| t.add(p[0], p[1]))),
        ("sub", shapes(vec![("a", vec![2, 3]), ("b", vec![2, 3])]), Box::new(|t, p| t.sub(p[0], p[1]))),
        ("mul", shapes(vec![("a", vec![2, 3]), ("b", vec![2, 3])]), Box::new(|t, p| t.mul(p[0], p[1]))),
        ("scale", shapes(vec![("a", vec![4])]), Box::new(|t, p| t.scale(p[0], -2.5))),
        ("relu", shapes(vec![("a", vec![3, 4])]), Box::new(|t, p| t.relu(p[0]))),
        ("sigmoid", shapes(vec![("a", vec![3, 4])]), Box::new(|t, p| t.sigmoid(p[0]))),
        ("tanh", shapes(vec![("a", vec![3, 4])]), Box::new(|t, p| t.tanh(p[0]))),
        ("reshape", shapes(vec![("a", vec![2, 6])]), Box::new(|t, p| t.reshape(p[0], &[3, 4]))),
        ("permute", shapes(vec![("a", vec![2, 3, 4])]), Box::new(|t, p| t.permute(p[0], &[2, 0, 1]))),
        (
            "concat_cols",
            shapes(vec![("a", vec![3, 2]), ("b", vec![3, 4])]),
            Box::new(|t, p| t.concat_cols(&[p[0], p[1], p[0]])),
        ),
        (
            "gather_rows",
            shapes(vec![("a", vec![4, 3])]),
            Box::new(|t, p| t.gather_rows(p[0], Arc::from(vec![2, 0, 2, 3]))),
        ),
        ("sum_axis", shapes(vec![("a", vec![2, 3, 4])]), Box::new(|t, p| t.sum_axis(p[0], 1))),
        ("sum_all", shapes(vec![("a", vec![2, 3])]), Box::new(|t, p| t.sum_all(p[0]))),
        (
            "bce_with_logits",
            Box::new(|r| store(vec![("a", uniform(r, &[6], -4.0, 4.0))])),
            Box::new(|t, p| {
                let y = t.input(Tensor::new(vec![6], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0])?);
                t.bce_with_logits(p[0], y)
            }),
        ),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, make, build))| run_case(name, seed.wrapping_add(1000 * i as u64), make, &*build))
        .collect()
}

/// Random continuous inputs for `config` with batch 2 and labels `[1, 0]`.
fn model_batch(config: &ModelConfig, r: &mut impl Rng) -> (ModelInput<f64>, Tensor<f64>) {
    let rows = 2 * config.tau;
    let frames = uniform(r, &[rows, config.frame_channels, config.frame_height, config.frame_width], 0.0, 1.0);
    let boxes = uniform(r, &[rows, 4], 0.0, 1.0);
    let labels = Tensor::new(vec![2], vec![1.0, 0.0]).expect("shape");
    (ModelInput { frames, boxes, batch: 2 }, labels)
}

/// Gradient check of the full loss of `config` w.r.t. every parameter.
pub fn model_case(name: &str, config: &ModelConfig, seed: u64) -> Result<CaseResult, VerifyError> {
    let (input, labels) = model_batch(config, &mut rng::stream(seed, "gradcheck.batch"));
    let cfg = config.clone();
    let names: Vec<String> = param_manifest(config).into_iter().map(|s| s.name).collect();
    let build = move |t: &mut Tape<f64>, ids: &[NodeId]| -> Result<NodeId, NumericError> {
        let params = names.iter().zip(ids).map(|(n, &id)| (n.clone(), t.value(id).clone())).collect();
        let model = IntentModel { config: cfg.clone(), params };
        // The graph places its own parameter nodes under the same names;
        // gradients are collected per name.
        let mut g = Graph::new(t, &model);
        let logits = g.logits(&input).map_err(|e| match e {
            ModelError::Numeric(n) => n,
            other => NumericError::InvalidShape(other.to_string()),
        })?;
        let y = t.input(labels.clone());
        t.bce_with_logits(logits, y)
    };
    let config = config.clone();
    let make = move |r: &mut rng::Stream| {
        let mut m = IntentModel::<f64>::init(config.clone(), r.gen()).expect("validated config");
        for (name, t) in m.params.iter_mut() {
            if name.ends_with("bias") || name.starts_with("gru.b_") {
                for v in t.data_mut() {
                    *v = r.gen_range(-0.1..0.1);
                }
            }
        }
        m.params
    };
    Ok(run_case(name, seed, make, &build)?)
}

/// Configurations covered by the composed-model checks.
pub fn model_cases() -> Vec<(&'static str, ModelConfig)> {
    let base = ModelConfig::miniature();
    vec![
        ("model_relation", base.clone()),
        ("model_relation_enumerated", ModelConfig { pair_sum: PairSum::Enumerate, ..base.clone() }),
        (
            "model_relation_no_self_pairs",
            ModelConfig { include_self_pairs: false, pair_sum: PairSum::Enumerate, ..base.clone() },
        ),
        ("model_no_relation", base.with_variant(Variant::NoRelation)),
    ]
}

/// Every primitive plus the composed model in both variants.
pub fn gradcheck_suite(seed: u64) -> Result<GradcheckReport, VerifyError> {
    let mut cases = primitive_cases(seed)?;
    for (i, (name, cfg)) in model_cases().into_iter().enumerate() {
        cases.push(model_case(name, &cfg, seed.wrapping_add(100_000 + 1000 * i as u64))?);
    }
    Ok(GradcheckReport { cases })
}

/// Miniature-style config whose feature map is `side × side`.
pub fn relation_config(side: usize, include_self_pairs: bool) -> ModelConfig {
    ModelConfig {
        frame_height: 4 * side,
        frame_width: 4 * side,
        backbone_blocks: vec![ConvBlock { out_channels: 4, stride: 2 }, ConvBlock { out_channels: 8, stride: 2 }],
        include_self_pairs,
        ..ModelConfig::miniature()
    }
}

/// Random relation-variant model with non-zero `g_θ` bias.
fn random_relation_model<T: Real>(config: ModelConfig, r: &mut impl Rng) -> Result<IntentModel<T>, ModelError> {
    let mut m = IntentModel::<T>::init(config, r.gen())?;
    for v in m.params.get_mut("relation.bias").expect("relation variant").data_mut() {
        *v = T::lit(r.gen_range(-0.5..0.5));
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    pub instances: usize,
    /// Largest per-element deviation under a cell permutation.
    pub max_permutation_deviation: f64,
    /// Largest per-element gap between enumerated and factorized pair sums,
    /// relative to the output magnitude.
    pub max_pair_sum_gap: f64,
    /// Every instance applied `g_θ` to exactly K² (or K² − K) triplets.
    pub pair_count_law: bool,
}

fn permute_cells<T: Real>(f_st: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let (h, w, c) = (f_st.shape()[0], f_st.shape()[1], f_st.shape()[2]);
    let mut out = Vec::with_capacity(f_st.len());
    for &src in perm {
        out.extend_from_slice(&f_st.data()[src * c..(src + 1) * c]);
    }
    Tensor::new(vec![h, w, c], out).expect("same shape")
}

/// Permutation invariance and pair-count checks of the relation module on
/// `instances` random `(f_st, q, parameters)` triples.
pub fn relation_invariance<T: Real>(instances: usize, seed: u64) -> Result<InvarianceReport, VerifyError> {
    let mut report =
        InvarianceReport { instances, max_permutation_deviation: 0.0, max_pair_sum_gap: 0.0, pair_count_law: true };
    for i in 0..instances {
        let mut r = rng::stream(seed, &format!("invariance.{i}"));
        let side = r.gen_range(1..=3);
        let self_pairs = side == 1 || r.gen_bool(0.5);
        let config = relation_config(side, self_pairs);
        let model = random_relation_model::<T>(config.clone(), &mut r)?;
        let k = config.cells();
        let f_st = uniform(&mut r, &[side, side, config.feature_channels], -1.0, 1.0).cast::<T>();
        let q = uniform(&mut r, &[config.traj_hidden], -1.0, 1.0).cast::<T>();
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut r);

        let (base, evaluations) = relation_forward_traced(&f_st, &q, &model, PairSum::Enumerate)?;
        report.pair_count_law &= evaluations == config.pair_count();
        let permuted = relation_forward(&permute_cells(&f_st, &perm), &q, &model)?;
        report.max_permutation_deviation = report.max_permutation_deviation.max(base.max_abs_diff(&permuted).expect("same shape"));

        let (factorized, _) = relation_forward_traced(&f_st, &q, &model, PairSum::Factorized)?;
        let scale = base.data().iter().fold(1.0f64, |m, v| m.max(v.as_f64().abs()));
        report.max_pair_sum_gap = report.max_pair_sum_gap.max(base.max_abs_diff(&factorized).expect("same shape") / scale);
    }
    Ok(report)
}

/// Baseline probability from precomputed features `f_st [h, w, c]` and `q`.
pub fn baseline_from_features<T: Real>(
    f_st: &Tensor<T>,
    q: &Tensor<T>,
    model: &IntentModel<T>,
) -> Result<f64, ModelError> {
    let cfg = &model.config;
    let mut tape = Tape::new();
    let mut g = Graph::new(&mut tape, model);
    let cells = g.tape.input(f_st.clone().reshape(&[cfg.cells(), cfg.feature_channels])?);
    let q = g.tape.input(q.clone().reshape(&[1, cfg.traj_hidden])?);
    let fused = g.fusion(cells, q, 1)?;
    let logit = g.classifier(fused, 1)?;
    Ok(kernels::sigmoid(tape.value(logit).data()[0]).as_f64())
}

/// Number of `trials` in which permuting the cells of `f_st` moves the
/// baseline's `ŷ` by at least `threshold`.
pub fn baseline_permutation_sensitivity(trials: usize, threshold: f64, seed: u64) -> Result<usize, VerifyError> {
    let mut changed = 0;
    for i in 0..trials {
        let mut r = rng::stream(seed, &format!("baseline_sensitivity.{i}"));
        let config = relation_config(2, true).with_variant(Variant::NoRelation);
        let model = IntentModel::<f64>::init(config.clone(), r.gen())?;
        let f_st = uniform(&mut r, &[2, 2, config.feature_channels], -1.0, 1.0);
        let q = uniform(&mut r, &[config.traj_hidden], -1.0, 1.0);
        let mut perm: Vec<usize> = (0..config.cells()).collect();
        while perm.iter().enumerate().all(|(a, &b)| a == b) {
            perm.shuffle(&mut r);
        }
        let a = baseline_from_features(&f_st, &q, &model)?;
        let b = baseline_from_features(&permute_cells(&f_st, &perm), &q, &model)?;
        if (a - b).abs() >= threshold {
            changed += 1;
        }
    }
    Ok(changed)
}

/// Euclidean norm of `∂(w·R(f_st, q))/∂q` for a random instance.
pub fn conditioning_gradient_norm(seed: u64) -> Result<f64, VerifyError> {
    let mut r = rng::stream(seed, "conditioning");
    let config = relation_config(2, true);
    let model = random_relation_model::<f64>(config.clone(), &mut r)?;
    let mut tape = Tape::new();
    let mut g = Graph::new(&mut tape, &model);
    let cells = g.tape.input(uniform(&mut r, &[config.cells(), config.feature_channels], -1.0, 1.0));
    let q = g.tape.variable(uniform(&mut r, &[1, config.traj_hidden], -1.0, 1.0));
    let out = g.relation(cells, q, 1, PairSum::Enumerate)?;
    let w = tape.input(uniform(&mut r, &[1, config.relation_dim], -1.0, 1.0));
    let prod = tape.mul(out, w)?;
    let loss = tape.sum_all(prod)?;
    let grads = tape.backward(loss)?;
    Ok(grads.wrt(q).data().iter().map(|v| v * v).sum::<f64>().sqrt())
}
