use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{NumericError, ParamStore, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { kind: OptimKind::Adam, lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig { kind: OptimKind::Sgd, lr, ..Default::default() }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig { kind: OptimKind::Adam, lr, ..Default::default() }
    }
}

/// Adam moments, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T: Real = f32> {
    pub first_moment: BTreeMap<String, Tensor<T>>,
    pub second_moment: BTreeMap<String, Tensor<T>>,
    pub step: u64,
}

impl<T: Real> OptimState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: BTreeMap<String, Tensor<T>> =
            params.iter().map(|(k, v)| (k.to_owned(), Tensor::zeros(v.shape()))).collect();
        OptimState { first_moment: zeros.clone(), second_moment: zeros, step: 0 }
    }
}

/// Apply one update. Every parameter needs a gradient of identical shape.
pub fn optimizer_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut OptimState<T>,
    hyper: &OptimizerConfig,
) -> Result<(), NumericError> {
    for (name, p) in params.iter() {
        let g = grads.get(name).ok_or_else(|| NumericError::MissingGradient(name.to_owned()))?;
        if g.shape() != p.shape() {
            return Err(NumericError::ShapeMismatch {
                op: "optimizer_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let lr = T::lit(hyper.lr);
    match hyper.kind {
        OptimKind::Sgd => {
            for (name, p) in params.iter_mut() {
                let g = &grads[name];
                for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
                    *pv -= lr * gv;
                }
            }
        }
        OptimKind::Adam => {
            let (b1, b2) = (T::lit(hyper.beta1), T::lit(hyper.beta2));
            let eps = T::lit(hyper.eps);
            let t = state.step as i32;
            let bc1 = T::lit(1.0 - hyper.beta1.powi(t));
            let bc2 = T::lit(1.0 - hyper.beta2.powi(t));
            for (name, p) in params.iter_mut() {
                let g = &grads[name];
                let m = state
                    .first_moment
                    .entry(name.to_owned())
                    .or_insert_with(|| Tensor::zeros(p.shape()));
                let v = state
                    .second_moment
                    .entry(name.to_owned())
                    .or_insert_with(|| Tensor::zeros(p.shape()));
                for (((pv, &gv), mv), vv) in p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut().iter_mut())
                    .zip(v.data_mut().iter_mut())
                {
                    *mv = b1 * *mv + (T::one() - b1) * gv;
                    *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                    let m_hat = *mv / bc1;
                    let v_hat = *vv / bc2;
                    *pv -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}
