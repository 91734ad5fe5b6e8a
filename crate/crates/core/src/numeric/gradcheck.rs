use std::collections::BTreeMap;

use super::{NumericError, ParamStore, Tensor};

/// Central differences `(f(p+εe) − f(p−εe)) / 2ε` for every scalar parameter.
pub fn finite_difference_gradients<F>(
    mut f: F,
    params: &ParamStore<f64>,
    eps: f64,
) -> Result<BTreeMap<String, Tensor<f64>>, NumericError>
where
    F: FnMut(&ParamStore<f64>) -> Result<f64, NumericError>,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut work = params.clone();
    let mut out = BTreeMap::new();
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for name in names {
        let n = params.require(&name)?.len();
        let mut grad = Vec::with_capacity(n);
        for i in 0..n {
            let orig = work.require(&name)?.data()[i];
            work.get_mut(&name).expect("present").data_mut()[i] = orig + eps;
            let plus = f(&work)?;
            work.get_mut(&name).expect("present").data_mut()[i] = orig - eps;
            let minus = f(&work)?;
            work.get_mut(&name).expect("present").data_mut()[i] = orig;
            grad.push((plus - minus) / (2.0 * eps));
        }
        out.insert(name.clone(), Tensor::new(params.require(&name)?.shape().to_vec(), grad)?);
    }
    Ok(out)
}

/// `|a − b| / max(|a|, |b|, 1e−8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Worst per-element agreement between two gradient maps.
#[derive(Debug, Clone, PartialEq)]
pub struct GradComparison {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub elements: usize,
    pub failures: usize,
}

impl GradComparison {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

pub fn compare_gradients(
    analytic: &BTreeMap<String, Tensor<f64>>,
    numeric: &BTreeMap<String, Tensor<f64>>,
    tolerance: f64,
) -> Result<GradComparison, NumericError> {
    let mut cmp = GradComparison {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        elements: 0,
        failures: 0,
    };
    for (name, fd) in numeric {
        let a = analytic.get(name).ok_or_else(|| NumericError::MissingGradient(name.clone()))?;
        if a.shape() != fd.shape() {
            return Err(NumericError::ShapeMismatch {
                op: "compare_gradients",
                lhs: a.shape().to_vec(),
                rhs: fd.shape().to_vec(),
            });
        }
        for (i, (&x, &y)) in a.data().iter().zip(fd.data()).enumerate() {
            let e = relative_error(x, y);
            cmp.elements += 1;
            if !(e < tolerance) {
                cmp.failures += 1;
            }
            if e > cmp.max_relative_error || e.is_nan() {
                cmp.max_relative_error = e;
                cmp.worst_param = name.clone();
                cmp.worst_index = i;
            }
        }
    }
    Ok(cmp)
}
