use rand::seq::SliceRandom;

use super::DataError;
use crate::numeric::rng;

/// Sequence ids per partition. Splitting by sequence keeps all windows of a
/// pedestrian in one partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffle `ids` with `seed` and cut by `ratios = (train, val, test)`.
/// Partition sizes are rounded; each partition gets at least one id.
pub fn split_dataset<S: AsRef<str>>(ids: &[S], ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit, DataError> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(DataError::InvalidSplit(format!("ratios must be positive, got {r:?}")));
    }
    let total: f64 = r.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidSplit(format!("ratios sum to {total}, expected 1")));
    }
    let n = ids.len();
    if n < 3 {
        return Err(DataError::InvalidSplit(format!("{n} sequences cannot fill 3 partitions")));
    }
    let mut sizes = [(r[0] * n as f64).round() as usize, (r[1] * n as f64).round() as usize, 0];
    sizes[0] = sizes[0].clamp(1, n - 2);
    sizes[1] = sizes[1].clamp(1, n - 1 - sizes[0]);
    sizes[2] = n - sizes[0] - sizes[1];

    let mut order: Vec<String> = ids.iter().map(|s| s.as_ref().to_owned()).collect();
    order.shuffle(&mut rng::stream(seed, "split"));
    let test = order.split_off(sizes[0] + sizes[1]);
    let val = order.split_off(sizes[0]);
    Ok(DatasetSplit { train: order, val, test })
}
