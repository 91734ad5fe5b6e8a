use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{NumericError, Real, Tensor};

/// Named parameters, iterated in sorted name order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<(), NumericError> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(NumericError::DuplicateParam(name));
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>, NumericError> {
        self.get(name).ok_or_else(|| NumericError::UnknownParam(name.to_owned()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// `(name, shape)` for every parameter in name order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.tensors.iter().map(|(k, v)| (k.clone(), v.shape().to_vec())).collect()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// SHA-256 over names, shapes and element bits of the parameters whose
    /// names satisfy `filter`.
    pub fn checksum(&self, filter: impl Fn(&str) -> bool) -> String {
        let mut hasher = Sha256::new();
        for (name, t) in self.tensors.iter().filter(|(k, _)| filter(k)) {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            for d in t.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                hasher.update(v.as_f64().to_bits().to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

impl<T: Real> FromIterator<(String, Tensor<T>)> for ParamStore<T> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<T>)>>(iter: I) -> Self {
        ParamStore { tensors: iter.into_iter().collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected_and_order_sorted() {
        let mut p = ParamStore::<f32>::new();
        p.insert("z.w", Tensor::zeros(&[1])).unwrap();
        p.insert("a.w", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(p.insert("a.w", Tensor::zeros(&[1])), Err(NumericError::DuplicateParam(_))));
        assert_eq!(p.names().collect::<Vec<_>>(), vec!["a.w", "z.w"]);
        assert_eq!(p.num_elements(), 3);
    }

    #[test]
    fn checksum_depends_on_values() {
        let mut a = ParamStore::<f32>::new();
        a.insert("w", Tensor::full(&[2], 1.0)).unwrap();
        let mut b = a.clone();
        assert_eq!(a.checksum(|_| true), b.checksum(|_| true));
        b.get_mut("w").unwrap().data_mut()[0] = 1.5;
        assert_ne!(a.checksum(|_| true), b.checksum(|_| true));
    }
}
