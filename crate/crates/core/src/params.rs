//! Named parameter storage.
//!
//! Parameters are keyed by dotted module path (`align.dcn.weight`). Random
//! initialization draws from a stream derived from `(seed, name)`, so adding
//! or removing a module never perturbs the initial values of the others.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Fills every tensor whose name starts with `prefix` with zeros.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, t) in self.tensors.iter_mut() {
            if name.starts_with(prefix) {
                t.data_mut().fill(0.0);
            }
        }
    }

    pub(crate) fn init_normal(&mut self, name: &str, shape: &[usize], std: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
        let normal = Normal::new(0.0, std).expect("finite std");
        let t = Tensor::from_fn(shape, |_| normal.sample(&mut rng));
        self.insert(name, t);
    }

    pub(crate) fn init_zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }
}

/// Mixes a global seed with a name (FNV-1a, then a SplitMix64 finalizer).
pub fn name_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(seed ^ h)
}

pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_depends_only_on_seed_and_name() {
        let mut a = ParamStore::new();
        a.init_normal("x.weight", &[3, 4], 0.1, 7);
        let mut b = ParamStore::new();
        b.init_normal("other", &[5], 0.1, 7);
        b.init_normal("x.weight", &[3, 4], 0.1, 7);
        assert_eq!(a.get("x.weight"), b.get("x.weight"));
        assert_eq!(b.parameter_count(), 17);
    }
}
