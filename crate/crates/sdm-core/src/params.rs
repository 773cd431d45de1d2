//! Named parameter store shared by the encoder, denoiser, and adapters.
//!
//! Parameters are addressed by slash-separated paths (`"sdn/stem/w"`,
//! `"ctb/3/wq"`, `"stb/0/out/w"`); the stage-2 freeze contract is expressed
//! as a trainability flag per parameter.

use crate::autodiff::{Graph, NodeId};
use crate::num::Scalar;
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: ArrayD<T>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar> {
    params: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<T>, trainable: bool) {
        let name = name.into();
        let prev = self.params.insert(name.clone(), Param { value, trainable });
        assert!(prev.is_none(), "duplicate parameter `{name}`");
    }

    pub fn get(&self, name: &str) -> &ArrayD<T> {
        &self.params.get(name).unwrap_or_else(|| panic!("unknown parameter `{name}`")).value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<T> {
        &mut self
            .params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .value
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.params.get(name).map(|p| p.trainable).unwrap_or(false)
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn set_trainable_all(&mut self, trainable: bool) {
        for p in self.params.values_mut() {
            p.trainable = trainable;
        }
    }

    pub fn set_trainable_by_prefix(&mut self, prefix: &str, trainable: bool) {
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    /// Total scalar count, optionally restricted to trainable parameters.
    pub fn scalar_count(&self, trainable_only: bool) -> usize {
        self.params
            .values()
            .filter(|p| !trainable_only || p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// SHA-256 over (name, shape, little-endian bytes) in name order. Used
    /// for checkpoint identity and byte-level freeze checks.
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for (name, p) in &self.params {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            for &d in p.value.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            let mut bytes = Vec::with_capacity(p.value.len() * T::DTYPE.size_bytes());
            for &v in p.value.iter() {
                v.write_le(&mut bytes);
            }
            hasher.update(&bytes);
        }
        hasher.finalize().into()
    }

    /// Digest restricted to parameters matching a predicate.
    pub fn digest_filtered(&self, keep: impl Fn(&str) -> bool) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for (name, p) in &self.params {
            if !keep(name) {
                continue;
            }
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            let mut bytes = Vec::with_capacity(p.value.len() * T::DTYPE.size_bytes());
            for &v in p.value.iter() {
                v.write_le(&mut bytes);
            }
            hasher.update(&bytes);
        }
        hasher.finalize().into()
    }

    /// Bind every parameter as a graph leaf; trainable ones require grad.
    pub fn bind_all(&self, g: &mut Graph<T>) -> BoundParams {
        let mut ids = BTreeMap::new();
        for (name, p) in &self.params {
            let id = g.leaf(p.value.clone(), p.trainable);
            ids.insert(name.clone(), id);
        }
        BoundParams { ids }
    }
}

/// Graph leaf ids for one forward pass, keyed by parameter path.
pub struct BoundParams {
    ids: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NodeId)> {
        self.ids.iter()
    }
}

pub fn hex_digest(digest: &[u8; 32]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// He-style normal init with std `sqrt(2 / fan_in)`.
pub fn he_normal<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> ArrayD<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let mut arr = ArrayD::zeros(IxDyn(shape));
    for v in arr.iter_mut() {
        *v = T::from_f(crate::num::standard_normal::<f64, _>(rng) * std);
    }
    arr
}

pub fn zeros<T: Scalar>(shape: &[usize]) -> ArrayD<T> {
    ArrayD::zeros(IxDyn(shape))
}

pub fn ones<T: Scalar>(shape: &[usize]) -> ArrayD<T> {
    ArrayD::from_elem(IxDyn(shape), T::one())
}
