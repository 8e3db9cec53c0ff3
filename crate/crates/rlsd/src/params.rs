//! Named, insertion-ordered parameter storage.
//!
//! Model weights live in a [`ParamSet`] between steps. Each forward pass
//! leases them onto a fresh tape with [`bind`], reads gradients back out
//! after `backward`, and applies updates to the set. Insertion order is the
//! canonical order everywhere (checkpoint layout, gradient reduction,
//! optimizer sweeps), which keeps training bit-reproducible.

use crate::tensor::{Tape, Tensor, TensorId};
use std::collections::HashMap;

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Register a parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name: {name}"
        );
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = *self.index.get(name)?;
        Some(&mut self.entries[i].1)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Copy every entry of `other` in, keeping`other`'s order. Panics on a
    /// name collision, which always indicates a wiring bug.
    pub fn absorb(&mut self, other: ParamSet) {
        for (name, value) in other.entries {
            self.insert(name, value);
        }
    }

    /// Overwrite values of entries whose names exist in both sets; entries
    /// unique to `source` are ignored. Returns how many were copied.
    pub fn adopt_values(&mut self, source: &ParamSet) -> usize {
        let mut copied = 0;
        for (name, value) in &source.entries {
            if let Some(dst) = self.get_mut(name) {
                assert_eq!(
                    dst.shape, value.shape,
                    "shape mismatch adopting {name}: {:?} vs {:?}",
                    dst.shape, value.shape
                );
                dst.data.clone_from(&value.data);
                copied += 1;
            }
        }
        copied
    }
}

/// Tape-side handles for one leased [`ParamSet`].
pub struct BoundParams {
    ids: Vec<(String, TensorId)>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    /// Assemble a binding from explicit name/id pairs. Mostly useful in
    /// tests that manage tape leaves themselves.
    pub fn from_ids(ids: Vec<(String, TensorId)>) -> Self {
        let index = ids
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        BoundParams { ids, index }
    }

    /// Handle for a known parameter. Panics on unknown names: forward code
    /// addressing a missing weight is a construction bug, not runtime input.
    pub fn id(&self, name: &str) -> TensorId {
        match self.index.get(name) {
            Some(&i) => self.ids[i].1,
            None => panic!("parameter {name} is not bound"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, TensorId)> {
        self.ids.iter().map(|(n, id)| (n.as_str(), *id))
    }
}

/// Lease every parameter onto `tape` as a leaf. `tracked` decides per name
/// whether gradients should flow into it (frozen components bind untracked).
pub fn bind(
    set: &ParamSet,
    tape: &mut Tape,
    mut tracked: impl FnMut(&str) -> bool,
) -> BoundParams {
    let mut ids = Vec::with_capacity(set.len());
    let mut index = HashMap::with_capacity(set.len());
    for (name, value) in set.iter() {
        let id = tape.leaf(value.clone(), tracked(name));
        index.insert(name.to_string(), ids.len());
        ids.push((name.to_string(), id));
    }
    BoundParams { ids, index }
}

/// Lease every parameter as trainable.
pub fn bind_all(set: &ParamSet, tape: &mut Tape) -> BoundParams {
    bind(set, tape, |_| true)
}

/// Lease every parameter frozen (inference).
pub fn bind_frozen(set: &ParamSet, tape: &mut Tape) -> BoundParams {
    bind(set, tape, |_| false)
}
