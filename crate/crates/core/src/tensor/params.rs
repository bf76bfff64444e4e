//! Named, shaped, group-tagged parameter storage.

use super::{NdArray, TensorError};
use sha2::{Digest, Sha256};
use std::collections::HashMap;

/// Which part of the branched network a parameter belongs to. The
/// two-stage protocol freezes whole groups at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Backbone,
    TcHead,
    ClsHead,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Backbone, ParamGroup::TcHead, ParamGroup::ClsHead];

    /// Stable byte tag used by the checkpoint format.
    pub fn tag(self) -> u8 {
        match self {
            ParamGroup::Backbone => 0,
            ParamGroup::TcHead => 1,
            ParamGroup::ClsHead => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<ParamGroup> {
        match tag {
            0 => Some(ParamGroup::Backbone),
            1 => Some(ParamGroup::TcHead),
            2 => Some(ParamGroup::ClsHead),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Backbone => "backbone",
            ParamGroup::TcHead => "tc_head",
            ParamGroup::ClsHead => "cls_head",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    name: String,
    value: NdArray,
    grad: NdArray,
    group: ParamGroup,
    trainable: bool,
}

impl ParamEntry {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &NdArray {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut NdArray {
        &mut self.value
    }

    pub fn grad(&self) -> &NdArray {
        &self.grad
    }

    pub fn group(&self) -> ParamGroup {
        self.group
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub(super) fn update_value<F: FnMut(&mut f64, f64)>(&mut self, mut f: F, rhs: &[f64]) {
        for (v, &r) in self.value.data_mut().iter_mut().zip(rhs) {
            f(v, r);
        }
    }

    pub(super) fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Insertion-ordered map of named parameters. Iteration order is the
/// insertion order, which keeps initialization, updates, and checkpoints
/// deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    /// Registers a parameter as trainable. Names must be unique.
    pub fn insert(
        &mut self,
        name: &str,
        group: ParamGroup,
        value: NdArray,
    ) -> Result<(), TensorError> {
        if self.index.contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        let grad = NdArray::zeros(value.shape());
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad,
            group,
            trainable: true,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.index.get(name).copied().map(move |i| &mut self.entries[i])
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn value_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn set_group_trainable(&mut self, group: ParamGroup, trainable: bool) {
        for e in &mut self.entries {
            if e.group == group {
                e.trainable = trainable;
            }
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for e in &mut self.entries {
            e.trainable = trainable;
        }
    }

    /// Adds `grad` into a trainable entry's accumulator. Non-trainable
    /// entries receive no accumulation.
    pub(super) fn accumulate_grad(&mut self, name: &str, grad: &NdArray) -> Result<(), TensorError> {
        let entry = self
            .index
            .get(name)
            .copied()
            .map(|i| &mut self.entries[i])
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        if entry.trainable {
            entry.grad.add_assign(grad);
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.zero_grad();
        }
    }

    /// SHA-256 over a group's names, shapes, and raw little-endian values,
    /// in insertion order. Used to assert that frozen groups stay
    /// bit-identical across a training stage.
    pub fn group_checksum(&self, group: ParamGroup) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for e in &self.entries {
            if e.group != group {
                continue;
            }
            hasher.update(e.name.as_bytes());
            for &dim in e.value.shape() {
                hasher.update((dim as u64).to_le_bytes());
            }
            for &v in e.value.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_and_lookup() {
        let mut store = ParamStore::new();
        store
            .insert("backbone.fc0.w", ParamGroup::Backbone, NdArray::zeros(&[2, 3]))
            .unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.value_count(), 6);
        let e = store.get("backbone.fc0.w").unwrap();
        assert_eq!(e.group(), ParamGroup::Backbone);
        assert!(e.trainable());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", ParamGroup::TcHead, NdArray::zeros(&[1])).unwrap();
        assert_eq!(
            store.insert("w", ParamGroup::TcHead, NdArray::zeros(&[1])),
            Err(TensorError::DuplicateParam("w".into()))
        );
    }

    #[test]
    fn non_trainable_entries_accumulate_nothing() {
        let mut store = ParamStore::new();
        store.insert("w", ParamGroup::ClsHead, NdArray::zeros(&[2])).unwrap();
        store.set_group_trainable(ParamGroup::ClsHead, false);
        store
            .accumulate_grad("w", &NdArray::from_vec(&[2], vec![1.0, 1.0]))
            .unwrap();
        assert_eq!(store.get("w").unwrap().grad().data(), &[0.0, 0.0]);
    }

    #[test]
    fn checksum_tracks_values_per_group() {
        let mut store = ParamStore::new();
        store
            .insert("a", ParamGroup::Backbone, NdArray::from_vec(&[1], vec![1.0]))
            .unwrap();
        store
            .insert("b", ParamGroup::ClsHead, NdArray::from_vec(&[1], vec![2.0]))
            .unwrap();
        let before = store.group_checksum(ParamGroup::Backbone);
        let cls_before = store.group_checksum(ParamGroup::ClsHead);
        store.get_mut("b").unwrap().value_mut().data_mut()[0] = 5.0;
        assert_eq!(store.group_checksum(ParamGroup::Backbone), before);
        assert_ne!(store.group_checksum(ParamGroup::ClsHead), cls_before);
    }

    #[test]
    fn group_tags_round_trip() {
        for g in ParamGroup::ALL {
            assert_eq!(ParamGroup::from_tag(g.tag()), Some(g));
        }
        assert_eq!(ParamGroup::from_tag(9), None);
    }
}
