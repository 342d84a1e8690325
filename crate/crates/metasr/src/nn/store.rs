use std::collections::BTreeMap;
use std::path::Path;

use super::checkpoint;
use super::element::Element;
use super::error::{CheckpointError, NnError};
use super::tensor::Tensor;

/// Named, shaped tensors with deterministic (lexicographic) iteration order.
///
/// This is the unit of checkpointing: a whole training state (network
/// parameters, batch-norm buffers, optimizer moments, counters) is a set of
/// named tensors serialized with [`ParameterStore::save`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore<E: Element> {
    entries: BTreeMap<String, Tensor<E>>,
    version: u8,
}

impl<E: Element> ParameterStore<E> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
            version: checkpoint::FORMAT_VERSION,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<E>) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<E>, NnError> {
        self.entries
            .get(name)
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<E>, NnError> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<E>> {
        self.entries.remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn version(&self) -> u8 {
        self.version
    }

    pub(crate) fn set_version(&mut self, v: u8) {
        self.version = v;
    }

    /// Entries in lexicographic name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    /// Replace the values of an existing entry, keeping its shape.
    pub fn set_values(&mut self, name: &str, values: Vec<E>) -> Result<(), NnError> {
        let t = self.get_mut(name)?;
        if t.numel() != values.len() {
            return Err(NnError::DataLength {
                shape: t.shape().to_vec(),
                expected: t.numel(),
                got: values.len(),
            });
        }
        *t = Tensor::new(&t.shape().to_vec(), values)?;
        Ok(())
    }

    /// Sub-store of entries whose names start with `prefix`, prefix stripped.
    pub fn strip_prefix(&self, prefix: &str) -> ParameterStore<E> {
        let mut out = ParameterStore::new();
        for (name, tensor) in &self.entries {
            if let Some(rest) = name.strip_prefix(prefix) {
                out.insert(rest, tensor.clone());
            }
        }
        out
    }

    /// Copy every entry into `target` with `prefix` prepended.
    pub fn merge_into(&self, prefix: &str, target: &mut ParameterStore<E>) {
        for (name, tensor) in &self.entries {
            target.insert(format!("{prefix}{name}"), tensor.clone());
        }
    }

    /// Write in `MSRG` format. Values are stored as 32-bit reals; the round
    /// trip is bit-exact for `f32` stores.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        checkpoint::save(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        checkpoint::load(path.as_ref())
    }
}

impl<E: Element> FromIterator<(String, Tensor<E>)> for ParameterStore<E> {
    fn from_iter<T: IntoIterator<Item = (String, Tensor<E>)>>(iter: T) -> Self {
        let mut store = Self::new();
        for (name, tensor) in iter {
            store.insert(name, tensor);
        }
        store
    }
}
