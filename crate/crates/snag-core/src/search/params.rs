//! The shared parameter dictionary: trained op parameters keyed by layer
//! position and op name, loaded into later children of the same shape.

use std::collections::BTreeMap;

use crate::tensor::Tensor;

use super::SearchError;

/// Parameter store for weight sharing. Keys are `(layer_index, op_name)`;
/// node aggregators use their layer position and id, the layer aggregator and
/// classifier use reserved rows past the last layer. Values are detached
/// copies of the trained tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamDict {
    map: BTreeMap<(usize, String), Vec<Tensor>>,
}

impl ParamDict {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    /// Stored tensors for a key, or `None` when the op has not been trained
    /// yet (the caller then initializes fresh).
    pub fn get(&self, layer: usize, op: &str) -> Option<&[Tensor]> {
        self.map.get(&(layer, op.to_string())).map(Vec::as_slice)
    }

    /// Saves detached copies of `tensors` under the key, replacing any
    /// previous entry. A replacement must match the stored slot count and
    /// shapes: one key means one op schema.
    pub fn put(&mut self, layer: usize, op: &str, tensors: &[Tensor]) -> Result<(), SearchError> {
        if tensors.is_empty() {
            return Err(SearchError::Invalid(format!("empty parameter list for ({layer}, {op})")));
        }
        if let Some(old) = self.map.get(&(layer, op.to_string())) {
            let same = old.len() == tensors.len()
                && old.iter().zip(tensors.iter()).all(|(a, b)| a.shape() == b.shape());
            if !same {
                return Err(SearchError::Invalid(format!(
                    "shape mismatch storing ({layer}, {op}): key already holds a different schema"
                )));
            }
        }
        let copies = tensors
            .iter()
            .map(|t| {
                let mut c = t.clone();
                c.zero_grad();
                c
            })
            .collect();
        self.map.insert((layer, op.to_string()), copies);
        Ok(())
    }

    /// Stable iteration over keys, for reporting.
    pub fn keys(&self) -> impl Iterator<Item = (usize, &str)> {
        self.map.keys().map(|(l, op)| (*l, op.as_str()))
    }
}
