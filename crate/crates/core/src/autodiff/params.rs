use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Named trainable matrices plus their most recent gradients.
///
/// Serializes as a JSON object mapping each name to a nested array of rows;
/// gradients are not persisted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    values: BTreeMap<String, Array2<f64>>,
    grads: BTreeMap<String, Array2<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.values.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.values.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.values.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar entries.
    pub fn n_scalars(&self) -> usize {
        self.values.values().map(|v| v.len()).sum()
    }

    pub fn set_grad(&mut self, name: &str, grad: Array2<f64>) -> Result<()> {
        let v = self
            .values
            .get(name)
            .ok_or_else(|| Error::Graph(format!("gradient for unknown parameter {name}")))?;
        if v.dim() != grad.dim() {
            return Err(Error::shape(format!(
                "gradient for {name} is {:?}, parameter is {:?}",
                grad.dim(),
                v.dim()
            )));
        }
        self.grads.insert(name.to_string(), grad);
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Option<&Array2<f64>> {
        self.grads.get(name)
    }

    pub fn clear_grads(&mut self) {
        self.grads.clear();
    }

    pub(crate) fn take_grads(&mut self) -> BTreeMap<String, Array2<f64>> {
        std::mem::take(&mut self.grads)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl Serialize for ParamSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let nested: BTreeMap<&str, Vec<Vec<f64>>> = self
            .values
            .iter()
            .map(|(k, v)| (k.as_str(), v.rows().into_iter().map(|r| r.to_vec()).collect()))
            .collect();
        nested.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParamSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let nested: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::deserialize(d)?;
        let mut values = BTreeMap::new();
        for (k, rows) in nested {
            let r = rows.len();
            let c = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|row| row.len() != c) {
                return Err(serde::de::Error::custom(format!("ragged rows in parameter {k}")));
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            let a = Array2::from_shape_vec((r, c), flat).map_err(serde::de::Error::custom)?;
            values.insert(k, a);
        }
        Ok(Self {
            values,
            grads: BTreeMap::new(),
        })
    }
}
