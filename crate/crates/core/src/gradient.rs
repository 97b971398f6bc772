//! Gradients as flat name → tensor maps; the unit of accumulation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A flat mapping from parameter identifiers to same-shaped value arrays.
/// Iteration order is the sorted name order, which keeps every reduction
/// over gradients deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradient {
    entries: BTreeMap<String, Tensor>,
}

impl Gradient {
    pub fn new() -> Self {
        Gradient::default()
    }

    pub fn from_map(entries: BTreeMap<String, Tensor>) -> Self {
        Gradient { entries }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(Tensor::all_finite)
    }

    /// Add `other` into `self`. Keys absent on either side are treated as
    /// zero (the entry is copied or left as is). Shapes under a shared key
    /// must match.
    pub fn add_assign(&mut self, other: &Gradient) -> Result<()> {
        for (name, t) in &other.entries {
            match self.entries.get_mut(name) {
                Some(mine) => {
                    if mine.shape() != t.shape() {
                        return Err(Error::shape(
                            "gradient add",
                            format!("'{name}': {:?} vs {:?}", mine.shape(), t.shape()),
                        ));
                    }
                    for (a, b) in mine.values_mut().iter_mut().zip(t.values()) {
                        *a += b;
                    }
                }
                None => {
                    self.entries.insert(name.clone(), t.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.entries.values_mut() {
            for v in t.values_mut() {
                *v *= c;
            }
        }
    }

    /// Largest absolute coordinate difference against another gradient over
    /// the union of keys (missing entries treated as zero).
    pub fn max_abs_diff(&self, other: &Gradient) -> f64 {
        let mut worst: f64 = 0.0;
        let keys: std::collections::BTreeSet<&String> =
            self.entries.keys().chain(other.entries.keys()).collect();
        for key in keys {
            match (self.get(key), other.get(key)) {
                (Some(a), Some(b)) => {
                    for (x, y) in a.values().iter().zip(b.values()) {
                        worst = worst.max((x - y).abs());
                    }
                }
                (Some(t), None) | (None, Some(t)) => {
                    for x in t.values() {
                        worst = worst.max(x.abs());
                    }
                }
                (None, None) => unreachable!(),
            }
        }
        worst
    }
}

impl IntoIterator for Gradient {
    type Item = (String, Tensor);
    type IntoIter = std::collections::btree_map::IntoIter<String, Tensor>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.into_iter()
    }
}
