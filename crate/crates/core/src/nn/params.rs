use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named parameter tensors of one network, iterated in name order.
///
/// `step_count` is the optimizer time step; Adam uses it for bias
/// correction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
    pub step_count: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.entries.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    /// Lookup that reports the missing name as an error.
    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.entries.get(name).ok_or_else(|| Error::ParamMismatch(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries over all tensors.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Same names and shapes, every value zero, step count reset.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()))).collect(),
            step_count: 0,
        }
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::ParamMismatch(format!(
                "{} entries vs {} entries",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((ka, va), (kb, vb)) in self.entries.iter().zip(&other.entries) {
            if ka != kb {
                return Err(Error::ParamMismatch(format!("`{ka}` vs `{kb}`")));
            }
            if va.shape() != vb.shape() {
                return Err(Error::ParamMismatch(format!("`{ka}` has shape {:?} vs {:?}", va.shape(), vb.shape())));
            }
        }
        Ok(())
    }

    /// `self += scale * other` entry-wise.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.entries.values_mut().zip(other.entries.values()) {
            a.add_scaled(b, scale)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.entries.values_mut() {
            t.scale(factor);
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.entries.values_mut() {
            t.data_mut().fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }

    /// Largest absolute entry-wise difference; `None` when layouts differ.
    pub fn max_abs_diff(&self, other: &ParamSet) -> Option<f64> {
        self.check_layout(other).ok()?;
        Some(
            self.entries
                .values()
                .zip(other.entries.values())
                .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()))
                .fold(0.0, f64::max),
        )
    }

    /// Bit-level equality of every entry, ignoring `step_count`.
    pub fn bit_eq(&self, other: &ParamSet) -> bool {
        self.check_layout(other).is_ok()
            && self
                .entries
                .values()
                .zip(other.entries.values())
                .all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()))
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self { entries: iter.into_iter().collect(), step_count: 0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("b", Tensor::vector(vec![1.0, 2.0]));
        p.insert("a", Tensor::vector(vec![3.0]));
        p
    }

    #[test]
    fn iteration_is_name_ordered() {
        let names: Vec<_> = sample().names().map(str::to_owned).collect();
        assert_eq!(names, ["a", "b"]);
    }

    #[test]
    fn layout_mismatch_is_reported() {
        let p = sample();
        let mut q = sample();
        q.insert("c", Tensor::vector(vec![0.0]));
        assert!(p.check_layout(&q).is_err());
        let mut r = sample();
        r.insert("a", Tensor::vector(vec![0.0, 0.0]));
        assert!(matches!(p.check_layout(&r), Err(Error::ParamMismatch(_))));
    }

    #[test]
    fn add_scaled_and_diff() {
        let mut p = sample();
        let q = sample();
        p.add_scaled(&q, -1.0).unwrap();
        assert_eq!(p.max_abs_diff(&p.zeros_like()), Some(0.0));
        assert!(sample().bit_eq(&q));
    }
}
