//! Named, ordered parameter collections.
//!
//! Insertion order is the canonical order: flattening for the optimizer and
//! for binary serialization both walk entries in the order they were declared
//! by the network constructors.

use std::collections::HashMap;

use rand::Rng;

use crate::numcore::matrix::Matrix;

/// Ordered map of parameter name → matrix.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<(String, Matrix)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter block '{name}'"
        );
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, value));
    }

    /// Insert a weight matrix initialized uniformly in ±1/√fan_in.
    pub fn insert_fan_in(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let m = Matrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..bound));
        self.insert(name, m);
    }

    /// Insert a zero matrix (biases; zero-initialized output layers).
    pub fn insert_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) {
        self.insert(name, Matrix::zeros(rows, cols));
    }

    pub fn get(&self, name: &str) -> &Matrix {
        let i = self.index[name];
        &self.entries[i].1
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Matrix {
        let i = self.index[name];
        &mut self.entries[i].1
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total count of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.data().len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    /// Names and shapes in canonical order (the serialization manifest).
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        self.entries
            .iter()
            .map(|(n, m)| (n.clone(), m.rows(), m.cols()))
            .collect()
    }

    /// All scalars concatenated in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_scalars());
        for (_, m) in &self.entries {
            out.extend_from_slice(m.data());
        }
        out
    }

    /// Load scalars produced by [`ParamSet::flatten`] back into the blocks.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<(), String> {
        if flat.len() != self.n_scalars() {
            return Err(format!(
                "parameter count mismatch: bundle holds {}, model declares {}",
                flat.len(),
                self.n_scalars()
            ));
        }
        let mut off = 0;
        for (_, m) in &mut self.entries {
            let n = m.data().len();
            m.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_roundtrip_preserves_order_and_values() {
        let mut ps = ParamSet::new();
        ps.insert("a", Matrix::from_vec(1, 2, vec![1.0, 2.0]));
        ps.insert("b", Matrix::from_vec(2, 2, vec![3.0, 4.0, 5.0, 6.0]));
        let flat = ps.flatten();
        assert_eq!(flat, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

        let mut ps2 = ps.clone();
        for v in ps2.get_mut("a").data_mut() {
            *v = 0.0;
        }
        ps2.load_flat(&flat).unwrap();
        assert_eq!(ps2.get("a").data(), &[1.0, 2.0]);
    }

    #[test]
    fn load_flat_rejects_wrong_length() {
        let mut ps = ParamSet::new();
        ps.insert("a", Matrix::zeros(2, 2));
        assert!(ps.load_flat(&[1.0]).is_err());
    }

    #[test]
    #[should_panic(expected = "duplicate parameter block")]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::new();
        ps.insert("a", Matrix::zeros(1, 1));
        ps.insert("a", Matrix::zeros(1, 1));
    }

    #[test]
    fn fan_in_bound_respected() {
        use crate::rngstream::{stream, Purpose};
        let mut rng = stream(0, Purpose::ParamInit, 0);
        let mut ps = ParamSet::new();
        ps.insert_fan_in("w", 16, 8, &mut rng);
        let bound = 1.0 / 4.0;
        assert!(ps.get("w").data().iter().all(|v| v.abs() < bound));
    }
}
