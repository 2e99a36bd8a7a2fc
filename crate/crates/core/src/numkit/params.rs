use super::{DenseMatrix, NumError};

/// Ordered, uniquely named parameter tensors. Biases are stored as `1 × n`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParameterSet {
    names: Vec<String>,
    tensors: Vec<DenseMatrix>,
}

/// Gradients share the layout of the parameters they belong to.
pub type Gradients = ParameterSet;

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, value: DenseMatrix) -> Result<usize, NumError> {
        let name = name.into();
        if self.names.iter().any(|n| *n == name) {
            return Err(NumError::DuplicateName(name));
        }
        self.names.push(name);
        self.tensors.push(value);
        Ok(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    #[inline]
    pub fn get(&self, idx: usize) -> &DenseMatrix {
        &self.tensors[idx]
    }

    #[inline]
    pub fn get_mut(&mut self, idx: usize) -> &mut DenseMatrix {
        &mut self.tensors[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, name: &str) -> Result<&DenseMatrix, NumError> {
        self.index_of(name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| NumError::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseMatrix)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn tensors(&self) -> &[DenseMatrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn total_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| DenseMatrix::zeros(t.rows(), t.cols()))
                .collect(),
        }
    }

    pub fn same_layout(&self, other: &ParameterSet) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(DenseMatrix::is_finite)
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_count());
        for t in &self.tensors {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), NumError> {
        if flat.len() != self.total_count() {
            return Err(NumError::Dimension {
                expected: format!("{} parameters", self.total_count()),
                got: format!("{}", flat.len()),
            });
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.data().len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `self += k · other`, element-wise.
    pub fn add_scaled(&mut self, other: &ParameterSet, k: f64) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += k * y;
            }
        }
    }

    /// `self ← (1 − tau) · self + tau · source`.
    pub fn blend_toward(&mut self, source: &ParameterSet, tau: f64) {
        debug_assert!(self.same_layout(source));
        for (a, b) in self.tensors.iter_mut().zip(&source.tensors) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = (1.0 - tau) * *x + tau * y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale(k));
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().fold(0.0, |m, t| m.max(t.max_abs()))
    }

    pub fn squared_distance(&self, other: &ParameterSet) -> f64 {
        self.tensors
            .iter()
            .zip(&other.tensors)
            .flat_map(|(a, b)| a.data().iter().zip(b.data()))
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut p = ParameterSet::new();
        p.push("w", DenseMatrix::zeros(2, 2)).unwrap();
        assert_eq!(
            p.push("w", DenseMatrix::zeros(1, 1)),
            Err(NumError::DuplicateName("w".into()))
        );
    }

    #[test]
    fn flat_roundtrip_preserves_layout() {
        let mut p = ParameterSet::new();
        p.push("a", DenseMatrix::zeros(2, 3)).unwrap();
        p.push("b", DenseMatrix::zeros(1, 3)).unwrap();
        let flat: Vec<f64> = (0..9).map(f64::from).collect();
        p.set_flat(&flat).unwrap();
        assert_eq!(p.flatten(), flat);
        assert_eq!(p.by_name("b").unwrap().data(), &[6.0, 7.0, 8.0]);
        assert!(p.set_flat(&flat[..8]).is_err());
    }
}
