//! Dataset containers shared by the sampling, training, and evaluation
//! layers.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::nn::Tensor;
use crate::task::ClassLabel;
use crate::Result;

/// Synthetic two-Gaussian draw with both observed and clean labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    /// Row-major `n x d` feature matrix.
    pub features: Vec<f64>,
    pub d: usize,
    /// Observed labels in `{-1, +1}` (post label noise).
    pub labels: Vec<i8>,
    /// Ground-truth labels before any flip.
    pub clean_labels: Vec<i8>,
    pub seed: u64,
}

impl SyntheticDataset {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.clean_labels.len()
            || self.features.len() != self.labels.len() * self.d
        {
            return Err(CoreError::Dataset(format!(
                "inconsistent row counts: {} features, {} labels, {} clean labels, d = {}",
                self.features.len(),
                self.labels.len(),
                self.clean_labels.len(),
                self.d
            )));
        }
        for v in self.labels.iter().chain(self.clean_labels.iter()) {
            ClassLabel::from_i8(*v)?;
        }
        Ok(())
    }

    pub fn count(&self, class: ClassLabel) -> usize {
        self.labels.iter().filter(|&&l| l == class.as_i8()).count()
    }

    pub fn flipped_indices(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.labels[i] != self.clean_labels[i])
            .collect()
    }
}

/// General multi-class dataset consumed by the network trainer and the
/// evaluation harness. Labels are contiguous class ids `0..num_classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDataset {
    /// Row-major `n x d` feature matrix.
    pub features: Vec<f64>,
    pub d: usize,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// True where the observed label is known to differ from the clean one;
    /// all false when provenance is unknown.
    pub noisy: Vec<bool>,
    /// Natural feature range, when the data has one (images use `[0, 1]`).
    pub domain_clip: Option<(f64, f64)>,
}

impl ClassDataset {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.labels.len() * self.d || self.noisy.len() != self.labels.len()
        {
            return Err(CoreError::Dataset(format!(
                "inconsistent row counts: {} features, {} labels, {} noise flags, d = {}",
                self.features.len(),
                self.labels.len(),
                self.noisy.len(),
                self.d
            )));
        }
        if self.num_classes < 2 {
            return Err(CoreError::Dataset("need at least two classes".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(CoreError::Dataset(format!(
                "label {bad} out of range for {} classes",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Copies the given rows into a feature matrix plus aligned label and
    /// noise-flag vectors. Indices may repeat; each must be in range.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>, Vec<bool>)> {
        let mut features = Vec::with_capacity(indices.len() * self.d);
        let mut labels = Vec::with_capacity(indices.len());
        let mut noisy = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n() {
                return Err(CoreError::Dataset(format!(
                    "row {i} out of range for {} samples",
                    self.n()
                )));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
            noisy.push(self.noisy[i]);
        }
        let x = Tensor::from_vec(indices.len(), self.d, features)?;
        Ok((x, labels, noisy))
    }
}

impl From<&SyntheticDataset> for ClassDataset {
    /// Maps labels -1 to class 0 and +1 to class 1.
    fn from(src: &SyntheticDataset) -> Self {
        let labels: Vec<usize> = src
            .labels
            .iter()
            .map(|&l| if l < 0 { 0 } else { 1 })
            .collect();
        let noisy = src
            .labels
            .iter()
            .zip(&src.clean_labels)
            .map(|(a, b)| a != b)
            .collect();
        ClassDataset {
            features: src.features.clone(),
            d: src.d,
            labels,
            num_classes: 2,
            noisy,
            domain_clip: None,
        }
    }
}
