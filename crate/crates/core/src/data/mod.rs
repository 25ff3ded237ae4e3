//! Dataset readers and in-memory image sets.

pub mod cifar;
pub mod kitti;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Preprocessed images stored contiguously as N×C×H×W `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    /// Per-sample (C, H, W).
    pub shape: [usize; 3],
    pub data: Vec<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// First `n` samples (or all, if fewer).
    pub fn subset(&self, n: usize) -> ImageSet {
        let n = n.min(self.len());
        ImageSet {
            shape: self.shape,
            data: self.data[..n * self.sample_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.len() * self.sample_len() {
            return Err(Error::Shape(format!(
                "{} values for {} samples of {:?}",
                self.data.len(),
                self.len(),
                self.shape
            )));
        }
        if let Some((index, &label)) = self.labels.iter().enumerate().find(|(_, &l)| l >= self.num_classes) {
            return Err(Error::Label {
                index,
                label,
                classes: self.num_classes,
            });
        }
        Ok(())
    }

    /// Gathers the given samples into a batch tensor, transforming each image.
    pub fn batch_with(
        &self,
        indices: &[usize],
        mut transform: impl FnMut(usize, &[f32]) -> Vec<f32>,
    ) -> (Tensor<f32>, Vec<usize>) {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for (slot, &i) in indices.iter().enumerate() {
            data.extend(transform(slot, self.image(i)));
        }
        let [c, h, w] = self.shape;
        let t = Tensor::from_vec([indices.len(), c, h, w], data).expect("batch sizes agree");
        (t, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        self.batch_with(indices, |_, img| img.to_vec())
    }
}
