//! Datasets, image codecs and the tensor container format.

pub mod container;
pub mod idx;
pub mod ppm;
pub mod shapes;

pub use container::{load_container, load_container_with_metadata, save_container, save_container_with_metadata};
pub use idx::{load_idx, load_mnist_dir};
pub use ppm::{read_ppm, write_ppm};
pub use shapes::{gen_shapes_dataset, BoundingBox, DetectionSample, DetectionSet, ShapeKind};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images with one category label each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub category_names: Vec<String>,
}

impl LabeledImageSet {
    /// Checks equal lengths, a shared image shape, and labels in range.
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>, category_names: Vec<String>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        if let Some(first) = images.first() {
            for img in &images[1..] {
                first.same_shape(img, "dataset image")?;
            }
        }
        for &label in &labels {
            if label >= category_names.len() {
                return Err(Error::InvalidLabel {
                    label,
                    categories: category_names.len(),
                });
            }
        }
        Ok(Self {
            images,
            labels,
            category_names,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.images.first().map(|t| t.shape())
    }

    pub fn categories(&self) -> usize {
        self.category_names.len()
    }

    /// Contiguous sub-range `start..start+count` (clipped to the set).
    pub fn slice(&self, start: usize, count: usize) -> Self {
        let end = (start + count).min(self.len());
        let start = start.min(end);
        Self {
            images: self.images[start..end].to_vec(),
            labels: self.labels[start..end].to_vec(),
            category_names: self.category_names.clone(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tensor, usize)> {
        self.images.iter().zip(self.labels.iter().copied())
    }
}
