//! In-memory datasets, seeded splits and synthetic generators.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::DataError;
use crate::rng::{self, stream};
use crate::tensor::{Real, Tensor};

mod synthetic;

pub use synthetic::{make_synthetic, DomainShift, GeneratorKind, SyntheticData, SyntheticSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        ImageShape {
            height,
            width,
            channels,
        }
    }

    /// Scalars per image.
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }
}

/// Images with hard labels. Pixels are stored row-major per image as
/// `(row, column, channel)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub class_names: Vec<String>,
    shape: ImageShape,
    num_classes: usize,
    pixels: Vec<f32>,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(
        name: &str,
        shape: ImageShape,
        num_classes: usize,
        pixels: Vec<f32>,
        labels: Vec<usize>,
    ) -> Result<Self, DataError> {
        if pixels.len() != labels.len() * shape.len() {
            return Err(DataError::Spec(format!(
                "{} pixel values for {} images of {} values",
                pixels.len(),
                labels.len(),
                shape.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        Ok(LabeledDataset {
            name: name.into(),
            class_names: (0..num_classes).map(|k| format!("class{k}")).collect(),
            shape,
            num_classes,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.shape.len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Images at `indices` as a `[B, H, W, C]` tensor.
    pub fn batch<S: Real>(&self, indices: &[usize]) -> Tensor<S> {
        let mut data = Vec::with_capacity(indices.len() * self.shape.len());
        for &i in indices {
            data.extend(self.image(i).iter().map(|&v| S::lit(v as f64)));
        }
        let [h, w, c] = self.shape.dims();
        Tensor::new(&[indices.len(), h, w, c], data).expect("batch shape")
    }

    pub fn all_images<S: Real>(&self) -> Tensor<S> {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx)
    }

    pub fn label_tensor<S: Real>(&self, indices: &[usize]) -> Tensor<S> {
        Tensor::vector(indices.iter().map(|&i| S::from_usize(self.labels[i])).collect())
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let mut pixels = Vec::with_capacity(indices.len() * self.shape.len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        LabeledDataset {
            name: self.name.clone(),
            class_names: self.class_names.clone(),
            shape: self.shape,
            num_classes: self.num_classes,
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset, DataError> {
        if self.shape != other.shape {
            return Err(DataError::ShapeMismatch(self.shape.dims(), other.shape.dims()));
        }
        if other.num_classes != self.num_classes {
            return Err(DataError::Spec(format!(
                "class counts differ: {} vs {}",
                self.num_classes, other.num_classes
            )));
        }
        let mut out = self.clone();
        out.pixels.extend_from_slice(&other.pixels);
        out.labels.extend_from_slice(&other.labels);
        Ok(out)
    }
}

/// Images without labels, each tagged with its index in the source pool.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledPool {
    pub name: String,
    shape: ImageShape,
    pixels: Vec<f32>,
    source_ids: Vec<u32>,
}

impl UnlabeledPool {
    pub fn new(name: &str, shape: ImageShape, pixels: Vec<f32>) -> Result<Self, DataError> {
        if shape.is_empty() || !pixels.len().is_multiple_of(shape.len()) {
            return Err(DataError::Spec(format!(
                "{} pixel values do not divide into images of {}",
                pixels.len(),
                shape.len()
            )));
        }
        let n = pixels.len() / shape.len();
        Ok(UnlabeledPool {
            name: name.into(),
            shape,
            pixels,
            source_ids: (0..n as u32).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.source_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_ids.is_empty()
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn source_ids(&self) -> &[u32] {
        &self.source_ids
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.shape.len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn batch<S: Real>(&self, indices: &[usize]) -> Tensor<S> {
        let mut data = Vec::with_capacity(indices.len() * self.shape.len());
        for &i in indices {
            data.extend(self.image(i).iter().map(|&v| S::lit(v as f64)));
        }
        let [h, w, c] = self.shape.dims();
        Tensor::new(&[indices.len(), h, w, c], data).expect("batch shape")
    }

    /// Position of `source_id` in this pool.
    pub fn position(&self, source_id: u32) -> Option<usize> {
        self.source_ids.binary_search(&source_id).ok()
    }

    /// Attaches labels to the images with the given source ids.
    pub fn labeled(
        &self,
        source_ids: &[u32],
        labels: &[usize],
        num_classes: usize,
    ) -> Result<LabeledDataset, DataError> {
        let mut pixels = Vec::with_capacity(source_ids.len() * self.shape.len());
        for &id in source_ids {
            let i = self
                .position(id)
                .ok_or_else(|| DataError::Spec(format!("source id {id} is not in the pool")))?;
            pixels.extend_from_slice(self.image(i));
        }
        LabeledDataset::new(&self.name, self.shape, num_classes, pixels, labels.to_vec())
    }
}

/// Seeded `train:test` split by ratio `parts.0 : parts.1`.
///
/// Stratified per class when every class has at least `parts.0 + parts.1`
/// samples; otherwise a single shuffled cut. Both halves keep the original
/// relative order.
pub fn split(
    dataset: &LabeledDataset,
    parts: (usize, usize),
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    let (a, b) = parts;
    if a + b == 0 {
        return Err(DataError::Ratio(a, b));
    }
    if dataset.is_empty() {
        return Err(DataError::Empty);
    }
    let total = a + b;
    let mut rng = rng::derive(seed, stream::SPLIT, 0);
    let counts = dataset.class_counts();
    let stratified = counts.iter().all(|&c| c >= total);

    let cut = |n: usize| (n * a + total / 2) / total;
    let mut test = Vec::new();
    if stratified {
        for k in 0..dataset.num_classes() {
            let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels()[i] == k).collect();
            members.shuffle(&mut rng);
            let keep = cut(members.len());
            test.extend_from_slice(&members[keep..]);
        }
    } else {
        let mut all: Vec<usize> = (0..dataset.len()).collect();
        all.shuffle(&mut rng);
        let keep = cut(all.len());
        test.extend_from_slice(&all[keep..]);
    }
    test.sort_unstable();
    let mut is_test = alloc::vec![false; dataset.len()];
    for &i in &test {
        is_test[i] = true;
    }
    let train: Vec<usize> = (0..dataset.len()).filter(|&i| !is_test[i]).collect();
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

#[cfg(test)]
mod tests;
