use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labelled samples with a per-class index.
///
/// Samples are either static (`[C, H, W]`, replicated over time when batched)
/// or already sequences (`[T, C, H, W]`, e.g. integrated event frames).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<Tensor>,
    labels: Vec<usize>,
    class_count: usize,
    by_class: Vec<Vec<usize>>,
    sequence: bool,
}

impl LabeledDataset {
    pub fn new(samples: Vec<Tensor>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        Self::build(samples, labels, class_count, false)
    }

    /// Dataset whose samples already carry a leading time axis.
    pub fn new_sequences(
        samples: Vec<Tensor>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        Self::build(samples, labels, class_count, true)
    }

    fn build(
        samples: Vec<Tensor>,
        labels: Vec<usize>,
        class_count: usize,
        sequence: bool,
    ) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        if let Some(first) = samples.first() {
            if let Some(bad) = samples.iter().position(|s| s.shape() != first.shape()) {
                return Err(Error::Dataset(format!(
                    "sample {bad} has a different shape"
                )));
            }
        }
        let mut by_class = vec![Vec::new(); class_count];
        for (i, &y) in labels.iter().enumerate() {
            if y >= class_count {
                return Err(Error::Dataset(format!(
                    "label {y} outside [0, {class_count})"
                )));
            }
            by_class[y].push(i);
        }
        Ok(Self {
            samples,
            labels,
            class_count,
            by_class,
            sequence,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> &Tensor {
        &self.samples[i]
    }

    pub fn class_indices(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }

    pub fn is_sequence(&self) -> bool {
        self.sequence
    }

    /// Per-step shape of one sample.
    pub fn frame_shape(&self) -> Vec<usize> {
        match self.samples.first() {
            Some(s) if self.sequence => s.shape()[1..].to_vec(),
            Some(s) => s.shape().to_vec(),
            None => Vec::new(),
        }
    }

    /// Time-major input batch `[T, N, ...frame]`. Static samples are replicated
    /// `steps` times; sequence samples must already have `steps` frames.
    pub fn batch(&self, indices: &[usize], steps: usize) -> Result<Tensor> {
        let items: Vec<&Tensor> = indices.iter().map(|&i| &self.samples[i]).collect();
        let stacked = Tensor::stack(&items)?;
        if self.sequence {
            let t = stacked.shape()[1];
            if t != steps {
                return Err(Error::Dataset(format!(
                    "samples have {t} frames, expected {steps}"
                )));
            }
            Ok(stacked.swap_leading_axes())
        } else {
            super::replicate_temporal(&stacked, steps)
        }
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// New dataset keeping the listed samples, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        let labels = self.labels_of(indices);
        Self::build(samples, labels, self.class_count, self.sequence)
            .expect("subset of a valid dataset")
    }

    /// Indices of `fraction` of each class (rounded, at least one when the class
    /// is non-empty), drawn without replacement and returned in sorted order.
    pub fn per_class_fraction(&self, fraction: f64, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("fraction {fraction} outside (0, 1]")));
        }
        let mut out = Vec::new();
        for members in &self.by_class {
            let take = ((members.len() as f64 * fraction).round() as usize)
                .clamp(1.min(members.len()), members.len());
            let mut m = members.clone();
            m.shuffle(rng);
            out.extend_from_slice(&m[..take]);
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Indices of up to `per_class` samples per class, drawn without replacement, sorted.
    pub fn per_class_limit(&self, per_class: usize, rng: &mut impl Rng) -> Vec<usize> {
        let mut out = Vec::new();
        for members in &self.by_class {
            let mut m = members.clone();
            m.shuffle(rng);
            out.extend_from_slice(&m[..per_class.min(m.len())]);
        }
        out.sort_unstable();
        out
    }
}
