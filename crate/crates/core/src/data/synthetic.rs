use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

use super::LabeledDataset;

/// Gaussian-blob class prototypes with additive pixel noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub class_count: usize,
    pub per_class: usize,
    /// `[C, H, W]`.
    pub shape: Vec<usize>,
    pub blobs_per_class: usize,
    /// Standard deviation of the per-pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            class_count: 10,
            per_class: 100,
            shape: vec![1, 16, 16],
            blobs_per_class: 3,
            noise: 0.1,
            seed: 0,
        }
    }
}

pub fn make_synthetic(
    class_count: usize,
    per_class: usize,
    shape: &[usize],
    seed: u64,
) -> Result<LabeledDataset> {
    SyntheticSpec {
        class_count,
        per_class,
        shape: shape.to_vec(),
        seed,
        ..Default::default()
    }
    .generate()
}

impl SyntheticSpec {
    pub fn generate(&self) -> Result<LabeledDataset> {
        Ok(self.generate_split(0)?.0)
    }

    /// Train set of `per_class` and test set of `test_per_class` samples per class,
    /// both drawn around the same class prototypes.
    pub fn generate_split(
        &self,
        test_per_class: usize,
    ) -> Result<(LabeledDataset, LabeledDataset)> {
        let [c, h, w] = self.shape[..] else {
            return Err(Error::Config(format!(
                "synthetic shape {:?} is not [C, H, W]",
                self.shape
            )));
        };
        if self.class_count == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::Config(
                "synthetic dataset needs positive sizes".into(),
            ));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("synthetic noise must be non-negative".into()));
        }
        let mut rng = seeded(self.seed);
        let width = (h.min(w) as f64 / 6.0).max(0.75);
        let prototypes: Vec<Vec<f64>> = (0..self.class_count)
            .map(|_| {
                let mut img = vec![0.0; c * h * w];
                for _ in 0..self.blobs_per_class.max(1) {
                    let ch = rng.gen_range(0..c);
                    let cy = rng.gen_range(0.0..h as f64);
                    let cx = rng.gen_range(0.0..w as f64);
                    for y in 0..h {
                        for x in 0..w {
                            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                            img[(ch * h + y) * w + x] += (-d2 / (2.0 * width * width)).exp();
                        }
                    }
                }
                img.iter_mut().for_each(|v| *v = v.min(1.0));
                img
            })
            .collect();
        let noise = Normal::new(0.0, self.noise).map_err(|e| Error::Config(e.to_string()))?;
        let mut draw = |per_class: usize| -> Result<LabeledDataset> {
            let mut samples = Vec::with_capacity(self.class_count * per_class);
            let mut labels = Vec::with_capacity(samples.capacity());
            for _ in 0..per_class {
                for (label, proto) in prototypes.iter().enumerate() {
                    let data = proto
                        .iter()
                        .map(|&p| (p + noise.sample(&mut rng)).clamp(0.0, 1.0))
                        .collect();
                    samples.push(Tensor::new(vec![c, h, w], data)?);
                    labels.push(label);
                }
            }
            LabeledDataset::new(samples, labels, self.class_count)
        };
        let train = draw(self.per_class)?;
        let test = draw(test_per_class)?;
        Ok((train, test))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_determinism() {
        let a = make_synthetic(2, 10, &[1, 8, 8], 5).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a.class_indices(1).len(), 10);
        assert_eq!(a, make_synthetic(2, 10, &[1, 8, 8], 5).unwrap());
        assert_ne!(a, make_synthetic(2, 10, &[1, 8, 8], 6).unwrap());
    }

    #[test]
    fn split_shares_prototypes() {
        let spec = SyntheticSpec {
            class_count: 3,
            per_class: 5,
            shape: vec![1, 8, 8],
            noise: 0.0,
            ..Default::default()
        };
        let (train, test) = spec.generate_split(2).unwrap();
        assert_eq!(train, spec.generate().unwrap());
        assert_eq!(test.len(), 6);
        for i in 0..test.len() {
            assert_eq!(test.sample(i), train.sample(test.labels()[i]));
        }
    }

    #[test]
    fn pixels_in_unit_range() {
        let a = make_synthetic(3, 4, &[2, 6, 6], 1).unwrap();
        for i in 0..a.len() {
            assert!(a.sample(i).data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
