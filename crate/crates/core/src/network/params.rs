use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spec::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerParams {
    None,
    Conv {
        weight: Tensor,
        bias: Tensor,
    },
    BatchNorm {
        gamma: Tensor,
        beta: Tensor,
        running_mean: Tensor,
        running_var: Tensor,
    },
    Fc {
        weight: Tensor,
        bias: Tensor,
    },
}

impl LayerParams {
    /// Tensors updated by gradient descent, in a fixed order.
    pub fn trainable(&self) -> Vec<&Tensor> {
        match self {
            LayerParams::None => vec![],
            LayerParams::Conv { weight, bias } | LayerParams::Fc { weight, bias } => {
                vec![weight, bias]
            }
            LayerParams::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
        }
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            LayerParams::None => vec![],
            LayerParams::Conv { weight, bias } | LayerParams::Fc { weight, bias } => {
                vec![weight, bias]
            }
            LayerParams::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
        }
    }
}

/// Per-layer weights with a frozen flag per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub layers: Vec<LayerParams>,
    pub frozen: Vec<bool>,
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

impl Parameters {
    /// Uniform `±1/sqrt(fan_in)` initialisation for weights and biases.
    pub fn init(spec: &NetworkSpec, rng: &mut impl Rng) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let input = &shapes[i];
            layers.push(match *layer {
                LayerSpec::Conv {
                    channels, kernel, ..
                } => {
                    let cin = input[0];
                    let bound = 1.0 / ((cin * kernel * kernel) as f64).sqrt();
                    LayerParams::Conv {
                        weight: uniform(rng, &[channels, cin, kernel, kernel], bound),
                        bias: uniform(rng, &[channels], bound),
                    }
                }
                LayerSpec::Fc { width } => {
                    let fin: usize = input.iter().product();
                    let bound = 1.0 / (fin as f64).sqrt();
                    LayerParams::Fc {
                        weight: uniform(rng, &[width, fin], bound),
                        bias: uniform(rng, &[width], bound),
                    }
                }
                LayerSpec::BatchNorm => {
                    let c = input[0];
                    LayerParams::BatchNorm {
                        gamma: Tensor::full(&[c], 1.0),
                        beta: Tensor::zeros(&[c]),
                        running_mean: Tensor::zeros(&[c]),
                        running_var: Tensor::full(&[c], 1.0),
                    }
                }
                _ => LayerParams::None,
            });
        }
        Ok(Self {
            frozen: vec![false; layers.len()],
            layers,
        })
    }

    /// Draws fresh values for `layers[range]`, leaving the rest untouched.
    pub fn reinit_range(
        &mut self,
        spec: &NetworkSpec,
        range: std::ops::Range<usize>,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let fresh = Self::init(spec, rng)?;
        for i in range {
            self.layers[i] = fresh.layers[i].clone();
        }
        Ok(())
    }

    pub fn freeze_below(&mut self, split: usize) {
        for (i, f) in self.frozen.iter_mut().enumerate() {
            *f = i < split;
        }
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.iter_mut().for_each(|f| *f = false);
    }

    pub fn is_trainable(&self, layer: usize) -> bool {
        !self.frozen[layer]
    }

    pub fn trainable_count(&self) -> usize {
        self.layers
            .iter()
            .zip(&self.frozen)
            .filter(|(_, &f)| !f)
            .flat_map(|(l, _)| l.trainable())
            .map(Tensor::len)
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.trainable())
            .map(Tensor::len)
            .sum()
    }

    /// Raw little-endian bytes of every stored value in `layers[range]`,
    /// including batch-norm running statistics.
    pub fn snapshot_bytes(&self, range: std::ops::Range<usize>) -> Vec<u8> {
        let mut out = Vec::new();
        for layer in &self.layers[range] {
            let tensors: Vec<&Tensor> = match layer {
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => vec![gamma, beta, running_mean, running_var],
                other => other.trainable(),
            };
            for t in tensors {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub(crate) fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layers.len() != spec.layers.len() || self.frozen.len() != spec.layers.len() {
            return Err(Error::Network(format!(
                "parameter set has {} layers, network has {}",
                self.layers.len(),
                spec.layers.len()
            )));
        }
        Ok(())
    }
}

/// Gradients aligned with [`LayerParams::trainable`]; `None` for frozen or
/// parameter-free layers.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<Option<Vec<Tensor>>>,
}

impl Gradients {
    pub fn empty(layers: usize) -> Self {
        Self {
            layers: vec![None; layers],
        }
    }

    /// `self += weight * other`.
    pub fn accumulate(&mut self, other: &Gradients, weight: f64) {
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            let Some(theirs) = theirs else { continue };
            match mine {
                None => {
                    let mut scaled = theirs.clone();
                    scaled.iter_mut().for_each(|t| t.scale(weight));
                    *mine = Some(scaled);
                }
                Some(mine) => {
                    for (a, b) in mine.iter_mut().zip(theirs) {
                        for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                            *x += weight * y;
                        }
                    }
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .flatten()
            .all(Tensor::is_finite)
    }
}
