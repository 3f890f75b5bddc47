use serde::{Deserialize, Serialize};

use crate::network::{Gradients, Parameters};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn build(self) -> Optimizer {
        Optimizer {
            config: self,
            moments: Vec::new(),
            steps: 0,
        }
    }
}

/// Optimizer with its per-tensor state.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    /// `(m, v)` per layer per trainable tensor, created on first use.
    moments: Vec<Option<Vec<(Vec<f64>, Vec<f64>)>>>,
    steps: u64,
}

impl Optimizer {
    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    /// Applies one descent step; frozen layers and layers without gradients are skipped.
    pub fn step(&mut self, params: &mut Parameters, grads: &Gradients) {
        self.steps += 1;
        if self.moments.len() < params.layers.len() {
            self.moments.resize(params.layers.len(), None);
        }
        for (i, layer) in params.layers.iter_mut().enumerate() {
            if params.frozen[i] {
                continue;
            }
            let Some(g) = &grads.layers[i] else { continue };
            let tensors = layer.trainable_mut();
            match self.config {
                OptimizerConfig::Sgd { lr } => {
                    for (p, g) in tensors.into_iter().zip(g) {
                        for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                            *w -= lr * d;
                        }
                    }
                }
                OptimizerConfig::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => {
                    let state = self.moments[i].get_or_insert_with(|| {
                        tensors
                            .iter()
                            .map(|t| (vec![0.0; t.len()], vec![0.0; t.len()]))
                            .collect()
                    });
                    let bc1 = 1.0 - beta1.powi(self.steps as i32);
                    let bc2 = 1.0 - beta2.powi(self.steps as i32);
                    for ((p, g), (m, v)) in tensors.into_iter().zip(g).zip(state.iter_mut()) {
                        for (((w, d), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v)
                        {
                            *m = beta1 * *m + (1.0 - beta1) * d;
                            *v = beta2 * *v + (1.0 - beta2) * d * d;
                            *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LayerParams;
    use crate::tensor::Tensor;

    fn one_fc() -> Parameters {
        Parameters {
            layers: vec![LayerParams::Fc {
                weight: Tensor::full(&[1, 2], 1.0),
                bias: Tensor::zeros(&[1]),
            }],
            frozen: vec![false],
        }
    }

    fn grad() -> Gradients {
        Gradients {
            layers: vec![Some(vec![
                Tensor::full(&[1, 2], 2.0),
                Tensor::full(&[1], -1.0),
            ])],
        }
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut p = one_fc();
        OptimizerConfig::Sgd { lr: 0.1 }
            .build()
            .step(&mut p, &grad());
        assert_eq!(p.layers[0].trainable()[0].data(), &[0.8, 0.8]);
        assert_eq!(p.layers[0].trainable()[1].data(), &[0.1]);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        let mut p = one_fc();
        OptimizerConfig::adam(0.01).build().step(&mut p, &grad());
        let w = p.layers[0].trainable()[0].data()[0];
        assert!((w - 0.99).abs() < 1e-6);
    }

    #[test]
    fn frozen_layers_are_untouched() {
        let mut p = one_fc();
        p.frozen[0] = true;
        OptimizerConfig::adam(0.01).build().step(&mut p, &grad());
        assert_eq!(p, {
            let mut q = one_fc();
            q.frozen[0] = true;
            q
        });
    }
}
