//! Layered spiking network: description, parameters and the unrolled
//! forward/backward pass over time.
//!
//! Activations are time-major, `[T, N, ...features]`. Every layer except LIF is
//! stateless in time, so it sees the activation as `T * N` independent samples;
//! LIF layers run the recurrence over the leading axis.

mod kernels;
mod loss;
mod params;
mod spec;

pub use loss::{cross_entropy, rate_mse, LossKind};
pub use params::{Gradients, LayerParams, Parameters};
pub use spec::{
    ConvPadding, LayerSpec, NetworkSpec, NotationOptions, DESK_MNIST_NOTATION, MNIST_NOTATION,
};

use rand::Rng;

use crate::error::{Error, Result};
use crate::lif::{lif_backward_sequence, lif_forward_sequence, LifTrace};
use crate::tensor::{SpikeTensor, Tensor};
use kernels::{BnTrace, ConvGeom};

/// How a pass treats trainable layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Batch statistics and dropout for non-frozen layers.
    pub train: bool,
    /// Replace the spike step by its smooth surrogate. Only meaningful for
    /// gradient verification; outputs are no longer binary.
    pub relaxed: bool,
}

impl RunOptions {
    pub const EVAL: Self = Self {
        train: false,
        relaxed: false,
    };
    pub const TRAIN: Self = Self {
        train: true,
        relaxed: false,
    };
}

/// Either raw input sequences or latents already past the split.
#[derive(Clone, Copy, Debug)]
pub enum Inputs<'a> {
    /// `[T, N, ...input_shape]`.
    Raw(&'a Tensor),
    /// `[T, N, ...latent_shape]`, binary or noise-perturbed.
    Latent(&'a Tensor),
}

impl Inputs<'_> {
    fn tensor(&self) -> &Tensor {
        match self {
            Inputs::Raw(t) | Inputs::Latent(t) => t,
        }
    }

    pub fn batch(&self) -> usize {
        self.tensor().shape().get(1).copied().unwrap_or(0)
    }
}

enum Trace {
    Stateless,
    Conv { input: Vec<f64> },
    Bn(BnTrace),
    Lif(LifTrace),
    Pool { argmax: Vec<u32>, input_len: usize },
    Dropout { mask: Vec<f64> },
    Fc { input: Vec<f64> },
}

struct Pass {
    /// Output activation, `[steps, batch, features]`.
    data: Vec<f64>,
    /// Sequence length entering the pass.
    input_steps: usize,
    traces: Vec<Trace>,
    /// `(layer, mean, var)` running statistics produced in training mode.
    bn_updates: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Model {
    pub spec: NetworkSpec,
    pub params: Parameters,
}

impl Model {
    pub fn new(spec: NetworkSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let params = Parameters::init(&spec, rng)?;
        Ok(Self { spec, params })
    }

    pub fn from_parts(spec: NetworkSpec, params: Parameters) -> Result<Self> {
        spec.validate()?;
        params.check_against(&spec)?;
        Ok(Self { spec, params })
    }

    pub fn freeze_extractor(&mut self) {
        self.params.freeze_below(self.spec.split);
    }

    pub fn extractor_bytes(&self) -> Vec<u8> {
        self.params.snapshot_bytes(0..self.spec.split)
    }

    pub fn classifier_bytes(&self) -> Vec<u8> {
        self.params
            .snapshot_bytes(self.spec.split..self.spec.layers.len())
    }

    /// Runs the whole network in inference mode.
    ///
    /// Returns class scores `[N, classes]` and the binary latent at the split,
    /// `[T, N, ...latent_shape]`.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, SpikeTensor)> {
        let latent = self.extract(input)?;
        let scores = self.classify_from_latent(latent.as_tensor())?;
        Ok((scores, latent))
    }

    /// Runs the feature extractor in inference mode.
    pub fn extract(&self, input: &Tensor) -> Result<SpikeTensor> {
        let (steps, batch) = self.check_input(input, &self.spec.input_shape)?;
        let pass = self.run(
            0..self.spec.split,
            input.data().to_vec(),
            steps,
            batch,
            RunOptions::EVAL,
            None,
        )?;
        let mut shape = vec![steps, batch];
        shape.extend(self.spec.latent_shape()?);
        let t = Tensor::new(shape, pass.data)?;
        if !t.is_binary() {
            return Err(Error::Network("latent at the split is not binary".into()));
        }
        Ok(SpikeTensor::from_tensor_unchecked(t))
    }

    /// Applies the classifier to `[T, N, ...latent_shape]` features, which may be real-valued.
    pub fn classify_from_latent(&self, latent: &Tensor) -> Result<Tensor> {
        let (steps, batch) = self.check_input(latent, &self.spec.latent_shape()?)?;
        let pass = self.run(
            self.spec.split..self.spec.layers.len(),
            latent.data().to_vec(),
            steps,
            batch,
            RunOptions::EVAL,
            None,
        )?;
        Tensor::new(vec![batch, self.spec.num_classes], pass.data)
    }

    /// Mean cross-entropy of the batch and its gradient with respect to every
    /// non-frozen parameter. In training mode batch-norm running statistics of
    /// non-frozen layers are updated.
    pub fn loss_and_grad(
        &mut self,
        inputs: Inputs<'_>,
        labels: &[usize],
        opts: RunOptions,
        rng: &mut impl Rng,
    ) -> Result<(f64, Gradients)> {
        let n_layers = self.spec.layers.len();
        let (start, feat) = match inputs {
            Inputs::Raw(_) => (0, self.spec.input_shape.clone()),
            Inputs::Latent(_) => (self.spec.split, self.spec.latent_shape()?),
        };
        let x = inputs.tensor();
        let (steps, batch) = self.check_input(x, &feat)?;
        if batch == 0 {
            return Err(Error::EmptyBatch);
        }
        if labels.len() != batch {
            return Err(Error::ShapeMismatch {
                expected: vec![batch],
                actual: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.spec.num_classes) {
            return Err(Error::Config(format!("label {bad} out of range")));
        }
        let lowest = (start..n_layers)
            .find(|&i| self.params.is_trainable(i) && !self.params.layers[i].trainable().is_empty())
            .ok_or(Error::AllFrozen)?;

        // frozen prefix without traces, then the trainable suffix with traces
        let mut data = x.data().to_vec();
        if lowest > start {
            data = self
                .run(start..lowest, data, steps, batch, opts, Some(&mut *rng))?
                .data;
        }
        let pass = self.run_traced(lowest..n_layers, data, steps, batch, opts, rng)?;
        let classes = self.spec.num_classes;
        let (loss, dscores) = self.spec.loss.evaluate(&pass.data, labels, classes);
        for (layer, mean, var) in pass.bn_updates.iter() {
            if let LayerParams::BatchNorm {
                running_mean,
                running_var,
                ..
            } = &mut self.params.layers[*layer]
            {
                running_mean.data_mut().copy_from_slice(mean);
                running_var.data_mut().copy_from_slice(var);
            }
        }
        let grads = self.backward(lowest, pass, dscores, batch)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite("loss_and_grad"));
        }
        Ok((loss, grads))
    }

    fn check_input(&self, x: &Tensor, feat: &[usize]) -> Result<(usize, usize)> {
        let shape = x.shape();
        if shape.len() != feat.len() + 2 || &shape[2..] != feat {
            let mut expected = vec![0, 0];
            expected.extend_from_slice(feat);
            return Err(Error::ShapeMismatch {
                expected,
                actual: shape.to_vec(),
            });
        }
        if shape[0] == 0 {
            return Err(Error::Config("sequence length must be at least 1".into()));
        }
        Ok((shape[0], shape[1]))
    }

    fn run(
        &self,
        range: std::ops::Range<usize>,
        data: Vec<f64>,
        steps: usize,
        batch: usize,
        opts: RunOptions,
        rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<Pass> {
        self.run_inner(range, data, steps, batch, opts, rng, false)
    }

    fn run_traced(
        &self,
        range: std::ops::Range<usize>,
        data: Vec<f64>,
        steps: usize,
        batch: usize,
        opts: RunOptions,
        rng: &mut impl Rng,
    ) -> Result<Pass> {
        self.run_inner(range, data, steps, batch, opts, Some(rng), true)
    }

    #[allow(clippy::too_many_arguments)]
    fn run_inner(
        &self,
        range: std::ops::Range<usize>,
        mut data: Vec<f64>,
        mut steps: usize,
        batch: usize,
        opts: RunOptions,
        mut rng: Option<&mut dyn rand::RngCore>,
        keep: bool,
    ) -> Result<Pass> {
        let shapes = self.spec.shapes()?;
        let input_steps = steps;
        let mut traces = Vec::new();
        let mut bn_updates = Vec::new();
        for i in range {
            let layer = &self.spec.layers[i];
            let input_shape = &shapes[i];
            let b = steps * batch;
            let train = opts.train && self.params.is_trainable(i);
            let (out, trace) = match (layer, &self.params.layers[i]) {
                (
                    &LayerSpec::Conv {
                        channels,
                        kernel,
                        stride,
                        padding,
                    },
                    LayerParams::Conv { weight, bias },
                ) => {
                    let g = ConvGeom {
                        cin: input_shape[0],
                        h: input_shape[1],
                        w: input_shape[2],
                        cout: channels,
                        k: kernel,
                        stride,
                        pad: padding,
                    };
                    let y = kernels::conv_forward(&g, b, &data, weight.data(), bias.data());
                    (y, Trace::Conv { input: data })
                }
                (
                    LayerSpec::BatchNorm,
                    LayerParams::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    },
                ) => {
                    let c = input_shape[0];
                    let s: usize = input_shape[1..].iter().product();
                    let mut rm = running_mean.data().to_vec();
                    let mut rv = running_var.data().to_vec();
                    let (y, tr) = kernels::bn_forward(
                        b,
                        c,
                        s,
                        &data,
                        gamma.data(),
                        beta.data(),
                        &mut rm,
                        &mut rv,
                        train,
                    );
                    if train {
                        bn_updates.push((i, rm, rv));
                    }
                    (y, Trace::Bn(tr))
                }
                (LayerSpec::Lif, _) => {
                    let tr = lif_forward_sequence(&data, steps, &self.spec.lif, opts.relaxed);
                    (tr.o.clone(), Trace::Lif(tr))
                }
                (&LayerSpec::MaxPool { size }, _) => {
                    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
                    let (y, argmax) = kernels::maxpool_forward(b, c, h, w, size, &data);
                    (
                        y,
                        Trace::Pool {
                            argmax,
                            input_len: data.len(),
                        },
                    )
                }
                (&LayerSpec::Dropout { rate }, _) => {
                    if train && rate > 0.0 {
                        let rng = rng
                            .as_deref_mut()
                            .ok_or_else(|| Error::Config("dropout needs an rng".into()))?;
                        let per: usize = input_shape.iter().product();
                        let keep_scale = 1.0 / (1.0 - rate);
                        // one mask per sample, shared over time
                        let mask: Vec<f64> = (0..batch * per)
                            .map(|_| {
                                if rng.gen::<f64>() < rate {
                                    0.0
                                } else {
                                    keep_scale
                                }
                            })
                            .collect();
                        let mut y = data;
                        for chunk in y.chunks_mut(batch * per) {
                            for (v, m) in chunk.iter_mut().zip(&mask) {
                                *v *= m;
                            }
                        }
                        (y, Trace::Dropout { mask })
                    } else {
                        (data, Trace::Stateless)
                    }
                }
                (&LayerSpec::Fc { width }, LayerParams::Fc { weight, bias }) => {
                    let fin: usize = input_shape.iter().product();
                    let y = kernels::fc_forward(b, fin, width, &data, weight.data(), bias.data());
                    (y, Trace::Fc { input: data })
                }
                (&LayerSpec::Voting { group }, _) => {
                    (kernels::vote_forward(&data, group), Trace::Stateless)
                }
                (LayerSpec::TemporalAverage, _) => {
                    let y = kernels::time_mean_forward(&data, steps);
                    steps = 1;
                    (y, Trace::Stateless)
                }
                _ => {
                    return Err(Error::Network(format!(
                        "layer {i} parameters do not match its kind"
                    )))
                }
            };
            data = out;
            if keep {
                traces.push(trace);
            }
        }
        Ok(Pass {
            data,
            input_steps,
            traces,
            bn_updates,
        })
    }

    fn backward(
        &self,
        lowest: usize,
        pass: Pass,
        dscores: Vec<f64>,
        batch: usize,
    ) -> Result<Gradients> {
        let shapes = self.spec.shapes()?;
        let n_layers = self.spec.layers.len();
        let mut grads = Gradients::empty(n_layers);
        let mut g = dscores;
        let full_steps = pass.input_steps;
        let mut steps = 1;
        for (offset, trace) in pass.traces.into_iter().enumerate().rev() {
            let i = lowest + offset;
            let need_input = i > lowest;
            let input_shape = &shapes[i];
            let b = steps * batch;
            let layer = &self.spec.layers[i];
            let trainable = self.params.is_trainable(i);
            let (gin, pgrads): (Option<Vec<f64>>, Option<Vec<Tensor>>) =
                match (layer, &self.params.layers[i], trace) {
                    (LayerSpec::TemporalAverage, _, _) => {
                        steps = full_steps;
                        (Some(kernels::time_mean_backward(&g, steps)), None)
                    }
                    (&LayerSpec::Voting { group }, _, _) => {
                        (Some(kernels::vote_backward(&g, group)), None)
                    }
                    (
                        &LayerSpec::Fc { width },
                        LayerParams::Fc { weight, .. },
                        Trace::Fc { input },
                    ) => {
                        let fin: usize = input_shape.iter().product();
                        let (gx, gw, gb) = kernels::fc_backward(
                            b,
                            fin,
                            width,
                            &input,
                            weight.data(),
                            &g,
                            need_input,
                        );
                        (
                            gx,
                            trainable.then(|| {
                                vec![
                                    Tensor::new(vec![width, fin], gw).expect("fc grad shape"),
                                    Tensor::new(vec![width], gb).expect("fc grad shape"),
                                ]
                            }),
                        )
                    }
                    (_, _, Trace::Dropout { mask }) => {
                        let mut gx = g;
                        for chunk in gx.chunks_mut(mask.len()) {
                            for (v, m) in chunk.iter_mut().zip(&mask) {
                                *v *= m;
                            }
                        }
                        (Some(gx), None)
                    }
                    (LayerSpec::Dropout { .. }, _, _) => (Some(g), None),
                    (_, _, Trace::Pool { argmax, input_len }) => (
                        Some(kernels::maxpool_backward(input_len, &argmax, &g)),
                        None,
                    ),
                    (LayerSpec::Lif, _, Trace::Lif(tr)) => (
                        Some(lif_backward_sequence(&tr, &g, steps, &self.spec.lif)),
                        None,
                    ),
                    (LayerSpec::BatchNorm, LayerParams::BatchNorm { gamma, .. }, Trace::Bn(tr)) => {
                        let c = input_shape[0];
                        let s: usize = input_shape[1..].iter().product();
                        let (gx, gg, gbeta) =
                            kernels::bn_backward(b, c, s, &tr, gamma.data(), &g, need_input);
                        (
                            gx,
                            trainable.then(|| {
                                vec![
                                    Tensor::new(vec![c], gg).expect("bn grad shape"),
                                    Tensor::new(vec![c], gbeta).expect("bn grad shape"),
                                ]
                            }),
                        )
                    }
                    (
                        &LayerSpec::Conv {
                            channels,
                            kernel,
                            stride,
                            padding,
                        },
                        LayerParams::Conv { weight, .. },
                        Trace::Conv { input },
                    ) => {
                        let geom = ConvGeom {
                            cin: input_shape[0],
                            h: input_shape[1],
                            w: input_shape[2],
                            cout: channels,
                            k: kernel,
                            stride,
                            pad: padding,
                        };
                        let (gx, gw, gb) =
                            kernels::conv_backward(&geom, b, &input, weight.data(), &g, need_input);
                        (
                            gx,
                            trainable.then(|| {
                                vec![
                                    Tensor::new(weight.shape().to_vec(), gw)
                                        .expect("conv grad shape"),
                                    Tensor::new(vec![channels], gb).expect("conv grad shape"),
                                ]
                            }),
                        )
                    }
                    _ => return Err(Error::Network(format!("no backward rule for layer {i}"))),
                };
            if pgrads.is_some() {
                grads.layers[i] = pgrads;
            }
            match gin {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lif::LifConfig;
    use crate::rng::seeded;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec::from_notation(
            "{4C3-BN-MP}*2||DP-FC16-DP-Voting-AP",
            &[1, 8, 8],
            3,
            LifConfig::default(),
            NotationOptions {
                vote_group: 2,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_input_gives_zero_latent() {
        let model = Model::new(tiny_spec(), &mut seeded(1)).unwrap();
        let x = Tensor::zeros(&[3, 2, 1, 8, 8]);
        let (scores, latent) = model.forward(&x).unwrap();
        assert_eq!(scores.shape(), &[2, 3]);
        // batch norm with fresh running stats maps 0 -> bias terms, which sit
        // below threshold at initialisation scale
        assert_eq!(latent.shape(), &[3, 2, 4, 2, 2]);
        assert!(latent.as_tensor().is_binary());
    }

    #[test]
    fn forward_equals_classify_of_latent() {
        let model = Model::new(tiny_spec(), &mut seeded(2)).unwrap();
        let mut rng = seeded(3);
        let data: Vec<f64> = (0..4 * 2 * 64).map(|_| rng.gen_range(0.0..3.0)).collect();
        let x = Tensor::new(vec![4, 2, 1, 8, 8], data).unwrap();
        let (scores, latent) = model.forward(&x).unwrap();
        let again = model.classify_from_latent(latent.as_tensor()).unwrap();
        assert_eq!(scores, again);
    }

    #[test]
    fn frozen_extractor_gets_no_gradient() {
        let mut model = Model::new(tiny_spec(), &mut seeded(4)).unwrap();
        model.freeze_extractor();
        let x = Tensor::full(&[2, 2, 1, 8, 8], 1.0);
        let (_, g) = model
            .loss_and_grad(Inputs::Raw(&x), &[0, 1], RunOptions::TRAIN, &mut seeded(5))
            .unwrap();
        for (i, l) in g.layers.iter().enumerate() {
            assert_eq!(
                l.is_some(),
                i >= model.spec.split && !model.params.layers[i].trainable().is_empty()
            );
        }
    }

    #[test]
    fn all_frozen_is_an_error() {
        let mut model = Model::new(tiny_spec(), &mut seeded(4)).unwrap();
        model.params.freeze_below(usize::MAX);
        let x = Tensor::full(&[2, 1, 1, 8, 8], 1.0);
        let r = model.loss_and_grad(Inputs::Raw(&x), &[0], RunOptions::TRAIN, &mut seeded(5));
        assert!(matches!(r, Err(Error::AllFrozen)));
    }

    #[test]
    fn cross_entropy_of_uniform_scores() {
        let (l, g) = cross_entropy(&[0.0; 4], &[1, 0], 2);
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert_eq!(g, vec![0.25, -0.25, -0.25, 0.25]);
    }
}
