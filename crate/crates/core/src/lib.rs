//! Spiking latent replay for online class-incremental learning.
//!
//! A convolutional spiking network is split into a feature extractor and a
//! classifier. After pretraining, the extractor is frozen and its binary
//! spike outputs are stored one bit per element in a reservoir-sampled replay
//! buffer. The classifier trains online on the current mini-batch plus replayed
//! latents, and after the stream ends it consolidates on buffer contents only,
//! with Gaussian noise added to the features.

pub mod data;
pub mod engine;
pub mod error;
pub mod lif;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod replay;
pub mod rng;
pub mod tensor;
pub mod train;

pub use engine::{ExperimentData, ReplayConfig, RunOutcome, Session, StrategyKind};
pub use error::{Error, Result};
pub use lif::{lif_step, surrogate_spike_grad, LifConfig, LifState};
pub use metrics::{Evaluation, MetricsReport};
pub use network::{Inputs, LayerSpec, Model, NetworkSpec, Parameters, RunOptions};
pub use tensor::{SpikeTensor, Tensor};
pub use train::{train_step, LossWeights, MixedBatch, Part};
