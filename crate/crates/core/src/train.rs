//! One gradient step on the mixed current/replay objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Gradients, Inputs, Model, RunOptions};
use crate::optim::Optimizer;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub current: f64,
    /// λ, the weight of the replay term.
    pub replay: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            current: 1.0,
            replay: 1.0,
        }
    }
}

/// A labelled group of samples.
#[derive(Clone, Copy, Debug)]
pub struct Part<'a> {
    pub inputs: Inputs<'a>,
    pub labels: &'a [usize],
}

/// Current-task samples and replayed samples; either may be absent.
#[derive(Clone, Copy, Debug, Default)]
pub struct MixedBatch<'a> {
    pub current: Option<Part<'a>>,
    pub replay: Option<Part<'a>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub current: Option<f64>,
    pub replay: Option<f64>,
}

/// Loss `w_c * L_curr + w_r * L_replay` and its gradient, each term being the
/// mean cross-entropy of its part.
pub fn mixed_loss_and_grad(
    model: &mut Model,
    batch: MixedBatch<'_>,
    weights: LossWeights,
    opts: RunOptions,
    rng: &mut impl Rng,
) -> Result<(StepLoss, Gradients)> {
    let mut grads = Gradients::empty(model.spec.layers.len());
    let mut total = 0.0;
    let mut losses = [None, None];
    let parts = [
        (batch.current, weights.current),
        (batch.replay, weights.replay),
    ];
    for (slot, (part, w)) in parts.into_iter().enumerate() {
        let Some(part) = part else { continue };
        if part.inputs.batch() == 0 {
            continue;
        }
        let (loss, g) = model.loss_and_grad(part.inputs, part.labels, opts, rng)?;
        grads.accumulate(&g, w);
        total += w * loss;
        losses[slot] = Some(loss);
    }
    if losses.iter().all(Option::is_none) {
        return Err(Error::EmptyBatch);
    }
    Ok((
        StepLoss {
            total,
            current: losses[0],
            replay: losses[1],
        },
        grads,
    ))
}

/// Computes the mixed loss in training mode and applies one optimizer step to
/// the non-frozen parameters.
pub fn train_step(
    model: &mut Model,
    optimizer: &mut Optimizer,
    batch: MixedBatch<'_>,
    weights: LossWeights,
    rng: &mut impl Rng,
) -> Result<StepLoss> {
    let (loss, grads) = mixed_loss_and_grad(model, batch, weights, RunOptions::TRAIN, rng)?;
    optimizer.step(&mut model.params, &grads);
    if !loss.total.is_finite() {
        return Err(Error::NonFinite("train_step"));
    }
    Ok(loss)
}
