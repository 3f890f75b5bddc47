#![allow(dead_code)]

use spikereplay_core::network::{Inputs, Model, RunOptions};
use spikereplay_core::rng::seeded;

pub struct GradCheck {
    pub coordinates: usize,
    pub within_tolerance: usize,
    pub worst: f64,
}

impl GradCheck {
    pub fn fraction(&self) -> f64 {
        self.within_tolerance as f64 / self.coordinates as f64
    }
}

/// Central finite differences over every trainable scalar, compared with the
/// analytic gradient. Independent of the backward pass: it only calls the
/// forward loss.
pub fn finite_difference_check(
    model: &Model,
    inputs: Inputs<'_>,
    labels: &[usize],
    opts: RunOptions,
    step: f64,
    rel_tol: f64,
) -> GradCheck {
    let mut probe = model.clone();
    let (_, analytic) = probe
        .loss_and_grad(inputs, labels, opts, &mut seeded(0))
        .unwrap();
    let loss_at = |m: &Model| -> f64 {
        let mut m = m.clone();
        m.loss_and_grad(inputs, labels, opts, &mut seeded(0))
            .unwrap()
            .0
    };
    let mut report = GradCheck {
        coordinates: 0,
        within_tolerance: 0,
        worst: 0.0,
    };
    for layer in 0..model.params.layers.len() {
        let Some(grads) = &analytic.layers[layer] else {
            continue;
        };
        for (t, g) in grads.iter().enumerate() {
            for idx in 0..g.len() {
                let mut plus = model.clone();
                plus.params.layers[layer].trainable_mut()[t].data_mut()[idx] += step;
                let mut minus = model.clone();
                minus.params.layers[layer].trainable_mut()[t].data_mut()[idx] -= step;
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
                let a = g.data()[idx];
                let scale = a.abs().max(numeric.abs());
                let rel = if scale < 1e-10 {
                    0.0
                } else {
                    (a - numeric).abs() / scale
                };
                report.coordinates += 1;
                if rel <= rel_tol {
                    report.within_tolerance += 1;
                }
                report.worst = report.worst.max(rel);
            }
        }
    }
    report
}
