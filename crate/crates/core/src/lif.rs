//! Leaky integrate-and-fire dynamics.
//!
//! The discrete update is `u[t] = a[t] * u[t-1] + k * I[t]` with `k = dt / tau`,
//! where the decay `a[t]` is `1 - k` unless the neuron fired at `t - 1`, in which
//! case it is `0` and the previous potential is wiped. A spike is emitted when
//! `u[t] >= v_th`. The resting potential is fixed at zero.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::tensor::{SpikeTensor, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifConfig {
    pub tau: f64,
    pub dt: f64,
    pub v_th: f64,
    /// Sharpness of the arctan surrogate used for spike derivatives.
    pub surrogate_alpha: f64,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            dt: 1.0,
            v_th: 1.0,
            surrogate_alpha: 2.0,
        }
    }
}

impl LifConfig {
    pub const V_REST: f64 = 0.0;

    pub fn validate(&self) -> Result<()> {
        let ratio = self.dt / self.tau;
        if !(self.tau > 0.0 && self.dt > 0.0 && ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::Config(format!(
                "LIF requires tau > 0, dt > 0 and 0 < dt/tau <= 1 (tau={}, dt={})",
                self.tau, self.dt
            )));
        }
        if !(self.v_th > Self::V_REST) {
            return Err(Error::Config(format!(
                "LIF threshold {} must exceed the resting potential",
                self.v_th
            )));
        }
        if !(self.surrogate_alpha > 0.0) {
            return Err(Error::Config("surrogate_alpha must be positive".into()));
        }
        Ok(())
    }

    /// `dt / tau`, the input gain of the discrete update.
    pub fn gain(&self) -> f64 {
        self.dt / self.tau
    }

    pub fn leak(&self) -> f64 {
        1.0 - self.dt / self.tau
    }
}

/// Membrane potentials and last outputs of a population.
#[derive(Clone, Debug, PartialEq)]
pub struct LifState {
    pub u: Tensor,
    pub o_prev: SpikeTensor,
}

impl LifState {
    pub fn rest(shape: &[usize]) -> Self {
        Self {
            u: Tensor::zeros(shape),
            o_prev: SpikeTensor::zeros(shape),
        }
    }

    pub fn new(u: Tensor, o_prev: SpikeTensor) -> Result<Self> {
        ensure_shape(u.shape(), o_prev.shape())?;
        Ok(Self { u, o_prev })
    }
}

/// One neuron update; returns the new potential (before reset) and whether it fired.
#[inline]
pub fn neuron_step(u: f64, fired_last: bool, input: f64, cfg: &LifConfig) -> (f64, bool) {
    let alpha = if fired_last {
        0.0
    } else {
        1.0 - cfg.dt / cfg.tau
    };
    let u_new = alpha * u + cfg.dt / cfg.tau * input;
    (u_new, u_new >= cfg.v_th)
}

/// Advances a population by one time step.
///
/// The returned state holds the reset potential (`v_rest`) for neurons that fired.
pub fn lif_step(
    state: &LifState,
    input: &Tensor,
    cfg: &LifConfig,
) -> Result<(SpikeTensor, LifState)> {
    ensure_shape(state.u.shape(), input.shape())?;
    ensure_shape(state.u.shape(), state.o_prev.shape())?;
    let n = input.len();
    let mut spikes = vec![0.0; n];
    let mut next_u = vec![0.0; n];
    let o_prev = state.o_prev.as_tensor().data();
    for i in 0..n {
        let (u, fired) = neuron_step(state.u.data()[i], o_prev[i] == 1.0, input.data()[i], cfg);
        if fired {
            spikes[i] = 1.0;
            next_u[i] = LifConfig::V_REST;
        } else {
            next_u[i] = u;
        }
    }
    let shape = input.shape().to_vec();
    let spikes = SpikeTensor::from_tensor_unchecked(Tensor::new(shape.clone(), spikes)?);
    let next = LifState {
        u: Tensor::new(shape, next_u)?,
        o_prev: spikes.clone(),
    };
    Ok((spikes, next))
}

/// Arctan surrogate for the derivative of the Heaviside step at `u - v_th`.
///
/// `alpha / 2 / (1 + (pi/2 * alpha * x)^2)`: symmetric, peaked at the threshold,
/// unit integral over the real line.
pub fn surrogate_spike_grad(u: f64, cfg: &LifConfig) -> f64 {
    let x = u - cfg.v_th;
    let a = cfg.surrogate_alpha;
    let s = PI / 2.0 * a * x;
    a / 2.0 / (1.0 + s * s)
}

/// Antiderivative of [`surrogate_spike_grad`], a smooth stand-in for the step.
pub fn surrogate_spike(u: f64, cfg: &LifConfig) -> f64 {
    let x = u - cfg.v_th;
    (PI / 2.0 * cfg.surrogate_alpha * x).atan() / PI + 0.5
}

/// Potentials recorded by [`lif_forward_sequence`] for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct LifTrace {
    /// `[T, M]` potentials before reset.
    pub u: Vec<f64>,
    /// `[T, M]` outputs.
    pub o: Vec<f64>,
}

/// Runs `steps` updates over a `[T, M]` block of inputs, starting at rest.
///
/// With `relaxed` the step function is replaced by [`surrogate_spike`], which makes
/// the whole unrolled computation smooth; gradient checks use this mode.
pub(crate) fn lif_forward_sequence(
    input: &[f64],
    steps: usize,
    cfg: &LifConfig,
    relaxed: bool,
) -> LifTrace {
    let m = input.len() / steps;
    let k = cfg.gain();
    let c = cfg.leak();
    let mut u = vec![0.0; input.len()];
    let mut o = vec![0.0; input.len()];
    for t in 0..steps {
        for j in 0..m {
            let idx = t * m + j;
            let prev = if t == 0 {
                0.0
            } else {
                c * (1.0 - o[idx - m]) * u[idx - m]
            };
            let v = prev + k * input[idx];
            u[idx] = v;
            o[idx] = if relaxed {
                surrogate_spike(v, cfg)
            } else if v >= cfg.v_th {
                1.0
            } else {
                0.0
            };
        }
    }
    LifTrace { u, o }
}

/// Backpropagates `grad_out` (`[T, M]`, gradient w.r.t. the outputs) through the
/// unrolled dynamics, including the path through the reset gate.
pub(crate) fn lif_backward_sequence(
    trace: &LifTrace,
    grad_out: &[f64],
    steps: usize,
    cfg: &LifConfig,
) -> Vec<f64> {
    let m = grad_out.len() / steps;
    let k = cfg.gain();
    let c = cfg.leak();
    let mut grad_in = vec![0.0; grad_out.len()];
    // gradient w.r.t. u at t+1, carried backwards
    let mut gu_next = vec![0.0; m];
    for t in (0..steps).rev() {
        for j in 0..m {
            let idx = t * m + j;
            let u = trace.u[idx];
            let mut go = grad_out[idx];
            let mut gu = 0.0;
            if t + 1 < steps {
                // u[t+1] = c * (1 - o[t]) * u[t] + k * x[t+1]
                let g = gu_next[j];
                go -= c * u * g;
                gu += c * (1.0 - trace.o[idx]) * g;
            }
            gu += go * surrogate_spike_grad(u, cfg);
            gu_next[j] = gu;
            grad_in[idx] = gu * k;
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> LifConfig {
        LifConfig::default()
    }

    fn step1(u: f64, o: f64, i: f64) -> (f64, f64, f64) {
        let state = LifState::new(
            Tensor::scalar(u),
            SpikeTensor::try_from(Tensor::scalar(o)).unwrap(),
        )
        .unwrap();
        let (s, next) = lif_step(&state, &Tensor::scalar(i), &cfg()).unwrap();
        let (raw, _) = neuron_step(u, o == 1.0, i, &cfg());
        (raw, s.as_tensor().data()[0], next.u.data()[0])
    }

    #[test]
    fn zero_dynamics_stay_at_rest() {
        assert_eq!(step1(0.0, 0.0, 0.0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn spike_wipes_previous_potential() {
        let (u, s, _) = step1(0.7, 1.0, 1.0);
        assert_eq!(u, 0.5);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn leak_and_integrate_by_hand() {
        let (u, s, stored) = step1(0.8, 0.0, 1.0);
        assert!((u - 0.9).abs() < 1e-15);
        assert_eq!(s, 0.0);
        assert_eq!(stored, u);
    }

    #[test]
    fn firing_resets_stored_potential() {
        let (u, s, stored) = step1(0.0, 0.0, 2.5);
        assert_eq!(u, 1.25);
        assert_eq!(s, 1.0);
        assert_eq!(stored, 0.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let state = LifState::rest(&[2]);
        assert!(matches!(
            lif_step(&state, &Tensor::zeros(&[3]), &cfg()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let bad = LifConfig { dt: 3.0, ..cfg() };
        assert!(bad.validate().is_err());
        let bad = LifConfig { v_th: 0.0, ..cfg() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn surrogate_shape() {
        let c = cfg();
        let peak = surrogate_spike_grad(c.v_th, &c);
        for d in [0.01, 0.3, 1.0, 4.0] {
            let lo = surrogate_spike_grad(c.v_th - d, &c);
            let hi = surrogate_spike_grad(c.v_th + d, &c);
            assert_eq!(lo, hi);
            assert!(lo < peak);
        }
        // alpha = 2: 1 / (1 + (pi * 20)^2) ~ 2.5e-4
        assert!(surrogate_spike_grad(c.v_th + 20.0, &c) < 1e-3);
        assert!(surrogate_spike_grad(c.v_th - 20.0, &c) < 1e-3);
    }

    #[test]
    fn surrogate_integrates_to_one() {
        // trapezoid on [-L, L] plus the analytic arctan tails
        let c = cfg();
        let (lo, hi, n) = (-200.0, 200.0, 400_000);
        let h = (hi - lo) / n as f64;
        let mut s =
            0.5 * (surrogate_spike_grad(c.v_th + lo, &c) + surrogate_spike_grad(c.v_th + hi, &c));
        for i in 1..n {
            s += surrogate_spike_grad(c.v_th + lo + i as f64 * h, &c);
        }
        let tails = 2.0 * (0.5 - (PI / 2.0 * c.surrogate_alpha * hi).atan() / PI);
        assert!((s * h + tails - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sequence_matches_repeated_steps() {
        let c = cfg();
        let inputs = [0.4, 2.2, 0.3, 1.9, 2.5, 0.0];
        let trace = lif_forward_sequence(&inputs, 6, &c, false);
        let mut state = LifState::rest(&[1]);
        for (t, &x) in inputs.iter().enumerate() {
            let (s, next) = lif_step(&state, &Tensor::scalar(x), &c).unwrap();
            assert_eq!(s.as_tensor().data()[0], trace.o[t]);
            state = next;
        }
    }

    #[test]
    fn relaxed_backward_matches_finite_differences() {
        let c = cfg();
        let x = [0.9, 1.7, -0.2, 1.1, 0.6, 2.0, 0.4, 1.5];
        let steps = 4;
        let w = [0.3, -1.2, 0.8, 0.5, 1.1, -0.4, 0.9, 0.2];
        let loss = |inp: &[f64]| -> f64 {
            let tr = lif_forward_sequence(inp, steps, &c, true);
            tr.o.iter().zip(&w).map(|(o, w)| o * w).sum()
        };
        let tr = lif_forward_sequence(&x, steps, &c, true);
        let g = lif_backward_sequence(&tr, &w, steps, &c);
        let h = 1e-5;
        for i in 0..x.len() {
            let mut p = x;
            p[i] += h;
            let mut m = x;
            m[i] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "{i}: fd {fd} vs {}", g[i]);
        }
    }
}
