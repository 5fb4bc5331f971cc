//! First-order optimizers over flat parameter vectors. Adam is the default;
//! plain SGD and Adagrad are kept for optimizer-comparison runs.

use crate::error::{Error, Result};
use crate::scalar::Real;
use ndarray::Array1;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
    Adagrad,
}

/// Per-parameter moment accumulators plus the step counter.
/// `m` is unused by SGD/Adagrad; `v` doubles as the Adagrad accumulator.
#[derive(Debug, Clone)]
pub struct OptimizerState<F> {
    pub(crate) m: Array1<F>,
    pub(crate) v: Array1<F>,
    pub(crate) step: u64,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(len: usize) -> Self {
        Self {
            m: Array1::zeros(len),
            v: Array1::zeros(len),
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &Array1<F> {
        &self.m
    }

    pub fn second_moment(&self) -> &Array1<F> {
        &self.v
    }

    pub(crate) fn from_parts(m: Array1<F>, v: Array1<F>, step: u64) -> Self {
        Self { m, v, step }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

fn check_shapes<F: Real>(params: &[F], grads: &[F], state: &OptimizerState<F>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::shape(
            "optimizer step",
            format!("{} parameters", params.len()),
            format!("{} gradients, {} accumulators", grads.len(), state.len()),
        ));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradients"));
    }
    Ok(())
}

/// Standard Adam with bias correction:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
/// `p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)`.
pub fn adam_step<F: Real>(
    params: &mut [F],
    grads: &[F],
    state: &mut OptimizerState<F>,
    hyper: &AdamHyper,
) -> Result<()> {
    check_shapes(params, grads, state)?;
    state.step += 1;
    let t = state.step as i32;
    let b1 = F::from_f64(hyper.beta1);
    let b2 = F::from_f64(hyper.beta2);
    let one = F::one();
    let bc1 = F::from_f64(1.0 - hyper.beta1.powi(t));
    let bc2 = F::from_f64(1.0 - hyper.beta2.powi(t));
    let lr = F::from_f64(hyper.learning_rate);
    let eps = F::from_f64(hyper.epsilon);

    let m = state.m.as_slice_mut().expect("contiguous");
    let v = state.v.as_slice_mut().expect("contiguous");
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

pub fn sgd_step<F: Real>(
    params: &mut [F],
    grads: &[F],
    state: &mut OptimizerState<F>,
    learning_rate: f64,
) -> Result<()> {
    check_shapes(params, grads, state)?;
    state.step += 1;
    let lr = F::from_f64(learning_rate);
    for i in 0..params.len() {
        params[i] = params[i] - lr * grads[i];
    }
    Ok(())
}

/// Adagrad: `v += g^2`, `p -= lr * g / (sqrt(v) + eps)`.
pub fn adagrad_step<F: Real>(
    params: &mut [F],
    grads: &[F],
    state: &mut OptimizerState<F>,
    learning_rate: f64,
    epsilon: f64,
) -> Result<()> {
    check_shapes(params, grads, state)?;
    state.step += 1;
    let lr = F::from_f64(learning_rate);
    let eps = F::from_f64(epsilon);
    let v = state.v.as_slice_mut().expect("contiguous");
    for i in 0..params.len() {
        let g = grads[i];
        v[i] = v[i] + g * g;
        params[i] = params[i] - lr * g / (v[i].sqrt() + eps);
    }
    Ok(())
}

/// Scales gradients in place so their global L2 norm does not exceed
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm<F: Real>(grads: &mut [F], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = F::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            *g = *g * scale;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_with_zero_state_leaves_params_unchanged() {
        let mut p = vec![1.0f64, -2.0, 0.5];
        let g = vec![0.0f64; 3];
        let mut st = OptimizerState::new(3);
        adam_step(&mut p, &g, &mut st, &AdamHyper::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn single_step_unit_gradient_matches_hand_evaluation() {
        // One scalar parameter, g = 1, fresh state. Hand evaluation of the
        // recurrences: m = 0.1, v = 0.001, m_hat = 1, v_hat = 1, so the
        // update is exactly -lr / (1 + eps).
        let hyper = AdamHyper {
            learning_rate: 0.05,
            ..AdamHyper::default()
        };
        let mut p = vec![0.0f64];
        let mut st = OptimizerState::new(1);
        adam_step(&mut p, &[1.0], &mut st, &hyper).unwrap();
        let expected = -hyper.learning_rate / (1.0 + hyper.epsilon);
        assert!((p[0] - expected).abs() < 1e-15, "update {}", p[0]);
    }

    #[test]
    fn adam_is_deterministic_over_steps() {
        let hyper = AdamHyper::default();
        let run = || {
            let mut p = vec![0.3f32, -0.7];
            let mut st = OptimizerState::new(2);
            for k in 0..25 {
                let g = vec![(k as f32 * 0.1).sin(), (k as f32 * 0.3).cos()];
                adam_step(&mut p, &g, &mut st, &hyper).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn mixed_zero_coordinates_stay_put() {
        let mut p = vec![1.0f64, 2.0];
        let mut st = OptimizerState::new(2);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0, 1.0], &mut st, &AdamHyper::default()).unwrap();
        }
        assert_eq!(p[0], 1.0, "coordinate with zero grads and moments");
        assert!(p[1] < 2.0);
    }

    #[test]
    fn non_finite_gradients_rejected() {
        let mut p = vec![1.0f32];
        let mut st = OptimizerState::new(1);
        let err = adam_step(&mut p, &[f32::NAN], &mut st, &AdamHyper::default());
        assert!(err.is_err());
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut g = vec![3.0f64, 4.0];
        let pre = clip_global_norm(&mut g, 1.0);
        assert!((pre - 5.0).abs() < 1e-12);
        let post = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((post - 1.0).abs() < 1e-12);

        let mut small = vec![0.3f64, 0.4];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.3, 0.4], "norms under the cap are untouched");
    }
}
