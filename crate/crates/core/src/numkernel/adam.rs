use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Moment estimates for one Adam-optimized parameter vector.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self::with_betas(len, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// One bias-corrected Adam update, applied in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            actual: grads.len(),
        });
    }
    if state.first_moment.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            actual: state.first_moment.len(),
        });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - libm::pow(b1, t as f64);
    let c2 = 1.0 - libm::pow(b2, t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        let m = b1 * state.first_moment[i] + (1.0 - b1) * g;
        let v = b2 * state.second_moment[i] + (1.0 - b2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        let m_hat = m / c1;
        let v_hat = v / c2;
        params[i] -= learning_rate * m_hat / (libm::sqrt(v_hat) + state.epsilon);
    }
    Ok(())
}
