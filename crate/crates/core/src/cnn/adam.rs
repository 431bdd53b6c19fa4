use serde::{Deserialize, Serialize};

use super::tensor::Scalar;
use super::CnnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Moment accumulators for one parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(len: usize) -> Self {
        Self { m: vec![F::zero(); len], v: vec![F::zero(); len], t: 0 }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<F: Scalar>(
    params: &mut [F],
    grads: &[F],
    state: &mut AdamState<F>,
    hyper: &AdamHyper,
) -> Result<(), CnnError> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(CnnError::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    // fold the bias corrections into the step size and epsilon
    let step = F::from_f64_lossy(hyper.learning_rate * c2.sqrt() / c1);
    let eps = F::from_f64_lossy(hyper.epsilon * c2.sqrt());
    let (b1, b2) = (F::from_f64_lossy(hyper.beta1), F::from_f64_lossy(hyper.beta2));
    let (one_b1, one_b2) = (F::one() - b1, F::one() - b2);
    for i in 0..params.len() {
        let g = grads[i];
        let m = b1 * state.m[i] + one_b1 * g;
        let v = b2 * state.v[i] + one_b2 * g * g;
        state.m[i] = m;
        state.v[i] = v;
        params[i] = params[i] - step * m / (v.sqrt() + eps);
    }
    Ok(())
}
