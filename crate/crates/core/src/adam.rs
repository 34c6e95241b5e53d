//! ADAM updates with bias-corrected moment estimates.

use crate::array::NdArray;
use crate::error::{Error, Result};

/// Optimizer hyperparameters. The learning rate default suits small
/// untrained networks; the rest are the customary moment coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-run optimizer state: step counter plus first and second moment
/// buffers for every parameter slot.
pub struct AdamState {
    params: AdamParams,
    step: u64,
    m: Vec<NdArray>,
    v: Vec<NdArray>,
}

impl AdamState {
    pub fn new(params: AdamParams, shapes: &[&[usize]]) -> Self {
        assert!(params.lr > 0.0 && params.eps > 0.0);
        assert!((0.0..1.0).contains(&params.beta1) && (0.0..1.0).contains(&params.beta2));
        AdamState {
            params,
            step: 0,
            m: shapes.iter().map(|s| NdArray::zeros(s)).collect(),
            v: shapes.iter().map(|s| NdArray::zeros(s)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn hyperparams(&self) -> AdamParams {
        self.params
    }

    pub fn second_moments(&self) -> &[NdArray] {
        &self.v
    }

    /// Advances the step counter; call once per iteration before the slot
    /// updates so bias correction sees the new count.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates one parameter slot in place. Gradients must be finite; the
    /// offending slot is named otherwise.
    pub fn update_slot(&mut self, slot: usize, param: &mut [f64], grad: &[f64]) -> Result<()> {
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("adam: gradient of parameter slot {slot} at flat index {i}"),
            });
        }
        let t = self.step as i32;
        debug_assert!(t >= 1, "begin_step must run before update_slot");
        let AdamParams {
            lr,
            beta1,
            beta2,
            eps,
        } = self.params;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let m = self.m[slot].data_mut();
        let v = self.v[slot].data_mut();
        debug_assert_eq!(param.len(), grad.len(), "slot {slot} shape drifted");
        for i in 0..param.len() {
            let gi = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            param[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }

    /// One update across all parameter slots at once.
    pub fn step(&mut self, params: &mut [&mut NdArray], grads: &[&NdArray]) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "parameter slot count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient slot count changed");
        self.begin_step();
        for slot in 0..params.len() {
            let g = grads[slot].data().to_vec();
            self.update_slot(slot, params[slot].data_mut(), &g)?;
        }
        Ok(())
    }
}
