//! Adam optimizer with bias correction.
//!
//! Update rule per element, with `t` counted after increment:
//!
//! ```text
//! m <- beta1*m + (1-beta1)*g        m_hat = m / (1 - beta1^t)
//! v <- beta2*v + (1-beta2)*g^2     v_hat = v / (1 - beta2^t)
//! theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
//! ```
//!
//! Epsilon is added after the square root. The arithmetic runs in f64 no
//! matter the parameter precision, then casts back, so f32 and f64 models
//! follow the same trajectory up to rounding of the stored values.

use crate::error::{Error, Result};
use crate::network::{Gradients, Model};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::invalid(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates, one tensor per parameter tensor in
/// declaration order, plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar = f32> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &Model<T>) -> Self {
        let zeros: Vec<Tensor<T>> = model
            .param_tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn check_layout(&self, params: &[&mut Tensor<T>]) -> Result<()> {
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(Error::invalid(format!(
                "optimizer state holds {} tensors, model has {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if self.m[i].shape() != p.shape() || self.v[i].shape() != p.shape() {
                return Err(Error::invalid(format!(
                    "optimizer state tensor {i} has shape {:?}, parameter has {:?}",
                    self.m[i].shape(),
                    p.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Apply one Adam update to every parameter of `model` in place.
pub fn adam_step<T: Scalar>(
    model: &mut Model<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    config: &AdamConfig,
) -> Result<()> {
    config.validate()?;
    let grad_tensors = grads.tensors();
    let mut params = model.param_tensors_mut();
    state.check_layout(&params)?;
    if grad_tensors.len() != params.len() {
        return Err(Error::invalid(format!(
            "gradient holds {} tensors, model has {}",
            grad_tensors.len(),
            params.len()
        )));
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);

    for (i, param) in params.iter_mut().enumerate() {
        let g = grad_tensors[i];
        if g.shape() != param.shape() {
            return Err(Error::invalid(format!(
                "gradient tensor {i} has shape {:?}, parameter has {:?}",
                g.shape(),
                param.shape()
            )));
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, p) in param.data_mut().iter_mut().enumerate() {
            let gk = g.data()[k].to_f64();
            let mk = config.beta1 * m[k].to_f64() + (1.0 - config.beta1) * gk;
            let vk = config.beta2 * v[k].to_f64() + (1.0 - config.beta2) * gk * gk;
            m[k] = T::from_f64(mk);
            v[k] = T::from_f64(vk);
            let m_hat = mk / c1;
            let v_hat = vk / c2;
            let next = p.to_f64() - config.lr * m_hat / (v_hat.sqrt() + config.epsilon);
            *p = T::from_f64(next);
        }
    }
    Ok(())
}
