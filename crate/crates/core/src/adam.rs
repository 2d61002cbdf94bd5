use alloc::format;
use alloc::vec::Vec;

use crate::autograd::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every tensor of a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &Tensor<T> {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &Tensor<T> {
        &self.v[index]
    }

    /// One bias-corrected Adam update, in place. Gradients are cleared afterwards.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::state(format!(
                "optimizer tracks {} tensors but the parameter set has {}",
                self.m.len(),
                params.len()
            )));
        }
        if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::state(format!("parameter `{}` has no gradient", p.name)));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - num_traits::Float::powi(c.beta1, t);
        let bc2 = 1.0 - num_traits::Float::powi(c.beta2, t);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let lr = T::from_f64_lossy(c.lr);
        let eps = T::from_f64_lossy(c.eps);
        let (bc1, bc2) = (T::from_f64_lossy(bc1), T::from_f64_lossy(bc2));

        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.take().expect("checked above");
            let w = p.value.data_mut();
            for (((w, &g), m), v) in w
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one optimizer step to `params` using `state`.
pub fn adam_step<T: Real>(params: &mut ParamSet<T>, state: &mut AdamState<T>) -> Result<()> {
    state.step(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_moves_by_learning_rate() {
        let mut params = ParamSet::<f64>::new();
        let id = params.add("w", Tensor::scalar(0.0));
        let mut state = AdamState::new(AdamConfig::default(), &params);
        params.get_mut(id).grad = Some(Tensor::scalar(1.0));
        adam_step(&mut params, &mut state).unwrap();
        // m̂ = 1, v̂ = 1  =>  w = -0.01 / (1 + 1e-8)
        let w = params.get(id).value.data()[0];
        assert!((w + 0.01 / (1.0 + 1e-8)).abs() < 1e-15, "{w}");
        assert!(params.get(id).grad.is_none());
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = ParamSet::<f32>::new();
        let id = params.add("w", Tensor::full([1, 2, 2, 2], 0.75));
        let mut state = AdamState::new(AdamConfig::default(), &params);
        for _ in 0..5 {
            params.get_mut(id).grad = Some(Tensor::zeros([1, 2, 2, 2]));
            state.step(&mut params).unwrap();
        }
        assert!(params.get(id).value.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn missing_gradient_is_a_state_error() {
        let mut params = ParamSet::<f32>::new();
        params.add("w", Tensor::scalar(1.0));
        let mut state = AdamState::new(AdamConfig::default(), &params);
        assert!(matches!(state.step(&mut params), Err(Error::State(_))));
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn second_moment_stays_nonnegative() {
        let mut params = ParamSet::<f64>::new();
        let id = params.add("w", Tensor::zeros([1, 1, 1, 3]));
        let mut state = AdamState::new(AdamConfig::default(), &params);
        for k in 0..20 {
            let g = [(k as f64).sin(), -3.0, 0.001 * k as f64];
            params.get_mut(id).grad = Some(Tensor::from_vec([1, 1, 1, 3], g.to_vec()).unwrap());
            state.step(&mut params).unwrap();
            assert!(state.second_moment(0).data().iter().all(|&v| v >= 0.0));
            assert_eq!(state.first_moment(0).shape(), [1, 1, 1, 3]);
        }
        assert_eq!(state.step_count(), 20);
    }
}
