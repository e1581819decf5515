//! Adam optimizer with bias correction.

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    /// Standard defaults: beta1 0.9, beta2 0.999, eps 1e-8.
    pub fn new(lr: f32) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update. `grads` must hold one gradient per parameter, in
    /// store order, with matching shapes.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::contract(format!(
                "adam: got {} grads for {} params",
                grads.len(),
                params.len()
            )));
        }
        if self.m.is_empty() {
            for id in params.ids() {
                self.m.push(Tensor::zeros(params.get(id).dims()));
                self.v.push(Tensor::zeros(params.get(id).dims()));
            }
        }
        self.t += 1;
        // Bias-correction factors at f64 so long runs stay accurate.
        let c1 = 1.0 - (self.beta1 as f64).powi(self.t as i32);
        let c2 = 1.0 - (self.beta2 as f64).powi(self.t as i32);
        let (c1, c2) = (c1 as f32, c2 as f32);
        for (i, id) in params.ids().enumerate() {
            let g = &grads[i];
            if g.dims() != params.get(id).dims() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: params.get(id).dims().to_vec(),
                    rhs: g.dims().to_vec(),
                });
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.get_mut(id);
            for ((pi, (mi, vi)), gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.iter_mut().zip(v.iter_mut()))
                .zip(g.data().iter())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Scalar reference recurrence, written independently of the optimizer.
    fn reference_adam(theta0: f32, gs: &[f32], lr: f32, b1: f32, b2: f32, eps: f32) -> f32 {
        let (mut theta, mut m, mut v) = (theta0, 0.0f32, 0.0f32);
        for (t, g) in gs.iter().enumerate() {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t as i32 + 1));
            let v_hat = v / (1.0 - b2.powi(t as i32 + 1));
            theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        theta
    }

    fn one_param_store(value: f32) -> (ParamStore, super::super::params::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::scalar(value)).unwrap();
        (store, id)
    }

    #[test]
    fn first_step_matches_hand_value() {
        // t=1, g=1: m_hat = v_hat = 1, so the step is -lr / (1 + eps).
        let (mut store, id) = one_param_store(0.0);
        let mut adam = Adam::new(1e-3);
        adam.step(&mut store, &[Tensor::scalar(1.0)]).unwrap();
        let delta = store.get(id).data()[0];
        assert_abs_diff_eq!(delta, -9.99999995e-4, epsilon = 1e-8);
    }

    #[test]
    fn matches_scalar_reference_over_many_steps() {
        let gs = [1.0f32, -0.5, 0.25, 2.0, -1.5, 0.1, 0.0, 3.0];
        let expect = reference_adam(0.5, &gs, 1e-2, 0.9, 0.999, 1e-8);
        let (mut store, id) = one_param_store(0.5);
        let mut adam = Adam::new(1e-2);
        for g in gs {
            adam.step(&mut store, &[Tensor::scalar(g)]).unwrap();
        }
        assert_abs_diff_eq!(store.get(id).data()[0], expect, epsilon = 1e-6);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        // With a constant gradient, m_hat/sqrt(v_hat) stays 1, so every step
        // moves by about lr regardless of the gradient's magnitude.
        let (mut store, id) = one_param_store(0.0);
        let mut adam = Adam::new(1e-3);
        for _ in 0..10 {
            adam.step(&mut store, &[Tensor::scalar(42.0)]).unwrap();
        }
        assert_abs_diff_eq!(store.get(id).data()[0], -10.0 * 1e-3, epsilon = 1e-5);
    }

    #[test]
    fn missing_grads_is_contract_error() {
        let (mut store, _) = one_param_store(0.0);
        let mut adam = Adam::new(1e-3);
        assert!(adam.step(&mut store, &[]).is_err());
    }

    #[test]
    fn shape_mismatch_is_error() {
        let (mut store, _) = one_param_store(0.0);
        let mut adam = Adam::new(1e-3);
        assert!(adam.step(&mut store, &[Tensor::zeros(&[2])]).is_err());
    }
}
