//! Adam with bias correction.

use std::collections::BTreeMap;

use super::{OptimConfig, Result};
use crate::scalar::Scalar;
use crate::tensor::{GradStore, ParamSet, Tensor};

/// First and second moment estimates per parameter, plus the step counter.
pub struct AdamState<T: Scalar> {
    step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        AdamState {
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update over every parameter with a gradient.
    /// Parameters that never received a gradient keep zero moments, which
    /// is exactly the standard update with g = 0.
    pub fn step(
        &mut self,
        params: &mut ParamSet<T>,
        grads: &GradStore<T>,
        lr: f64,
        cfg: &OptimConfig,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let beta1 = T::from_config(cfg.beta1);
        let beta2 = T::from_config(cfg.beta2);
        let eps = T::from_config(cfg.epsilon);
        let lr = T::from_config(lr);
        let one = T::one();
        let bc1 = one - beta1.powi(t);
        let bc2 = one - beta2.powi(t);

        let mut updates: Vec<(String, Vec<T>)> = Vec::new();
        for (name, param) in params.iter() {
            let grad = grads.grad(param);
            if grad.is_none() && !self.moments.contains_key(name) {
                continue;
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![T::zero(); param.len()], vec![T::zero(); param.len()]));
            let mut data = param.data().to_vec();
            for i in 0..data.len() {
                let g = grad.map_or(T::zero(), |g| g[i]);
                m[i] = beta1 * m[i] + (one - beta1) * g;
                v[i] = beta2 * v[i] + (one - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            updates.push((name.clone(), data));
        }
        for (name, data) in updates {
            let shape = params.get(&name)?.shape().to_vec();
            params.set(&name, Tensor::var(&shape, data)?);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_param(v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::var(&[1], vec![v]).unwrap());
        p
    }

    fn grad_of(params: &ParamSet<f64>, scale: f64) -> GradStore<f64> {
        // gradient of scale * w with respect to w is scale
        let w = params.get("w").unwrap();
        let loss = w.scale(scale).sum_all();
        loss.backward().unwrap()
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = OptimConfig::default();
        let mut params = scalar_param(5.0);
        let grads = grad_of(&params, 1.0);
        let mut adam = AdamState::new();
        adam.step(&mut params, &grads, 0.1, &cfg).unwrap();
        let w = params.get("w").unwrap().data()[0];
        // bias-corrected m̂/√v̂ = 1 up to ε
        assert!((w - 4.9).abs() < 1e-8, "{w}");
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let cfg = OptimConfig::default();
        let mut params = scalar_param(5.0);
        let mut other = ParamSet::new();
        other.insert("u", Tensor::<f64>::var(&[1], vec![1.0]).unwrap());
        // gradient store for an unrelated parameter: `w` gets no entry
        let grads = {
            let u = other.get("u").unwrap();
            u.sum_all().backward().unwrap()
        };
        let mut adam = AdamState::new();
        adam.step(&mut params, &grads, 0.1, &cfg).unwrap();
        assert_eq!(params.get("w").unwrap().data()[0], 5.0);
    }

    #[test]
    fn updates_are_deterministic() {
        let cfg = OptimConfig::default();
        let run = || {
            let mut params = scalar_param(2.0);
            let mut adam = AdamState::new();
            for _ in 0..5 {
                let grads = grad_of(&params, 3.0);
                adam.step(&mut params, &grads, 0.01, &cfg).unwrap();
            }
            params.get("w").unwrap().data()[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
