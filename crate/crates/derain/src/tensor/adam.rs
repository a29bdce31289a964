//! Bias-corrected Adam over a named weight collection.

use std::collections::BTreeMap;

use super::{ModelWeights, TensorError};

/// Adam state: hyperparameters plus per-parameter moment buffers that
/// persist across steps. Updates are computed in `f64` and stored back
/// into the `f32` parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one update in place. Every parameter in `params` must have a
    /// gradient in `grads`; scalars recorded as metadata should not be part
    /// of the collection handed to the optimizer.
    pub fn step(
        &mut self,
        params: &mut ModelWeights<f32>,
        grads: &BTreeMap<String, Vec<f32>>,
    ) -> Result<(), TensorError> {
        // Validate up front so a missing gradient cannot leave a half-updated
        // collection behind.
        let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
        for name in &names {
            let grad = grads
                .get(name)
                .ok_or_else(|| TensorError::MissingGradient { name: name.clone() })?;
            let numel = params.get(name).expect("name from params").numel();
            if grad.len() != numel {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    left: vec![numel],
                    right: vec![grad.len()],
                });
            }
        }

        self.t += 1;
        let t = self.t;
        let bias1 = 1.0 - self.beta1.powi(t as i32);
        let bias2 = 1.0 - self.beta2.powi(t as i32);

        for name in &names {
            let tensor = params.get_mut(name).expect("name from params");
            let grad = &grads[name];
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            for ((w, &g32), (mi, vi)) in tensor
                .data_mut()
                .iter_mut()
                .zip(grad)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let g = f64::from(g32);
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *w = (f64::from(*w) - self.lr * m_hat / (v_hat.sqrt() + self.eps)) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single_param(value: f32) -> ModelWeights<f32> {
        let mut w = ModelWeights::new();
        w.push("w", Tensor::new(vec![1], vec![value]).unwrap())
            .unwrap();
        w
    }

    fn grad_of(value: f32) -> BTreeMap<String, Vec<f32>> {
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), vec![value]);
        g
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        // w=1, g=2, lr=0.1: bias-corrected first step is lr * g/|g| = 0.1.
        let mut params = single_param(1.0);
        let mut adam = Adam::new(0.1, 0.9, 0.999, 1e-8);
        adam.step(&mut params, &grad_of(2.0)).unwrap();
        let w = params.get("w").unwrap().data()[0];
        assert!((f64::from(w) - 0.9).abs() < 1e-7, "w = {w}");
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut params = single_param(0.75);
        let mut adam = Adam::new(0.1, 0.9, 0.999, 1e-8);
        for _ in 0..3 {
            adam.step(&mut params, &grad_of(0.0)).unwrap();
        }
        assert_eq!(params.get("w").unwrap().data()[0], 0.75);
    }

    #[test]
    fn matches_reference_implementation_over_two_steps() {
        let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
        let g = 0.4f64;

        // Reference: the textbook update, f64 math, f32 parameter storage.
        let mut w_ref = 0.3f32;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            w_ref = (f64::from(w_ref) - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
        }

        let mut params = single_param(0.3);
        let mut adam = Adam::new(lr, b1, b2, eps);
        for _ in 0..2 {
            adam.step(&mut params, &grad_of(g as f32)).unwrap();
        }
        let w = params.get("w").unwrap().data()[0];
        assert!((f64::from(w) - f64::from(w_ref)).abs() < 1e-7);
    }

    #[test]
    fn missing_gradient_is_rejected() {
        let mut params = single_param(1.0);
        let mut adam = Adam::new(0.1, 0.9, 0.999, 1e-8);
        let err = adam.step(&mut params, &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, TensorError::MissingGradient { .. }));
    }
}
