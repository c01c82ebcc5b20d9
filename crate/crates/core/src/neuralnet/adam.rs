use serde::{Deserialize, Serialize};

use super::MlpParams;

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            step_count: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Updates `theta` in place.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        assert_eq!(theta.len(), grad.len(), "gradient length");
        assert_eq!(theta.len(), self.m.len(), "optimizer state length");
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in theta.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Value-returning form of [`AdamState::step`].
pub fn adam_step(params: &MlpParams, grad: &[f64], state: &AdamState) -> (MlpParams, AdamState) {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p.theta, grad);
    (p, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::{init_params, MlpArch};

    #[test]
    fn zero_gradient_from_fresh_state_leaves_params() {
        let mut theta = vec![0.5, -1.0, 2.0];
        let mut s = AdamState::new(3, 0.01);
        s.step(&mut theta, &[0.0; 3]);
        assert_eq!(theta, vec![0.5, -1.0, 2.0]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut theta = vec![0.0; 2];
        let mut s = AdamState::new(2, 0.01);
        s.step(&mut theta, &[1.0, -2.0]);
        let (m, v) = (s.m.clone(), s.v.clone());
        s.step(&mut theta, &[0.0, 0.0]);
        for i in 0..2 {
            assert_eq!(s.m[i], 0.9 * m[i]);
            assert_eq!(s.v[i], 0.999 * v[i]);
        }
    }

    #[test]
    fn first_step_moves_each_coordinate_by_about_lr() {
        // Step 1: m̂ = g, v̂ = g², update = lr·g/(|g| + ε).
        let g = [3.0, -0.002, 1e-3, -50.0];
        let mut theta = [0.0; 4];
        let mut s = AdamState::new(4, 0.01);
        s.step(&mut theta, &g);
        for (p, gi) in theta.iter().zip(g) {
            let expected = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((p - expected).abs() < 1e-15, "{p} vs {expected}");
            assert!((p.abs() - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn pure_step_is_deterministic() {
        let p = init_params(&MlpArch::new(vec![1, 4, 1]).unwrap(), 1);
        let g: Vec<f64> = (0..p.theta.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let s = AdamState::new(p.theta.len(), 0.01);
        let a = adam_step(&p, &g, &s);
        let b = adam_step(&p, &g, &s);
        assert_eq!(a, b);
        assert_eq!(a.1.step_count, 1);
    }
}
