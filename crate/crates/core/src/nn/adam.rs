use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        let n = params.len();
        self.step_ranges(params, grads, &[(0..n, lr)])
    }

    /// One update where each range of coordinates has its own learning rate;
    /// coordinates outside every range are left alone.
    pub fn step_ranges(&mut self, params: &mut [f64], grads: &[f64], ranges: &[(Range<usize>, f64)]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(&[self.m.len()], &[params.len().min(grads.len())]));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient coordinate {i} is {}", grads[i])));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (range, lr) in ranges {
            for i in range.clone() {
                let g = grads[i];
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i] / c1;
                let v_hat = self.v[i] / c2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut opt = Adam::new(3);
        for _ in 0..5 {
            opt.step(&mut p, &[0.0; 3], 0.1).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let g = [0.3, -2.0, 1e-7];
        let mut p = vec![0.0; 3];
        Adam::new(3).step(&mut p, &g, 0.01).unwrap();
        for i in 0..3 {
            let want = -0.01 * g[i] / (g[i].abs() + 1e-5);
            assert!((p[i] - want).abs() < 1e-15, "{i}");
        }
    }

    #[test]
    fn quadratic_bowl_descends() {
        let scale = [1.0, 4.0, 0.25, 9.0];
        let loss = |p: &[f64]| p.iter().zip(&scale).map(|(x, s)| 0.5 * s * x * x).sum::<f64>();
        let mut p = vec![3.0, -2.0, 5.0, 1.0];
        let mut opt = Adam::new(4);
        let mut prev = loss(&p);
        for step in 0..100 {
            let g: Vec<f64> = p.iter().zip(&scale).map(|(x, s)| s * x).collect();
            opt.step(&mut p, &g, 0.01).unwrap();
            let l = loss(&p);
            if step >= 5 {
                assert!(l < prev, "step {step}: {l} >= {prev}");
            }
            prev = l;
        }
    }

    #[test]
    fn rejects_non_finite() {
        let mut p = vec![0.0; 2];
        let mut opt = Adam::new(2);
        assert!(opt.step(&mut p, &[f64::NAN, 0.0], 0.1).is_err());
        assert_eq!(opt.step_count(), 0);
        assert!(opt.step(&mut p, &[0.0], 0.1).is_err());
    }

    #[test]
    fn ranges_use_their_own_rates() {
        let mut p = vec![0.0; 4];
        Adam::new(4).step_ranges(&mut p, &[1.0; 4], &[(0..2, 0.1), (3..4, 0.5)]).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-4 && (p[3] + 0.5).abs() < 1e-4);
        assert_eq!(p[2], 0.0);
    }
}
