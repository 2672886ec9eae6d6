use rand::Rng;

/// Max-subtracted log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Categorical distribution parameterized by logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    log_probs: Vec<f64>,
    probs: Vec<f64>,
}

impl Categorical {
    pub fn new(logits: &[f64]) -> Self {
        let log_probs = log_softmax(logits);
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Self { log_probs, probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.log_probs[action]
    }

    pub fn entropy(&self) -> f64 {
        -self.probs.iter().zip(&self.log_probs).map(|(p, l)| p * l).sum::<f64>()
    }

    /// Most likely action; ties go to the lowest index.
    pub fn mode(&self) -> usize {
        argmax(&self.log_probs)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = i;
                if u < acc {
                    return i;
                }
            }
        }
        last
    }

    /// d log p(action) / d logits.
    pub fn grad_log_prob(&self, action: usize) -> Vec<f64> {
        let mut g: Vec<f64> = self.probs.iter().map(|p| -p).collect();
        g[action] += 1.0;
        g
    }

    /// d entropy / d logits.
    pub fn grad_entropy(&self) -> Vec<f64> {
        let h = self.entropy();
        self.probs.iter().zip(&self.log_probs).map(|(p, l)| -p * (l + h)).collect()
    }
}

/// Lowest index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Samples from `softmax(logits)`; returns `(action, log_prob, entropy)`.
pub fn categorical_sample<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> (usize, f64, f64) {
    let d = Categorical::new(logits);
    let a = d.sample(rng);
    (a, d.log_prob(a), d.entropy())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_entropy() {
        let d = Categorical::new(&[0.0; 6]);
        assert!((d.entropy() - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_logits() {
        let mut logits = [0.0; 6];
        logits[0] = 1000.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let (a, lp, h) = categorical_sample(&logits, &mut rng);
            assert_eq!(a, 0);
            assert!(lp.abs() < 1e-12);
            assert!(h.abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_frequencies_within_three_sigma() {
        let logits = [0.3, -1.2, 2.0, 0.0, 0.7, -0.4];
        let p = softmax(&logits);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            counts[categorical_sample(&logits, &mut rng).0] += 1;
        }
        for i in 0..6 {
            let sigma = (n as f64 * p[i] * (1.0 - p[i])).sqrt();
            assert!((counts[i] as f64 - n as f64 * p[i]).abs() < 3.0 * sigma, "action {i}");
        }
    }

    #[test]
    fn analytic_grads_match_differences() {
        let z = [0.5, -0.3, 1.1, 0.0, -2.0, 0.4];
        let d = Categorical::new(&z);
        let h = 1e-6;
        let (gl, ge) = (d.grad_log_prob(2), d.grad_entropy());
        for j in 0..6 {
            let mut zp = z;
            let mut zm = z;
            zp[j] += h;
            zm[j] -= h;
            let (p, m) = (Categorical::new(&zp), Categorical::new(&zm));
            assert!(((p.log_prob(2) - m.log_prob(2)) / (2.0 * h) - gl[j]).abs() < 1e-8);
            assert!(((p.entropy() - m.entropy()) / (2.0 * h) - ge[j]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn probabilities_normalized(z in prop::collection::vec(-50.0f64..50.0, 6)) {
            let d = Categorical::new(&z);
            prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let h = d.entropy();
            prop_assert!(h >= -1e-12 && h <= 6f64.ln() + 1e-12);
        }
    }
}
