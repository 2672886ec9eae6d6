use rand::Rng;

use super::PolicyParams;

pub fn global_norm(grads: &[f64]) -> f64 {
    grads.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` so its norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub probes: usize,
}

const STEP: f64 = 1e-5;
/// Relative errors use at least this denominator so coordinates with
/// vanishing gradients compare on absolute terms.
const FLOOR: f64 = 1e-6;

/// Compares `analytic` against central differences of `loss_fn` at
/// `n_probes` coordinates, spread over every tensor (at least one each).
pub fn grad_check<F, R>(loss_fn: F, params: &PolicyParams, analytic: &[f64], n_probes: usize, rng: &mut R) -> GradCheck
where
    F: Fn(&PolicyParams) -> f64,
    R: Rng + ?Sized,
{
    assert_eq!(analytic.len(), params.len(), "gradient length");
    let tensors = params.tensors();
    let mut coords = Vec::new();
    let per_tensor = n_probes.div_ceil(tensors.len().max(1)).max(1);
    for t in tensors {
        for _ in 0..per_tensor.min(t.len()) {
            coords.push(t.offset + rng.random_range(0..t.len()));
        }
    }
    let mut probe = params.clone();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        probes: coords.len(),
    };
    for i in coords {
        let x = params.as_slice()[i];
        probe.as_mut_slice()[i] = x + STEP;
        let up = loss_fn(&probe);
        probe.as_mut_slice()[i] = x - STEP;
        let down = loss_fn(&probe);
        probe.as_mut_slice()[i] = x;
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic[i];
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(FLOOR);
        out.max_abs_error = out.max_abs_error.max(abs);
        out.max_rel_error = out.max_rel_error.max(rel);
    }
    out
}
