use ndarray::{Array2, ArrayView2};

use crate::nn::{backward, forward_train, Categorical, PolicyParams, Recurrence};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefs {
    pub clip: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
}

/// A batch with frozen old log-probabilities and (normalized) advantages.
#[derive(Debug, Clone, Copy)]
pub struct Minibatch<'a> {
    pub obs: ArrayView2<'a, f64>,
    pub actions: &'a [usize],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
    /// Time-major unroll for recurrent networks.
    pub recurrence: Option<Recurrence<'a>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossStats {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of samples with `|ratio - 1| > clip`.
    pub clip_frac: f64,
    pub approx_kl: f64,
    pub max_ratio_dev: f64,
}

/// Shifts and scales to mean 0, standard deviation 1 (population).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}

/// `-L_clip + vf_coef * mean((V - R)^2) - ent_coef * entropy` and its
/// gradient with respect to the parameters.
pub fn ppo_loss(params: &PolicyParams, mb: &Minibatch, coefs: &LossCoefs) -> Result<(LossStats, Vec<f64>)> {
    let n = mb.actions.len();
    if n == 0 {
        return Err(Error::Argument("empty minibatch".into()));
    }
    if mb.obs.nrows() != n || mb.old_log_probs.len() != n || mb.advantages.len() != n || mb.returns.len() != n {
        return Err(Error::Argument("minibatch fields differ in length".into()));
    }
    let (out, tape) = forward_train(params, mb.obs, mb.recurrence)?;
    let n_actions = out.logits.ncols();
    let nf = n as f64;
    let mut d_logits = Array2::zeros((n, n_actions));
    let mut d_value = Array2::zeros((n, 1));
    let mut st = LossStats::default();
    for i in 0..n {
        let logits = out.logits.row(i);
        let dist = Categorical::new(logits.as_slice().expect("row"));
        let a = mb.actions[i];
        if a >= n_actions {
            return Err(Error::Argument(format!("action {a} out of range")));
        }
        let lp = dist.log_prob(a);
        let log_ratio = lp - mb.old_log_probs[i];
        let ratio = log_ratio.exp();
        let adv = mb.advantages[i];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - coefs.clip, 1.0 + coefs.clip) * adv;
        let surrogate = unclipped.min(clipped);
        let entropy = dist.entropy();
        let v = out.value[[i, 0]];
        let err = v - mb.returns[i];

        st.policy_loss -= surrogate / nf;
        st.value_loss += err * err / nf;
        st.entropy += entropy / nf;
        if (ratio - 1.0).abs() > coefs.clip {
            st.clip_frac += 1.0 / nf;
        }
        st.approx_kl += ((ratio - 1.0) - log_ratio) / nf;
        st.max_ratio_dev = st.max_ratio_dev.max((ratio - 1.0).abs());

        // The min picks the unclipped branch on ties, so gradient flows there.
        let d_lp = if unclipped <= clipped { -adv * ratio / nf } else { 0.0 };
        let g_lp = dist.grad_log_prob(a);
        let g_ent = dist.grad_entropy();
        for k in 0..n_actions {
            d_logits[[i, k]] = d_lp * g_lp[k] - coefs.ent_coef / nf * g_ent[k];
        }
        d_value[[i, 0]] = 2.0 * coefs.vf_coef * err / nf;
    }
    st.loss = st.policy_loss + coefs.vf_coef * st.value_loss - coefs.ent_coef * st.entropy;
    if !st.loss.is_finite() {
        return Err(Error::NonFinite(format!("ppo loss {}", st.loss)));
    }
    let grads = backward(params, &tape, d_logits.view(), d_value.view())?;
    Ok((st, grads))
}
