//! Proximal policy optimization: clipped surrogate, generalized advantage
//! estimation, synchronous vectorized rollouts, feedforward and recurrent
//! actor-critics.

mod buffer;
mod loss;
mod train;

pub use buffer::{collect_rollout, RolloutBuffer, VecEnv};
pub use loss::{normalize_advantages, ppo_loss, LossCoefs, LossStats, Minibatch};
pub use train::{actor_critic_spec, full_batch_loss, ppo_update, train_ppo, PpoMetrics, PpoOutcome, PpoTrainer, UpdateStats};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub n_envs: usize,
    pub lr: f64,
    /// Linear learning-rate decay to zero over `total_steps`.
    pub anneal_lr: bool,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub rollout_steps: usize,
    pub total_steps: u64,
    /// Episodes in the rolling window behind `mean_return`/`success_rate_window`.
    pub window: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            n_envs: 8,
            lr: 2.5e-4,
            anneal_lr: true,
            gamma: 0.997,
            gae_lambda: 0.95,
            clip: 0.1,
            ent_coef: 0.02,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            minibatch: 128,
            epochs: 4,
            rollout_steps: 128,
            total_steps: 1_000_000,
            window: 100,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ppo: {m}")));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("gae_lambda must lie in (0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.lr > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("lr and max_grad_norm must be positive");
        }
        if self.vf_coef < 0.0 || self.ent_coef < 0.0 {
            return bad("loss coefficients must be non-negative");
        }
        if self.n_envs == 0 || self.minibatch == 0 || self.epochs == 0 || self.rollout_steps == 0 || self.window == 0 {
            return bad("n_envs, minibatch, epochs, rollout_steps and window must be positive");
        }
        Ok(())
    }

    /// Learning rate at training progress `step / total_steps`.
    pub fn lr_at(&self, progress: f64) -> f64 {
        if self.anneal_lr {
            self.lr * (1.0 - progress.clamp(0.0, 1.0))
        } else {
            self.lr
        }
    }

    pub fn coefs(&self) -> LossCoefs {
        LossCoefs {
            clip: self.clip,
            vf_coef: self.vf_coef,
            ent_coef: self.ent_coef,
        }
    }
}

/// Advantages by backward recursion:
/// `delta_t = r_t + gamma (1 - done_t) V_{t+1} - V_t`,
/// `A_t = delta_t + gamma lam (1 - done_t) A_{t+1}`, with `V_T = bootstrap`.
/// Returns `(advantages, advantages + values)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lam: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::Argument(format!(
            "gae inputs differ in length: {n} rewards, {} values, {} dones",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let keep = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * keep * next_value - values[t];
        next_adv = delta + gamma * lam * keep * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}
