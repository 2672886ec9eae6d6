//! Deep Q-learning with experience replay, a target network and
//! epsilon-greedy exploration; feedforward and recurrent (sequence replay).

mod replay;
mod train;

pub use replay::{ReplayBatch, ReplayBuffer, Transition};
pub use train::{dqn_loss, dqn_update, q_spec, select_action, td_targets, train_dqn, DqnEpisodeRecord, DqnOutcome, DqnTrainer};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub gamma: f64,
    pub lr: f64,
    pub target_sync_every: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_fraction: f64,
    pub update_every: u64,
    pub learn_start: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Replay sequence length (recurrent only).
    pub seq_len: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self::feedforward()
    }
}

impl DqnConfig {
    pub fn feedforward() -> Self {
        Self {
            gamma: 0.99,
            lr: 2.5e-4,
            target_sync_every: 1000,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_fraction: 0.2,
            update_every: 4,
            learn_start: 10_000,
            total_steps: 1_000_000,
            batch_size: 128,
            buffer_capacity: 50_000,
            seq_len: 8,
        }
    }

    pub fn recurrent() -> Self {
        Self {
            learn_start: 5_000,
            batch_size: 32,
            buffer_capacity: 5_000,
            ..Self::feedforward()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("dqn: {m}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.eps_end < self.eps_start) || self.eps_end < 0.0 || self.eps_start > 1.0 {
            return bad("need 0 <= eps_end < eps_start <= 1");
        }
        if !(self.lr > 0.0) || !(self.eps_decay_fraction > 0.0) {
            return bad("lr and eps_decay_fraction must be positive");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.update_every == 0 || self.target_sync_every == 0 || self.seq_len == 0 {
            return bad("batch_size, buffer_capacity, update_every, target_sync_every and seq_len must be positive");
        }
        Ok(())
    }
}

/// Linear decay from `eps_start` at step 0 to `eps_end` at
/// `eps_decay_fraction * total_steps`, constant afterwards.
pub fn epsilon_at(step: u64, cfg: &DqnConfig) -> f64 {
    let horizon = cfg.eps_decay_fraction * cfg.total_steps as f64;
    if step as f64 >= horizon {
        return cfg.eps_end;
    }
    let frac = step as f64 / horizon;
    cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)
}

#[cfg(test)]
mod tests;
