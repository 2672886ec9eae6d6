use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Shaped reward: progress toward the emitter, a constant step penalty, and a
/// terminal bonus inside the success radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Reward per meter of progress.
    pub alpha: f64,
    pub lambda_step: f64,
    pub r_goal: f64,
    /// Success radius around the emitter, meters.
    pub epsilon_m: f64,
    pub max_steps: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lambda_step: 0.05,
            r_goal: 10.0,
            epsilon_m: 1.5,
            max_steps: 128,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.lambda_step > 0.0 && self.r_goal > 0.0 && self.epsilon_m > 0.0) {
            return Err(Error::Config(
                "reward alpha, lambda_step, r_goal and epsilon_m must all be positive".into(),
            ));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// The three reward terms of one transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub progress: f64,
    pub step: f64,
    pub success: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.progress + self.step + self.success
    }
}

pub fn reward_terms(d_prev: f64, d_curr: f64, success: bool, cfg: &RewardConfig) -> Result<RewardTerms> {
    if !(d_prev >= 0.0 && d_curr >= 0.0) {
        return Err(Error::Argument(format!(
            "distances must be non-negative, got {d_prev} -> {d_curr}"
        )));
    }
    Ok(RewardTerms {
        progress: cfg.alpha * (d_prev - d_curr),
        step: -cfg.lambda_step,
        success: if success { cfg.r_goal } else { 0.0 },
    })
}

/// `alpha (d_prev - d_curr) - lambda + [success] R_goal`.
pub fn compute_reward(d_prev: f64, d_curr: f64, success: bool, cfg: &RewardConfig) -> Result<f64> {
    Ok(reward_terms(d_prev, d_curr, success, cfg)?.total())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_constants() {
        let c = RewardConfig::default();
        assert!((compute_reward(5.0, 4.0, false, &c).unwrap() - 0.95).abs() < 1e-12);
        assert!((compute_reward(4.0, 5.0, false, &c).unwrap() + 1.05).abs() < 1e-12);
        assert!((compute_reward(2.0, 1.0, true, &c).unwrap() - 10.95).abs() < 1e-12);
    }

    #[test]
    fn negative_distance_rejected() {
        assert!(compute_reward(-1.0, 1.0, false, &RewardConfig::default()).is_err());
    }

    #[test]
    fn goal_outweighs_step_budget() {
        let c = RewardConfig::default();
        assert!(c.lambda_step * c.max_steps as f64 <= c.r_goal);
        c.validate().unwrap();
        assert!(RewardConfig { alpha: 0.0, ..c }.validate().is_err());
    }
}
