//! Episode statistics, policy evaluation, feature heatmaps and report files.

mod heatmap;

pub use heatmap::{export_heatmap, feature_heatmap, read_heatmap, HeatmapCell, HeatmapGrid};

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Env, EnvState, Observation, PolarGrid};
use crate::nn::{argmax, forward, Categorical, HeadKind, Memory, PolicyParams, LSTM_HIDDEN};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub return_undiscounted: f64,
    pub return_discounted: f64,
    pub length: usize,
    pub success: bool,
    pub final_distance_m: f64,
    pub start_distance_m: f64,
}

/// Accumulates rewards of one running episode.
#[derive(Debug, Clone)]
pub struct EpisodeTracker {
    gamma: f64,
    ret: f64,
    disc: f64,
    discount: f64,
    length: usize,
    start_distance: f64,
}

impl EpisodeTracker {
    pub fn new(gamma: f64, start_distance: f64) -> Self {
        Self {
            gamma,
            ret: 0.0,
            disc: 0.0,
            discount: 1.0,
            length: 0,
            start_distance,
        }
    }

    pub fn push(&mut self, reward: f64) {
        self.ret += reward;
        self.disc += self.discount * reward;
        self.discount *= self.gamma;
        self.length += 1;
    }

    pub fn finish(&self, success: bool, final_distance: f64) -> EpisodeStats {
        EpisodeStats {
            return_undiscounted: self.ret,
            return_discounted: self.disc,
            length: self.length,
            success,
            final_distance_m: final_distance,
            start_distance_m: self.start_distance,
        }
    }
}

pub fn success_rate(stats: &[EpisodeStats]) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::Argument("success rate of zero episodes".into()));
    }
    Ok(stats.iter().filter(|s| s.success).count() as f64 / stats.len() as f64)
}

pub fn mean_return(stats: &[EpisodeStats]) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::Argument("mean return of zero episodes".into()));
    }
    Ok(stats.iter().map(|s| s.return_undiscounted).sum::<f64>() / stats.len() as f64)
}

/// `1 - Var(target - pred) / Var(target)`; `None` when the targets are
/// (numerically) constant.
pub fn explained_variance(pred: &[f64], target: &[f64]) -> Result<Option<f64>> {
    if pred.len() != target.len() {
        return Err(Error::Argument(format!(
            "explained variance of {} predictions against {} targets",
            pred.len(),
            target.len()
        )));
    }
    if target.len() < 2 {
        return Err(Error::Argument("explained variance needs at least two samples".into()));
    }
    let var = |it: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = it.collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
    };
    let vt = var(&mut target.iter().copied());
    if vt < 1e-12 {
        return Ok(None);
    }
    let vr = var(&mut target.iter().zip(pred).map(|(t, p)| t - p));
    Ok(Some(1.0 - vr / vt))
}

/// Acts in an environment. Oracle policies may read the true state; learned
/// policies only look at the observation.
pub trait Policy {
    fn initial_memory(&self) -> Option<Memory>;

    fn act(
        &self,
        obs: &Observation,
        memory: Option<&Memory>,
        state: &EnvState,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Action, Option<Memory>)>;
}

/// How a network turns its outputs into an action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActMode {
    /// Argmax of Q-values or the policy mode.
    Greedy,
    /// A categorical draw from the policy (actor-critic) or epsilon-greedy
    /// with the given epsilon (Q network).
    Sample { epsilon: f64 },
}

/// Epsilon-greedy over a Q-vector; ties go to the lowest action.
pub fn epsilon_greedy<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}

/// Picks an action from one network output row.
pub fn choose_action<R: Rng + ?Sized>(head: HeadKind, logits: &[f64], mode: ActMode, rng: &mut R) -> usize {
    match (head, mode) {
        (HeadKind::QValues, ActMode::Greedy) => argmax(logits),
        (HeadKind::QValues, ActMode::Sample { epsilon }) => epsilon_greedy(logits, epsilon, rng),
        (HeadKind::ActorCritic, ActMode::Greedy) => Categorical::new(logits).mode(),
        (HeadKind::ActorCritic, ActMode::Sample { .. }) => Categorical::new(logits).sample(rng),
    }
}

/// A network policy.
#[derive(Debug, Clone)]
pub struct NetPolicy<'a> {
    pub params: &'a PolicyParams,
    pub mode: ActMode,
}

impl Policy for NetPolicy<'_> {
    fn initial_memory(&self) -> Option<Memory> {
        self.params
            .spec()
            .arch
            .is_recurrent()
            .then(|| Memory::zeros(1, LSTM_HIDDEN))
    }

    fn act(
        &self,
        obs: &Observation,
        memory: Option<&Memory>,
        _state: &EnvState,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Action, Option<Memory>)> {
        let x = ndarray::ArrayView2::from_shape((1, obs.as_slice().len()), obs.as_slice())
            .map_err(|e| Error::Argument(e.to_string()))?;
        let out = forward(self.params, x, memory)?;
        let logits = out.logits.row(0).to_vec();
        let a = choose_action(self.params.spec().head, &logits, self.mode, rng);
        Ok((Action::from_index(a)?, out.memory))
    }
}

/// Steps along a shortest grid path to the goal. Reads the true state.
#[derive(Debug, Clone)]
pub struct GeodesicOracle {
    pub grid: PolarGrid,
}

impl Policy for GeodesicOracle {
    fn initial_memory(&self) -> Option<Memory> {
        None
    }

    fn act(&self, _obs: &Observation, _m: Option<&Memory>, state: &EnvState, _rng: &mut ChaCha8Rng) -> Result<(Action, Option<Memory>)> {
        Ok((self.grid.geodesic_action(state.agent_cell, state.goal_cell), None))
    }
}

/// Runs `n_episodes` episodes of `policy` in `env`. Recurrent memory starts
/// at zero each episode and is carried within it.
pub fn run_eval<P: Policy + ?Sized>(
    policy: &P,
    env: &mut Env,
    n_episodes: usize,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EpisodeStats>> {
    let mut out = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let mut obs = env.reset()?;
        let start = env.state().expect("reset").prev_distance;
        let mut tracker = EpisodeTracker::new(gamma, start);
        let mut memory = policy.initial_memory();
        loop {
            let state = env.state().expect("reset").clone();
            let (action, next_mem) = policy.act(&obs, memory.as_ref(), &state, rng)?;
            memory = next_mem;
            let step = env.step(action)?;
            tracker.push(step.reward);
            obs = step.obs;
            if step.done {
                out.push(tracker.finish(step.info.success, step.info.distance));
                break;
            }
        }
    }
    Ok(out)
}

/// [`run_eval`] of a [`NetPolicy`] that also scores an actor-critic's value
/// head: the explained variance of its per-step predictions against the
/// discounted returns-to-go of the finished episodes. `None` for Q networks.
pub fn run_eval_net(
    params: &PolicyParams,
    mode: ActMode,
    env: &mut Env,
    n_episodes: usize,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<EpisodeStats>, Option<f64>)> {
    let policy = NetPolicy { params, mode };
    let critic = params.spec().head == HeadKind::ActorCritic;
    let (mut preds, mut targets) = (Vec::new(), Vec::new());
    let mut out = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let mut obs = env.reset()?;
        let start = env.state().expect("reset").prev_distance;
        let mut tracker = EpisodeTracker::new(gamma, start);
        let mut memory = policy.initial_memory();
        let mut rewards = Vec::new();
        loop {
            let x = ndarray::ArrayView2::from_shape((1, obs.as_slice().len()), obs.as_slice())
                .map_err(|e| Error::Argument(e.to_string()))?;
            let net = forward(params, x, memory.as_ref())?;
            if critic {
                preds.push(net.value[[0, 0]]);
            }
            let a = choose_action(params.spec().head, net.logits.row(0).as_slice().expect("row"), mode, rng);
            memory = net.memory;
            let step = env.step(Action::from_index(a)?)?;
            tracker.push(step.reward);
            rewards.push(step.reward);
            obs = step.obs;
            if step.done {
                out.push(tracker.finish(step.info.success, step.info.distance));
                break;
            }
        }
        if critic {
            let mut g = 0.0;
            let mut rtg = vec![0.0; rewards.len()];
            for t in (0..rewards.len()).rev() {
                g = rewards[t] + gamma * g;
                rtg[t] = g;
            }
            targets.extend(rtg);
        }
    }
    let ev = if critic && targets.len() >= 2 {
        explained_variance(&preds, &targets)?
    } else {
        None
    };
    Ok((out, ev))
}

/// JSON summary of an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub sr: f64,
    pub mean_return: f64,
    pub mean_length: f64,
    pub ev_final: Option<f64>,
    pub n_episodes: usize,
}

impl EvalSummary {
    pub fn from_stats(stats: &[EpisodeStats], ev_final: Option<f64>) -> Result<Self> {
        Ok(Self {
            sr: success_rate(stats)?,
            mean_return: mean_return(stats)?,
            mean_length: stats.iter().map(|s| s.length as f64).sum::<f64>() / stats.len() as f64,
            ev_final,
            n_episodes: stats.len(),
        })
    }
}

pub fn export_metrics<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    crate::io::write_jsonl(path, records)
}

#[cfg(test)]
mod tests;
