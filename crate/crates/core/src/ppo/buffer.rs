use ndarray::{Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::compute_gae;
use crate::env::{Action, Env, Step};
use crate::eval::{EpisodeStats, EpisodeTracker};
use crate::nn::{forward, Categorical, Memory, PolicyParams, LSTM_HIDDEN};
use crate::{Error, Result};

/// Environments stepped in lockstep, with their current observations,
/// recurrent memory and running episode statistics.
#[derive(Debug, Clone)]
pub struct VecEnv {
    envs: Vec<Env>,
    obs: Array2<f64>,
    memory: Option<Memory>,
    /// The current observation starts an episode.
    starts: Vec<bool>,
    trackers: Vec<EpisodeTracker>,
    gamma: f64,
}

impl VecEnv {
    /// Resets every environment.
    pub fn new(mut envs: Vec<Env>, recurrent: bool, gamma: f64) -> Result<Self> {
        if envs.is_empty() {
            return Err(Error::Argument("vectorized env needs at least one env".into()));
        }
        let mut rows = Vec::with_capacity(envs.len());
        let mut trackers = Vec::with_capacity(envs.len());
        for env in &mut envs {
            let obs = env.reset()?;
            rows.push(obs.as_slice().to_vec());
            trackers.push(EpisodeTracker::new(gamma, env.state().expect("reset").prev_distance));
        }
        let len = rows[0].len();
        let obs = Array2::from_shape_vec((envs.len(), len), rows.concat()).expect("equal lengths");
        let n = envs.len();
        Ok(Self {
            envs,
            obs,
            memory: recurrent.then(|| Memory::zeros(n, LSTM_HIDDEN)),
            starts: vec![true; n],
            trackers,
            gamma,
        })
    }

    pub fn n_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn obs_len(&self) -> usize {
        self.obs.ncols()
    }

    pub fn envs(&self) -> &[Env] {
        &self.envs
    }

    fn step_all(&mut self, actions: &[usize]) -> Result<Vec<(Step, Option<EpisodeStats>)>> {
        let gamma = self.gamma;
        self.envs
            .par_iter_mut()
            .zip(self.trackers.par_iter_mut())
            .zip(actions.par_iter())
            .map(|((env, tracker), &a)| {
                let step = env.step(Action::from_index(a)?)?;
                tracker.push(step.reward);
                let mut finished = None;
                let mut step = step;
                if step.done {
                    finished = Some(tracker.finish(step.info.success, step.info.distance));
                    step.obs = env.reset()?;
                    *tracker = EpisodeTracker::new(gamma, env.state().expect("reset").prev_distance);
                }
                Ok((step, finished))
            })
            .collect()
    }
}

/// One rollout, rows time-major: row `t * n_envs + e`.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub n_steps: usize,
    pub obs: Array2<f64>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// The transition at this row ended its episode.
    pub dones: Vec<bool>,
    /// Memory is zeroed before this row (first step of an episode).
    pub starts: Vec<bool>,
    /// Memory entering row block 0, before `starts` applies.
    pub memory0: Option<Memory>,
    pub bootstrap: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Episodes that finished during the rollout.
    pub episodes: Vec<EpisodeStats>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Fills `advantages`/`returns` per environment sequence.
    pub fn compute_advantages(&mut self, gamma: f64, lam: f64) -> Result<()> {
        let (e_n, t_n) = (self.n_envs, self.n_steps);
        self.advantages = vec![0.0; e_n * t_n];
        self.returns = vec![0.0; e_n * t_n];
        for e in 0..e_n {
            let idx: Vec<usize> = (0..t_n).map(|t| t * e_n + e).collect();
            let r: Vec<f64> = idx.iter().map(|&i| self.rewards[i]).collect();
            let v: Vec<f64> = idx.iter().map(|&i| self.values[i]).collect();
            let d: Vec<bool> = idx.iter().map(|&i| self.dones[i]).collect();
            let (adv, ret) = compute_gae(&r, &v, &d, self.bootstrap[e], gamma, lam)?;
            for (k, &i) in idx.iter().enumerate() {
                self.advantages[i] = adv[k];
                self.returns[i] = ret[k];
            }
        }
        Ok(())
    }
}

/// Steps all environments `n_steps` times under `params`, sampling actions;
/// finished environments reset automatically and their memory is zeroed.
pub fn collect_rollout(
    venv: &mut VecEnv,
    params: &PolicyParams,
    n_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutBuffer> {
    let e_n = venv.n_envs();
    let len = venv.obs_len();
    let rows = e_n * n_steps;
    let mut obs = Array2::zeros((rows, len));
    let mut actions = Vec::with_capacity(rows);
    let mut log_probs = Vec::with_capacity(rows);
    let mut values = Vec::with_capacity(rows);
    let mut rewards = Vec::with_capacity(rows);
    let mut dones = Vec::with_capacity(rows);
    let mut starts = Vec::with_capacity(rows);
    let mut episodes = Vec::new();
    let memory0 = venv.memory.clone();
    for t in 0..n_steps {
        obs.slice_mut(ndarray::s![t * e_n..(t + 1) * e_n, ..]).assign(&venv.obs);
        starts.extend_from_slice(&venv.starts);
        if let Some(m) = venv.memory.as_mut() {
            m.reset_rows(&venv.starts);
        }
        let out = forward(params, venv.obs.view(), venv.memory.as_ref())?;
        if !out.is_finite() {
            return Err(Error::NonFinite("policy output during rollout".into()));
        }
        let mut acts = Vec::with_capacity(e_n);
        for e in 0..e_n {
            let dist = Categorical::new(out.logits.row(e).as_slice().expect("row"));
            let a = dist.sample(rng);
            acts.push(a);
            log_probs.push(dist.log_prob(a));
            values.push(out.value[[e, 0]]);
        }
        venv.memory = out.memory;
        let results = venv.step_all(&acts)?;
        for (e, (step, finished)) in results.into_iter().enumerate() {
            rewards.push(step.reward);
            dones.push(step.done);
            venv.starts[e] = step.done;
            venv.obs.row_mut(e).assign(&ArrayView2::from_shape((1, len), step.obs.as_slice()).expect("len").row(0));
            episodes.extend(finished);
        }
        actions.extend(acts);
    }
    let mut mem = venv.memory.clone();
    if let Some(m) = mem.as_mut() {
        m.reset_rows(&venv.starts);
    }
    let boot = forward(params, venv.obs.view(), mem.as_ref())?;
    Ok(RolloutBuffer {
        n_envs: e_n,
        n_steps,
        obs,
        actions,
        log_probs,
        values,
        rewards,
        dones,
        starts,
        memory0,
        bootstrap: boot.value.column(0).to_vec(),
        advantages: Vec::new(),
        returns: Vec::new(),
        episodes,
    })
}
