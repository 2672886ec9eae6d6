use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{epsilon_at, DqnConfig, ReplayBatch, ReplayBuffer, Transition};
use crate::env::{Action, Env, EnvConfig, Observation};
use crate::eval::{epsilon_greedy, EpisodeStats, EpisodeTracker};
use crate::features::Normalizer;
use crate::nn::{backward, build_network, forward, forward_train, Adam, Arch, HeadKind, Memory, NetSpec, PolicyParams, Recurrence, LSTM_HIDDEN};
use crate::seed::derive_seed;
use crate::{Error, Result};

fn row(obs: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, obs.len()), obs).expect("one row")
}

/// Epsilon-greedy action from the Q-network; returns the next memory for
/// recurrent networks.
pub fn select_action(
    params: &PolicyParams,
    obs: &[f64],
    memory: Option<&Memory>,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, Option<Memory>)> {
    let out = forward(params, row(obs), memory)?;
    let q = out.value.row(0).to_vec();
    Ok((epsilon_greedy(&q, eps, rng), out.memory))
}

/// Q-values for a batch: recurrent networks unroll each sequence from zeroed
/// memory.
fn q_values(params: &PolicyParams, obs: ArrayView2<f64>, batch: &ReplayBatch, train: bool) -> Result<(Array2<f64>, Option<crate::nn::Tape>)> {
    let zeros = Memory::zeros(batch.batch, LSTM_HIDDEN);
    let resets = vec![false; obs.nrows()];
    let rec = params.spec().arch.is_recurrent().then_some(Recurrence {
        memory: &zeros,
        resets: &resets,
        steps: batch.steps,
    });
    if train {
        let (out, tape) = forward_train(params, obs, rec)?;
        Ok((out.value, Some(tape)))
    } else if let Some(rec) = rec {
        let (out, _) = forward_train(params, obs, Some(rec))?;
        Ok((out.value, None))
    } else {
        Ok((forward(params, obs, None)?.value, None))
    }
}

/// `y = r + (1 - done) gamma max_a' Q(s', a'; target)`.
pub fn td_targets(batch: &ReplayBatch, target: &PolicyParams, gamma: f64) -> Result<Vec<f64>> {
    let (q_next, _) = q_values(target, batch.next_obs.view(), batch, false)?;
    Ok((0..batch.rewards.len())
        .map(|i| {
            let max = q_next.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            batch.rewards[i] + if batch.dones[i] { 0.0 } else { gamma * max }
        })
        .collect())
}

/// Mean squared TD error over unmasked rows, and its parameter gradient.
pub fn dqn_loss(params: &PolicyParams, batch: &ReplayBatch, targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (q, tape) = q_values(params, batch.obs.view(), batch, true)?;
    let n_valid = batch.mask.iter().filter(|m| **m).count();
    if n_valid == 0 {
        return Err(Error::Argument("batch has no valid rows".into()));
    }
    let nf = n_valid as f64;
    let mut dq = Array2::zeros(q.raw_dim());
    let mut loss = 0.0;
    for i in 0..q.nrows() {
        if !batch.mask[i] {
            continue;
        }
        let err = q[[i, batch.actions[i]]] - targets[i];
        loss += err * err / nf;
        dq[[i, batch.actions[i]]] = 2.0 * err / nf;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("dqn loss {loss}")));
    }
    let zeros = Array2::zeros(q.raw_dim());
    let grads = backward(params, &tape.expect("training pass"), zeros.view(), dq.view())?;
    Ok((loss, grads))
}

/// One Adam step on the TD loss; the target network only supplies targets.
pub fn dqn_update(params: &mut PolicyParams, target: &PolicyParams, batch: &ReplayBatch, opt: &mut Adam, cfg: &DqnConfig) -> Result<f64> {
    let y = td_targets(batch, target, cfg.gamma)?;
    let (loss, grads) = dqn_loss(params, batch, &y)?;
    opt.step(params.as_mut_slice(), &grads, cfg.lr)?;
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters after dqn update".into()));
    }
    Ok(loss)
}

/// One line of the DQN metrics stream, written per finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnEpisodeRecord {
    pub step: u64,
    pub episode: u64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub length: usize,
    pub success: bool,
    pub epsilon: f64,
    pub loss: Option<f64>,
}

pub struct DqnOutcome {
    pub params: PolicyParams,
    pub metrics: Vec<DqnEpisodeRecord>,
    pub episodes: Vec<EpisodeStats>,
    pub optimizer_step: u64,
    pub rejected_updates: u64,
}

pub fn q_spec(env_cfg: &EnvConfig, arch: Arch) -> NetSpec {
    NetSpec::new(arch, &env_cfg.observation.shape(), Action::COUNT, HeadKind::QValues)
}

/// Single-environment DQN learner.
pub struct DqnTrainer {
    cfg: DqnConfig,
    env: Env,
    params: PolicyParams,
    target: PolicyParams,
    opt: Adam,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    step: u64,
    episode: u64,
    obs: Observation,
    memory: Option<Memory>,
    tracker: EpisodeTracker,
    last_loss: Option<f64>,
    rejected: u64,
}

impl DqnTrainer {
    pub fn new(env_cfg: &EnvConfig, normalizer: &Normalizer, cfg: DqnConfig, arch: Arch, seed: u64) -> Result<Self> {
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init", 0));
        let params = build_network(q_spec(env_cfg, arch), &mut init_rng)?;
        Self::with_params(env_cfg, normalizer, cfg, params, seed, 0)
    }

    pub fn with_params(env_cfg: &EnvConfig, normalizer: &Normalizer, cfg: DqnConfig, params: PolicyParams, seed: u64, start_step: u64) -> Result<Self> {
        cfg.validate()?;
        if params.spec().head != HeadKind::QValues {
            return Err(Error::Argument("dqn needs a Q-value network".into()));
        }
        let mut env = Env::new(env_cfg.clone(), normalizer.clone(), derive_seed(seed, "dqn-env", start_step))?;
        if env_cfg.observation.flat_len() != params.spec().obs_len() {
            return Err(Error::Config("network input does not match the observation".into()));
        }
        let obs = env.reset()?;
        let tracker = EpisodeTracker::new(cfg.gamma, env.state().expect("reset").prev_distance);
        let memory = params.spec().arch.is_recurrent().then(|| Memory::zeros(1, LSTM_HIDDEN));
        Ok(Self {
            replay: ReplayBuffer::new(cfg.buffer_capacity),
            target: params.clone(),
            opt: Adam::new(params.len()),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, "dqn-policy", start_step)),
            cfg,
            env,
            params,
            step: start_step,
            episode: 0,
            obs,
            memory,
            tracker,
            last_loss: None,
            rejected: 0,
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn target(&self) -> &PolicyParams {
        &self.target
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn optimizer_step(&self) -> u64 {
        self.opt.step_count()
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.total_steps
    }

    /// One environment step, plus an update and target sync when due.
    /// Returns the episode record when the step ended an episode.
    pub fn step_once(&mut self) -> Result<Option<(DqnEpisodeRecord, EpisodeStats)>> {
        let eps = epsilon_at(self.step, &self.cfg);
        let (a, mem) = select_action(&self.params, self.obs.as_slice(), self.memory.as_ref(), eps, &mut self.rng)?;
        self.memory = mem;
        let step = self.env.step(Action::from_index(a)?)?;
        self.tracker.push(step.reward);
        let to32 = |o: &Observation| o.as_slice().iter().map(|v| *v as f32).collect::<Vec<f32>>();
        self.replay.push(
            Transition {
                obs: to32(&self.obs),
                action: a,
                reward: step.reward,
                next_obs: to32(&step.obs),
                done: step.done,
            },
            self.episode,
        );
        self.step += 1;

        if self.step >= self.cfg.learn_start && self.step % self.cfg.update_every == 0 {
            let batch = if self.params.spec().arch.is_recurrent() {
                self.replay.sample_sequences(self.cfg.batch_size, self.cfg.seq_len, &mut self.rng)?
            } else {
                self.replay.sample(self.cfg.batch_size, &mut self.rng)?
            };
            match dqn_update(&mut self.params, &self.target, &batch, &mut self.opt, &self.cfg) {
                Ok(loss) => self.last_loss = Some(loss),
                Err(Error::NonFinite(_)) => self.rejected += 1,
                Err(e) => return Err(e),
            }
        }
        if self.step % self.cfg.target_sync_every == 0 {
            self.target = self.params.clone();
        }

        if step.done {
            let stats = self.tracker.finish(step.info.success, step.info.distance);
            let rec = DqnEpisodeRecord {
                step: self.step,
                episode: self.episode,
                ret: stats.return_undiscounted,
                length: stats.length,
                success: stats.success,
                epsilon: eps,
                loss: self.last_loss,
            };
            self.episode += 1;
            self.obs = self.env.reset()?;
            self.tracker = EpisodeTracker::new(self.cfg.gamma, self.env.state().expect("reset").prev_distance);
            if let Some(m) = self.memory.as_mut() {
                m.reset_rows(&[true]);
            }
            Ok(Some((rec, stats)))
        } else {
            self.obs = step.obs;
            Ok(None)
        }
    }

    /// Trains to completion, calling `on_episode` after each episode.
    pub fn train<F>(mut self, mut on_episode: F) -> Result<DqnOutcome>
    where
        F: FnMut(&DqnTrainer, &DqnEpisodeRecord) -> Result<()>,
    {
        let mut metrics = Vec::new();
        let mut episodes = Vec::new();
        while !self.is_done() {
            if let Some((rec, st)) = self.step_once()? {
                on_episode(&self, &rec)?;
                metrics.push(rec);
                episodes.push(st);
            }
        }
        Ok(DqnOutcome {
            optimizer_step: self.opt.step_count(),
            rejected_updates: self.rejected,
            params: self.params,
            metrics,
            episodes,
        })
    }
}

pub fn train_dqn(env_cfg: &EnvConfig, normalizer: &Normalizer, cfg: DqnConfig, arch: Arch, seed: u64) -> Result<DqnOutcome> {
    DqnTrainer::new(env_cfg, normalizer, cfg, arch, seed)?.train(|_, _| Ok(()))
}
