use std::collections::VecDeque;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{collect_rollout, normalize_advantages, ppo_loss, LossCoefs, LossStats, Minibatch, PpoConfig, RolloutBuffer, VecEnv};
use crate::env::{Env, EnvConfig};
use crate::eval::{explained_variance, EpisodeStats};
use crate::features::Normalizer;
use crate::nn::{build_network, clip_global_norm, Adam, Arch, HeadKind, Memory, NetSpec, PolicyParams, Recurrence};
use crate::seed::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub lr: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub ev: Option<f64>,
    /// Clip fraction and largest `|ratio - 1|` of the very first minibatch,
    /// evaluated at the collection-time parameters.
    pub first_clip_frac: f64,
    pub first_max_ratio_dev: f64,
    pub n_minibatches: usize,
}

fn gather_rows(src: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), src.ncols()));
    for (mut dst, &r) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(&src.row(r));
    }
    out
}

/// Minibatch data copied out of a rollout buffer.
struct OwnedBatch {
    obs: Array2<f64>,
    actions: Vec<usize>,
    old_log_probs: Vec<f64>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
    resets: Vec<bool>,
    memory: Option<Memory>,
    steps: usize,
}

impl OwnedBatch {
    /// `group` lists buffer rows (feedforward) or environment indices
    /// (recurrent, whole sequences in time-major order). Advantages are
    /// normalized within the batch.
    fn gather(buf: &RolloutBuffer, group: &[usize], recurrent: bool) -> Result<Self> {
        let (rows, memory) = if recurrent {
            let k = group.len();
            let rows: Vec<usize> = (0..buf.n_steps)
                .flat_map(|t| group.iter().map(move |&e| t * buf.n_envs + e))
                .collect();
            let m0 = buf.memory0.as_ref().ok_or_else(|| Error::Usage("recurrent buffer without memory".into()))?;
            let mut mem = Memory::zeros(k, m0.hidden());
            for (j, &e) in group.iter().enumerate() {
                mem.h.row_mut(j).assign(&m0.h.row(e));
                mem.c.row_mut(j).assign(&m0.c.row(e));
            }
            (rows, Some(mem))
        } else {
            (group.to_vec(), None)
        };
        let pick = |v: &[f64]| rows.iter().map(|&r| v[r]).collect::<Vec<f64>>();
        let mut advantages = pick(&buf.advantages);
        normalize_advantages(&mut advantages);
        Ok(Self {
            obs: gather_rows(&buf.obs, &rows),
            actions: rows.iter().map(|&r| buf.actions[r]).collect(),
            old_log_probs: pick(&buf.log_probs),
            advantages,
            returns: pick(&buf.returns),
            resets: rows.iter().map(|&r| buf.starts[r]).collect(),
            memory,
            steps: buf.n_steps,
        })
    }

    fn minibatch(&self) -> Minibatch<'_> {
        Minibatch {
            obs: self.obs.view(),
            actions: &self.actions,
            old_log_probs: &self.old_log_probs,
            advantages: &self.advantages,
            returns: &self.returns,
            recurrence: self.memory.as_ref().map(|m| Recurrence {
                memory: m,
                resets: &self.resets,
                steps: self.steps,
            }),
        }
    }
}

/// PPO loss and gradient over the whole buffer as one batch.
pub fn full_batch_loss(params: &PolicyParams, buf: &RolloutBuffer, coefs: &LossCoefs) -> Result<(LossStats, Vec<f64>)> {
    if buf.advantages.len() != buf.len() {
        return Err(Error::Usage("advantages must be computed before the loss".into()));
    }
    let recurrent = params.spec().arch.is_recurrent();
    let group: Vec<usize> = if recurrent { (0..buf.n_envs).collect() } else { (0..buf.len()).collect() };
    let batch = OwnedBatch::gather(buf, &group, recurrent)?;
    ppo_loss(params, &batch.minibatch(), coefs)
}

/// Runs `cfg.epochs` passes of shuffled minibatch updates over `buf`.
/// Feedforward minibatches draw individual steps; recurrent minibatches draw
/// whole environment sequences so stored memory stays consistent.
pub fn ppo_update(
    params: &mut PolicyParams,
    opt: &mut Adam,
    buf: &RolloutBuffer,
    cfg: &PpoConfig,
    progress: f64,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    if buf.advantages.len() != buf.len() {
        return Err(Error::Usage("advantages must be computed before the update".into()));
    }
    let lr = cfg.lr_at(progress);
    let coefs = cfg.coefs();
    let recurrent = params.spec().arch.is_recurrent();
    let mut st = UpdateStats {
        lr,
        ev: explained_variance(&buf.values, &buf.returns)?,
        ..Default::default()
    };
    let mut first = true;
    for _ in 0..cfg.epochs {
        let groups: Vec<Vec<usize>> = if recurrent {
            let mut envs: Vec<usize> = (0..buf.n_envs).collect();
            envs.shuffle(rng);
            let per = (cfg.minibatch / buf.n_steps).max(1);
            envs.chunks(per).map(<[usize]>::to_vec).collect()
        } else {
            let mut idx: Vec<usize> = (0..buf.len()).collect();
            idx.shuffle(rng);
            idx.chunks(cfg.minibatch).map(<[usize]>::to_vec).collect()
        };
        for group in groups {
            let batch = OwnedBatch::gather(buf, &group, recurrent)?;
            let mb = batch.minibatch();
            let (ls, mut grads) = ppo_loss(params, &mb, &coefs)?;
            if first {
                st.first_clip_frac = ls.clip_frac;
                st.first_max_ratio_dev = ls.max_ratio_dev;
                first = false;
            }
            st.grad_norm += clip_global_norm(&mut grads, cfg.max_grad_norm);
            opt.step(params.as_mut_slice(), &grads, lr)?;
            if !params.is_finite() {
                return Err(Error::NonFinite("parameters after ppo update".into()));
            }
            st.policy_loss += ls.policy_loss;
            st.value_loss += ls.value_loss;
            st.entropy += ls.entropy;
            st.clip_frac += ls.clip_frac;
            st.approx_kl += ls.approx_kl;
            st.n_minibatches += 1;
        }
    }
    let m = st.n_minibatches.max(1) as f64;
    st.policy_loss /= m;
    st.value_loss /= m;
    st.entropy /= m;
    st.clip_frac /= m;
    st.approx_kl /= m;
    st.grad_norm /= m;
    Ok(st)
}

/// One line of the PPO metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoMetrics {
    pub update: u64,
    pub step: u64,
    pub mean_return: Option<f64>,
    pub success_rate_window: Option<f64>,
    pub ev: Option<f64>,
    pub entropy: f64,
    pub clip_frac: f64,
    pub lr: f64,
    pub value_loss: f64,
}

pub struct PpoOutcome {
    pub params: PolicyParams,
    pub metrics: Vec<PpoMetrics>,
    pub episodes: Vec<EpisodeStats>,
    pub optimizer_step: u64,
}

/// Alternates rollouts and updates until `total_steps` environment steps.
pub struct PpoTrainer {
    cfg: PpoConfig,
    venv: VecEnv,
    params: PolicyParams,
    opt: Adam,
    step: u64,
    update: u64,
    rng: ChaCha8Rng,
    window: VecDeque<EpisodeStats>,
}

/// Network spec for an environment config.
pub fn actor_critic_spec(env_cfg: &EnvConfig, arch: Arch) -> NetSpec {
    NetSpec::new(arch, &env_cfg.observation.shape(), crate::env::Action::COUNT, HeadKind::ActorCritic)
}

impl PpoTrainer {
    pub fn new(env_cfg: &EnvConfig, normalizer: &Normalizer, cfg: PpoConfig, arch: Arch, seed: u64) -> Result<Self> {
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init", 0));
        let params = build_network(actor_critic_spec(env_cfg, arch), &mut init_rng)?;
        Self::with_params(env_cfg, normalizer, cfg, params, seed, 0)
    }

    /// Continues from `params` at environment step `start_step` (resume).
    pub fn with_params(
        env_cfg: &EnvConfig,
        normalizer: &Normalizer,
        cfg: PpoConfig,
        params: PolicyParams,
        seed: u64,
        start_step: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if params.spec().head != HeadKind::ActorCritic {
            return Err(Error::Argument("ppo needs an actor-critic network".into()));
        }
        let epoch = start_step.wrapping_mul(1 << 16);
        let envs = (0..cfg.n_envs)
            .map(|e| Env::new(env_cfg.clone(), normalizer.clone(), derive_seed(seed, "ppo-env", epoch + e as u64)))
            .collect::<Result<Vec<_>>>()?;
        let venv = VecEnv::new(envs, params.spec().arch.is_recurrent(), cfg.gamma)?;
        if venv.obs_len() != params.spec().obs_len() {
            return Err(Error::Config("network input does not match the observation".into()));
        }
        let opt = Adam::new(params.len());
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, "ppo-policy", start_step)),
            cfg,
            venv,
            params,
            opt,
            step: start_step,
            update: 0,
            window: VecDeque::new(),
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn into_params(self) -> PolicyParams {
        self.params
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn optimizer_step(&self) -> u64 {
        self.opt.step_count()
    }

    pub fn config(&self) -> &PpoConfig {
        &self.cfg
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.total_steps
    }

    /// One rollout plus one update.
    pub fn update_once(&mut self) -> Result<(PpoMetrics, UpdateStats, Vec<EpisodeStats>)> {
        let progress = self.step as f64 / self.cfg.total_steps as f64;
        let mut buf = collect_rollout(&mut self.venv, &self.params, self.cfg.rollout_steps, &mut self.rng)?;
        buf.compute_advantages(self.cfg.gamma, self.cfg.gae_lambda)?;
        let st = ppo_update(&mut self.params, &mut self.opt, &buf, &self.cfg, progress, &mut self.rng)?;
        self.step += buf.len() as u64;
        self.update += 1;
        for ep in &buf.episodes {
            self.window.push_back(ep.clone());
            if self.window.len() > self.cfg.window {
                self.window.pop_front();
            }
        }
        let (mean_return, sr) = if self.window.is_empty() {
            (None, None)
        } else {
            let n = self.window.len() as f64;
            (
                Some(self.window.iter().map(|e| e.return_undiscounted).sum::<f64>() / n),
                Some(self.window.iter().filter(|e| e.success).count() as f64 / n),
            )
        };
        let m = PpoMetrics {
            update: self.update,
            step: self.step,
            mean_return,
            success_rate_window: sr,
            ev: st.ev,
            entropy: st.entropy,
            clip_frac: st.clip_frac,
            lr: st.lr,
            value_loss: st.value_loss,
        };
        Ok((m, st, buf.episodes))
    }

    /// Trains to completion, calling `on_update` after every update.
    pub fn train<F>(mut self, mut on_update: F) -> Result<PpoOutcome>
    where
        F: FnMut(&PpoTrainer, &PpoMetrics) -> Result<()>,
    {
        let mut metrics = Vec::new();
        let mut episodes = Vec::new();
        while !self.is_done() {
            let (m, _, eps) = self.update_once()?;
            on_update(&self, &m)?;
            metrics.push(m);
            episodes.extend(eps);
        }
        let optimizer_step = self.opt.step_count();
        Ok(PpoOutcome {
            params: self.params,
            metrics,
            episodes,
            optimizer_step,
        })
    }
}

pub fn train_ppo(env_cfg: &EnvConfig, normalizer: &Normalizer, cfg: PpoConfig, arch: Arch, seed: u64) -> Result<PpoOutcome> {
    PpoTrainer::new(env_cfg, normalizer, cfg, arch, seed)?.train(|_, _| Ok(()))
}
