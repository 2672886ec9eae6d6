//! First-order meta-learning (ANIL-FOMAML) over scene-variant tasks.
//!
//! The inner loop adapts only the actor and critic heads with one plain
//! gradient step on a support rollout; the outer loop averages query-set
//! gradients taken at the adapted parameters and applies them to the shared
//! parameters with Adam.

#[cfg(test)]
mod tests;

use std::ops::Range;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvConfig, PolarGrid};
use crate::eval::{run_eval, ActMode, EpisodeStats, NetPolicy};
use crate::features::Normalizer;
use crate::nn::{clip_global_norm, Adam, BlockKind, HeadKind, PolicyParams};
use crate::ppo::{collect_rollout, full_batch_loss, LossCoefs, RolloutBuffer, VecEnv};
use crate::seed::derive_seed;
use crate::{Error, Result};

pub const REFLECTIVITY_RANGE: (f64, f64) = (0.4, 0.9);
pub const HALL_JITTER: f64 = 0.2;
/// Emitter height above the agent plane.
pub const EMITTER_OFFSET_RANGE: (f64, f64) = (0.3, 1.0);

/// One scene variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    /// Real reflectivity applied to all six surfaces.
    pub reflectivity: f64,
    /// Per-axis hall scale factors.
    pub hall_scale: [f64; 3],
    /// Emitter height above the agent plane, meters.
    pub emitter_offset_m: f64,
    pub seed: u64,
}

impl TaskSpec {
    /// `base` with this task's overrides. The grid is re-centered in the
    /// resized hall.
    pub fn apply(&self, base: &EnvConfig) -> Result<EnvConfig> {
        let mut cfg = base.clone();
        let d = &mut cfg.scene.hall_dims;
        d.x *= self.hall_scale[0];
        d.y *= self.hall_scale[1];
        d.z *= self.hall_scale[2];
        cfg.scene.wall_reflectivity = [Complex64::new(self.reflectivity, 0.0); 6];
        let centered = PolarGrid::centered_in(&cfg.scene);
        cfg.grid.center.x = centered.center.x;
        cfg.grid.center.y = centered.center.y;
        cfg.emitter_height_m = cfg.grid.agent_height_m + self.emitter_offset_m;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Independent task draws from the override distribution.
pub fn sample_tasks<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Result<Vec<TaskSpec>> {
    if n == 0 {
        return Err(Error::Argument("need at least one task".into()));
    }
    Ok((0..n)
        .map(|_| TaskSpec {
            reflectivity: rng.random_range(REFLECTIVITY_RANGE.0..=REFLECTIVITY_RANGE.1),
            hall_scale: std::array::from_fn(|_| rng.random_range(1.0 - HALL_JITTER..=1.0 + HALL_JITTER)),
            emitter_offset_m: rng.random_range(EMITTER_OFFSET_RANGE.0..=EMITTER_OFFSET_RANGE.1),
            seed: rng.random(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    pub meta_iters: u64,
    pub tasks_per_batch: usize,
    /// Outer Adam rate for the encoder, LSTM and actor head.
    pub outer_lr: f64,
    /// Outer Adam rate for the critic head.
    pub critic_lr: f64,
    pub inner_lr: f64,
    pub inner_steps: usize,
    /// Environments per support/query rollout.
    pub n_envs: usize,
    /// Support rollout size in training, total env steps.
    pub support_steps: usize,
    /// Query rollout size in training, total env steps.
    pub query_steps: usize,
    /// Support size in evaluation, whole episodes.
    pub support_eval_episodes: usize,
    /// Episodes averaged for the query return in evaluation.
    pub query_eval_episodes: usize,
    /// Held-out tasks scored after meta-training.
    pub eval_tasks: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            meta_iters: 2000,
            tasks_per_batch: 3,
            outer_lr: 1e-4,
            critic_lr: 1e-4,
            inner_lr: 3e-3,
            inner_steps: 1,
            n_envs: 8,
            support_steps: 128,
            query_steps: 128,
            support_eval_episodes: 5,
            query_eval_episodes: 20,
            eval_tasks: 5,
            gamma: 0.997,
            gae_lambda: 0.95,
            clip: 0.1,
            ent_coef: 0.02,
            vf_coef: 0.4,
            max_grad_norm: 0.5,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("meta: {m}")));
        if self.inner_steps == 0 {
            return bad("inner_steps must be at least 1");
        }
        if self.tasks_per_batch == 0 || self.n_envs == 0 {
            return bad("tasks_per_batch and n_envs must be positive");
        }
        for (name, steps) in [("support_steps", self.support_steps), ("query_steps", self.query_steps)] {
            if steps < self.n_envs || steps % self.n_envs != 0 {
                return bad(&format!("{name} must be a positive multiple of n_envs"));
            }
        }
        if self.support_eval_episodes == 0 || self.query_eval_episodes == 0 || self.eval_tasks == 0 {
            return bad("evaluation episode counts must be positive");
        }
        if !(self.inner_lr >= 0.0 && self.outer_lr >= 0.0 && self.critic_lr >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0 && self.max_grad_norm > 0.0) {
            return bad("clip and max_grad_norm must be positive");
        }
        Ok(())
    }

    pub fn coefs(&self) -> LossCoefs {
        LossCoefs {
            clip: self.clip,
            vf_coef: self.vf_coef,
            ent_coef: self.ent_coef,
        }
    }
}

const HEADS: [BlockKind; 2] = [BlockKind::ActorHead, BlockKind::CriticHead];

/// Heads-only plain gradient steps on a support buffer collected under
/// `params`. Returns a detached adapted copy.
pub fn adapt_on_buffer(params: &PolicyParams, support: &RolloutBuffer, cfg: &MetaConfig) -> Result<PolicyParams> {
    let mut adapted = params.clone();
    let ranges: Vec<Range<usize>> = HEADS.iter().map(|&b| params.block_range(b)).collect();
    for _ in 0..cfg.inner_steps {
        let (_, grads) = full_batch_loss(&adapted, support, &cfg.coefs())?;
        let data = adapted.as_mut_slice();
        for r in &ranges {
            for i in r.clone() {
                data[i] -= cfg.inner_lr * grads[i];
            }
        }
    }
    if !adapted.is_finite() {
        return Err(Error::NonFinite("adapted parameters".into()));
    }
    Ok(adapted)
}

fn task_envs(env_cfg: &EnvConfig, norm: &Normalizer, n: usize, seed: u64, tag: &str) -> Result<Vec<Env>> {
    (0..n as u64)
        .map(|e| Env::new(env_cfg.clone(), norm.clone(), derive_seed(seed, tag, e)))
        .collect()
}

/// Rollout of `steps` total env steps on fresh environments, with advantages.
fn task_rollout(
    params: &PolicyParams,
    env_cfg: &EnvConfig,
    norm: &Normalizer,
    cfg: &MetaConfig,
    steps: usize,
    seed: u64,
    tag: &str,
) -> Result<RolloutBuffer> {
    let envs = task_envs(env_cfg, norm, cfg.n_envs, seed, tag)?;
    let mut venv = VecEnv::new(envs, params.spec().arch.is_recurrent(), cfg.gamma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, u64::MAX));
    let mut buf = collect_rollout(&mut venv, params, steps / cfg.n_envs, &mut rng)?;
    buf.compute_advantages(cfg.gamma, cfg.gae_lambda)?;
    Ok(buf)
}

/// Rewards collected per environment.
fn rollout_return(buf: &RolloutBuffer) -> f64 {
    buf.rewards.iter().sum::<f64>() / buf.n_envs as f64
}

fn check_actor_critic(params: &PolicyParams) -> Result<()> {
    if params.spec().head != HeadKind::ActorCritic {
        return Err(Error::Argument("meta-learning needs an actor-critic network".into()));
    }
    Ok(())
}

/// Collects the training support rollout for `task` and adapts the heads.
pub fn inner_adapt(
    params: &PolicyParams,
    base: &EnvConfig,
    norm: &Normalizer,
    task: &TaskSpec,
    cfg: &MetaConfig,
) -> Result<(PolicyParams, RolloutBuffer)> {
    check_actor_critic(params)?;
    let env_cfg = task.apply(base)?;
    let support = task_rollout(params, &env_cfg, norm, cfg, cfg.support_steps, task.seed, "meta-support")?;
    let adapted = adapt_on_buffer(params, &support, cfg)?;
    Ok((adapted, support))
}

/// Adaptation and query gradient for one task.
#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub support_return: f64,
    pub query_return: f64,
    /// PPO-loss gradient on the query rollout, taken at the adapted parameters.
    pub query_grad: Vec<f64>,
}

pub fn task_query_gradient(
    params: &PolicyParams,
    base: &EnvConfig,
    norm: &Normalizer,
    task: &TaskSpec,
    cfg: &MetaConfig,
) -> Result<TaskOutcome> {
    let (adapted, support) = inner_adapt(params, base, norm, task, cfg)?;
    let env_cfg = task.apply(base)?;
    let query = task_rollout(&adapted, &env_cfg, norm, cfg, cfg.query_steps, task.seed, "meta-query")?;
    let (_, query_grad) = full_batch_loss(&adapted, &query, &cfg.coefs())?;
    Ok(TaskOutcome {
        support_return: rollout_return(&support),
        query_return: rollout_return(&query),
        query_grad,
    })
}

/// Result of one outer update.
#[derive(Debug, Clone)]
pub struct OuterStep {
    pub tasks: Vec<TaskOutcome>,
    /// Mean of the per-task query gradients, before clipping.
    pub mean_grad: Vec<f64>,
    pub grad_norm: f64,
}

/// Outer Adam learning rate per parameter block.
fn outer_ranges(params: &PolicyParams, cfg: &MetaConfig) -> Vec<(Range<usize>, f64)> {
    [BlockKind::Encoder, BlockKind::Lstm, BlockKind::ActorHead, BlockKind::CriticHead]
        .into_iter()
        .map(|b| {
            let lr = if b == BlockKind::CriticHead { cfg.critic_lr } else { cfg.outer_lr };
            (params.block_range(b), lr)
        })
        .filter(|(r, _)| !r.is_empty())
        .collect()
}

/// Clipped Adam step with per-block rates; returns the pre-clip norm.
fn apply_outer(params: &mut PolicyParams, opt: &mut Adam, grad: &[f64], cfg: &MetaConfig) -> Result<f64> {
    let mut clipped = grad.to_vec();
    let norm = clip_global_norm(&mut clipped, cfg.max_grad_norm);
    let ranges = outer_ranges(params, cfg);
    opt.step_ranges(params.as_mut_slice(), &clipped, &ranges)?;
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters after outer step".into()));
    }
    Ok(norm)
}

/// Adapts to every task, then applies the mean query gradient to `params`.
/// Tasks run concurrently; the reduction is in task order.
pub fn fomaml_outer_step(
    params: &mut PolicyParams,
    opt: &mut Adam,
    tasks: &[TaskSpec],
    base: &EnvConfig,
    norm: &Normalizer,
    cfg: &MetaConfig,
) -> Result<OuterStep> {
    if tasks.is_empty() {
        return Err(Error::Argument("outer step needs at least one task".into()));
    }
    let shared: &PolicyParams = params;
    let outcomes = tasks
        .par_iter()
        .map(|t| task_query_gradient(shared, base, norm, t, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut mean_grad = vec![0.0; params.len()];
    for o in &outcomes {
        for (m, g) in mean_grad.iter_mut().zip(&o.query_grad) {
            *m += g;
        }
    }
    let k = outcomes.len() as f64;
    mean_grad.iter_mut().for_each(|m| *m /= k);
    let grad_norm = apply_outer(params, opt, &mean_grad, cfg)?;
    Ok(OuterStep {
        tasks: outcomes,
        mean_grad,
        grad_norm,
    })
}

/// One line of the meta-metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaMetrics {
    pub meta_iter: u64,
    pub mean_query_return: f64,
    pub per_task_returns: Vec<f64>,
    /// Mean over tasks of query return minus support return.
    pub adaptation_gain: f64,
}

impl MetaMetrics {
    fn from_step(meta_iter: u64, step: &OuterStep) -> Self {
        let per_task_returns: Vec<f64> = step.tasks.iter().map(|t| t.query_return).collect();
        let k = per_task_returns.len() as f64;
        Self {
            meta_iter,
            mean_query_return: per_task_returns.iter().sum::<f64>() / k,
            per_task_returns,
            adaptation_gain: step.tasks.iter().map(|t| t.query_return - t.support_return).sum::<f64>() / k,
        }
    }
}

pub struct MetaOutcome {
    pub params: PolicyParams,
    pub metrics: Vec<MetaMetrics>,
    pub optimizer_step: u64,
}

/// Runs outer steps on freshly sampled task batches.
pub struct MetaTrainer {
    base: EnvConfig,
    norm: Normalizer,
    cfg: MetaConfig,
    params: PolicyParams,
    opt: Adam,
    iter: u64,
    seed: u64,
}

impl MetaTrainer {
    /// Starts (or resumes, with `start_iter > 0`) from `params`.
    pub fn new(
        base: &EnvConfig,
        norm: &Normalizer,
        cfg: MetaConfig,
        params: PolicyParams,
        seed: u64,
        start_iter: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        base.validate()?;
        check_actor_critic(&params)?;
        if params.spec().obs_len() != base.observation.flat_len() {
            return Err(Error::Config("network input does not match the observation".into()));
        }
        Ok(Self {
            base: base.clone(),
            norm: norm.clone(),
            opt: Adam::new(params.len()),
            cfg,
            params,
            iter: start_iter,
            seed,
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn iteration(&self) -> u64 {
        self.iter
    }

    pub fn optimizer_step(&self) -> u64 {
        self.opt.step_count()
    }

    pub fn is_done(&self) -> bool {
        self.iter >= self.cfg.meta_iters
    }

    /// Task batch of iteration `iter`.
    pub fn tasks_for(&self, iter: u64) -> Result<Vec<TaskSpec>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "meta-tasks", iter));
        sample_tasks(&mut rng, self.cfg.tasks_per_batch)
    }

    pub fn step_once(&mut self) -> Result<MetaMetrics> {
        let tasks = self.tasks_for(self.iter)?;
        let step = fomaml_outer_step(&mut self.params, &mut self.opt, &tasks, &self.base, &self.norm, &self.cfg)?;
        self.iter += 1;
        Ok(MetaMetrics::from_step(self.iter, &step))
    }

    pub fn train<F>(mut self, mut on_iter: F) -> Result<MetaOutcome>
    where
        F: FnMut(&MetaTrainer, &MetaMetrics) -> Result<()>,
    {
        let mut metrics = Vec::new();
        while !self.is_done() {
            let m = self.step_once()?;
            on_iter(&self, &m)?;
            metrics.push(m);
        }
        Ok(MetaOutcome {
            optimizer_step: self.opt.step_count(),
            params: self.params,
            metrics,
        })
    }
}

/// Held-out evaluation of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaEval {
    pub task: TaskSpec,
    /// Mean returns of the unadapted parameters on the query episodes.
    pub zero_shot_return: f64,
    pub zero_shot_discounted: f64,
    /// Mean returns after adaptation on the same query episodes.
    pub query_return: f64,
    pub query_discounted: f64,
    pub support_steps: usize,
}

/// Rollout covering exactly `n_episodes` whole episodes on one environment.
fn collect_episodes(params: &PolicyParams, env: Env, n_episodes: usize, cfg: &MetaConfig, rng: &mut ChaCha8Rng) -> Result<RolloutBuffer> {
    let chunk = env.config().reward.max_steps;
    let mut venv = VecEnv::new(vec![env], params.spec().arch.is_recurrent(), cfg.gamma)?;
    let mut parts: Vec<RolloutBuffer> = Vec::new();
    let mut done = 0;
    while done < n_episodes {
        let mut buf = collect_rollout(&mut venv, params, chunk, rng)?;
        buf.compute_advantages(cfg.gamma, cfg.gae_lambda)?;
        done += buf.episodes.len();
        parts.push(buf);
    }
    let mut out = parts.remove(0);
    for p in parts {
        out.obs.append(ndarray::Axis(0), p.obs.view()).expect("equal widths");
        out.actions.extend(p.actions);
        out.log_probs.extend(p.log_probs);
        out.values.extend(p.values);
        out.rewards.extend(p.rewards);
        out.dones.extend(p.dones);
        out.starts.extend(p.starts);
        out.advantages.extend(p.advantages);
        out.returns.extend(p.returns);
        out.episodes.extend(p.episodes);
        out.bootstrap = p.bootstrap;
    }
    // cut right after the last requested episode ends
    let end = out
        .dones
        .iter()
        .enumerate()
        .filter(|(_, &d)| d)
        .nth(n_episodes - 1)
        .map(|(i, _)| i + 1)
        .expect("enough finished episodes");
    out.obs = out.obs.slice(ndarray::s![..end, ..]).to_owned();
    for v in [&mut out.log_probs, &mut out.values, &mut out.rewards, &mut out.advantages, &mut out.returns] {
        v.truncate(end);
    }
    out.actions.truncate(end);
    out.dones.truncate(end);
    out.starts.truncate(end);
    out.episodes.truncate(n_episodes);
    out.n_steps = end;
    Ok(out)
}

fn mean_returns(stats: &[EpisodeStats]) -> (f64, f64) {
    let n = stats.len() as f64;
    (
        stats.iter().map(|s| s.return_undiscounted).sum::<f64>() / n,
        stats.iter().map(|s| s.return_discounted).sum::<f64>() / n,
    )
}

/// Adapts on `support_eval_episodes` whole episodes of `task`, then reports
/// mean query returns before and after adaptation on identical episode seeds.
pub fn meta_eval(params: &PolicyParams, base: &EnvConfig, norm: &Normalizer, task: &TaskSpec, cfg: &MetaConfig) -> Result<MetaEval> {
    cfg.validate()?;
    check_actor_critic(params)?;
    let env_cfg = task.apply(base)?;
    let env = Env::new(env_cfg.clone(), norm.clone(), derive_seed(task.seed, "meta-eval-support", 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(task.seed, "meta-eval-policy", 0));
    let support = collect_episodes(params, env, cfg.support_eval_episodes, cfg, &mut rng)?;
    let adapted = adapt_on_buffer(params, &support, cfg)?;
    let query = |p: &PolicyParams| -> Result<(f64, f64)> {
        let mut env = Env::new(env_cfg.clone(), norm.clone(), derive_seed(task.seed, "meta-eval-query", 0))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(task.seed, "meta-eval-query-policy", 0));
        let policy = NetPolicy {
            params: p,
            mode: ActMode::Sample { epsilon: 0.0 },
        };
        let stats = run_eval(&policy, &mut env, cfg.query_eval_episodes, cfg.gamma, &mut rng)?;
        Ok(mean_returns(&stats))
    };
    let (zero_shot_return, zero_shot_discounted) = query(params)?;
    let (query_return, query_discounted) = query(&adapted)?;
    Ok(MetaEval {
        task: task.clone(),
        zero_shot_return,
        zero_shot_discounted,
        query_return,
        query_discounted,
        support_steps: support.len(),
    })
}
