//! The experiment commands behind the `rfseeker` binary.
//!
//! Each command reads an [`ExperimentConfig`], writes a resolved copy into
//! the output directory and emits its artifacts there. Outputs depend only on
//! the config and the master seed.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AgentKind, ExperimentConfig};
use crate::dataset::GridDataset;
use crate::dqn::DqnTrainer;
use crate::env::{Env, EnvConfig};
use crate::eval::{export_heatmap, feature_heatmap, run_eval_net, ActMode, EpisodeStats, EvalSummary};
use crate::features::Normalizer;
use crate::io::{write_json, JsonlWriter};
use crate::meta::{meta_eval, sample_tasks, MetaEval, MetaTrainer};
use crate::nn::{build_network, config_hash, load_checkpoint, save_checkpoint, PolicyParams};
use crate::ppo::{actor_critic_spec, PpoTrainer};
use crate::seed::derive_seed;
use crate::sim::Scene;
use crate::{Error, Result};

pub const RESOLVED_CONFIG: &str = "config.resolved.json";
pub const NORMALIZER: &str = "normalizer.json";
pub const GRID_FILE: &str = "grid.bin";
pub const METRICS: &str = "metrics.jsonl";
pub const META_METRICS: &str = "meta_metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.json";
pub const TRAIN_SUMMARY: &str = "train_summary.json";
pub const META_EVAL: &str = "meta_eval.json";
pub const EVAL_EPISODES: &str = "eval_episodes.jsonl";
pub const EVAL_SUMMARY: &str = "eval_summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Train,
    MetaTrain,
    Eval,
    Heatmap,
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Print progress lines to stderr.
    pub verbose: bool,
}

/// Loads `config_path`, applies the overrides and runs `cmd`. Returns the
/// output directory.
pub fn run(cmd: Command, config_path: &Path, opts: &RunOptions) -> Result<PathBuf> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    if let Some(seed) = opts.seed {
        cfg.seeds.master = seed;
    }
    if let Some(out) = &opts.out {
        cfg.out_dir = out.clone();
    }
    run_config(cmd, &cfg, opts)
}

/// Runs `cmd` on an already resolved config.
pub fn run_config(cmd: Command, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<PathBuf> {
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_json(&out.join(RESOLVED_CONFIG), cfg)?;
    match cmd {
        Command::Simulate => cmd_simulate(cfg, &out),
        Command::Train => cmd_train(cfg, &out, opts),
        Command::MetaTrain => cmd_meta_train(cfg, &out, opts),
        Command::Eval => cmd_eval(cfg, &out, opts),
        Command::Heatmap => cmd_heatmap(cfg, &out),
    }?;
    Ok(out)
}

fn hash_of(cfg: &ExperimentConfig) -> Result<String> {
    Ok(config_hash(cfg.to_json()?.as_bytes()))
}

/// The scene with the emitter over `dataset.goal_cell`, or as configured.
pub fn experiment_scene(cfg: &ExperimentConfig) -> Result<Scene> {
    let env = cfg.env_config();
    match cfg.dataset.goal_cell {
        Some(cell) => env.scene_for_goal(cell),
        None => Ok(env.scene),
    }
}

pub fn fit_normalizer(cfg: &ExperimentConfig) -> Result<Normalizer> {
    Env::fit_normalizer(
        &cfg.env_config(),
        cfg.observation.normalizer_draws,
        derive_seed(cfg.seeds.master, "normalizer", 0),
    )
}

/// The normalizer saved next to `checkpoint` (or one directory up), else a
/// fresh fit.
fn normalizer_for(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Normalizer> {
    if let Some(dir) = checkpoint.and_then(Path::parent) {
        for d in [Some(dir), dir.parent()].into_iter().flatten() {
            let p = d.join(NORMALIZER);
            if p.is_file() {
                return Normalizer::load(&p);
            }
        }
    }
    fit_normalizer(cfg)
}

fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ds = GridDataset::synthesize(&cfg.env_config(), &experiment_scene(cfg)?)?;
    ds.save(&out.join(GRID_FILE))?;
    fit_normalizer(cfg)?.save(&out.join(NORMALIZER))
}

/// What `train` reports when it finishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub agent: AgentKind,
    pub env_steps: u64,
    pub optimizer_steps: u64,
    pub episodes: usize,
    /// Mean undiscounted return over the last `window` training episodes.
    pub final_window_return: Option<f64>,
    pub final_window_sr: Option<f64>,
    /// Mean explained variance over the last quarter of PPO updates.
    pub final_quartile_ev: Option<f64>,
}

/// Mean of the defined values among the last quarter (at least one) of
/// `values`.
pub fn final_quartile_mean(values: &[Option<f64>]) -> Option<f64> {
    let start = values.len() - values.len().div_ceil(4).min(values.len());
    let tail: Vec<f64> = values[start..].iter().flatten().copied().collect();
    (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
}

fn window_stats(episodes: &[EpisodeStats], window: usize) -> (Option<f64>, Option<f64>) {
    let tail = &episodes[episodes.len().saturating_sub(window)..];
    if tail.is_empty() {
        return (None, None);
    }
    let n = tail.len() as f64;
    (
        Some(tail.iter().map(|e| e.return_undiscounted).sum::<f64>() / n),
        Some(tail.iter().filter(|e| e.success).count() as f64 / n),
    )
}

/// Whether a multiple of `every` lies in `(prev, now]`.
fn crossed(prev: u64, now: u64, every: u64) -> bool {
    every > 0 && now / every > prev / every
}

fn checkpoint_path(out: &Path, label: &str, n: u64) -> PathBuf {
    out.join("checkpoints").join(format!("{label}_{n:010}.json"))
}

fn save_periodic(out: &Path, label: &str, n: u64, params: &PolicyParams, opt_step: u64, hash: &str) -> Result<()> {
    let path = checkpoint_path(out, label, n);
    let dir = path.parent().expect("checkpoint dir");
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_checkpoint(&path, params, opt_step, n, hash)?;
    Ok(())
}

/// Parameters and starting step from `--checkpoint`, if given.
fn resume_from(path: Option<&Path>) -> Result<Option<(PolicyParams, u64)>> {
    path.map(|p| load_checkpoint(p).map(|(params, meta)| (params, meta.env_step)))
        .transpose()
}

fn cmd_train(cfg: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<()> {
    let env_cfg = cfg.env_config();
    let norm = normalizer_for(cfg, opts.checkpoint.as_deref())?;
    norm.save(&out.join(NORMALIZER))?;
    let hash = hash_of(cfg)?;
    let resume = resume_from(opts.checkpoint.as_deref())?;
    let mut metrics = JsonlWriter::open(&out.join(METRICS), resume.is_some())?;
    let seed = cfg.seeds.master;
    let every = cfg.eval.checkpoint_every;
    let arch = cfg.arch()?;
    let summary = if cfg.agent.kind.is_ppo() {
        let pc = cfg.ppo()?.clone();
        let window = pc.window;
        let total = pc.total_steps;
        let trainer = match resume {
            Some((params, step)) => PpoTrainer::with_params(&env_cfg, &norm, pc, params, seed, step)?,
            None => PpoTrainer::new(&env_cfg, &norm, pc, arch, seed)?,
        };
        let mut prev = trainer.step_count();
        let mut last_report = prev;
        let outcome = trainer.train(|t, m| {
            metrics.write(m)?;
            if crossed(prev, m.step, every) {
                save_periodic(out, "step", m.step, t.params(), t.optimizer_step(), &hash)?;
            }
            if opts.verbose && (crossed(last_report, m.step, total.div_ceil(20).max(1)) || t.is_done()) {
                eprintln!(
                    "step {:>9}/{total}  return {:>7.3}  sr {:.3}  ev {:.3}",
                    m.step,
                    m.mean_return.unwrap_or(f64::NAN),
                    m.success_rate_window.unwrap_or(f64::NAN),
                    m.ev.unwrap_or(f64::NAN)
                );
                last_report = m.step;
            }
            prev = m.step;
            Ok(())
        })?;
        let env_steps = outcome.metrics.last().map_or(prev, |m| m.step);
        save_checkpoint(&out.join(FINAL_CHECKPOINT), &outcome.params, outcome.optimizer_step, env_steps, &hash)?;
        let (ret, sr) = window_stats(&outcome.episodes, window);
        let evs: Vec<Option<f64>> = outcome.metrics.iter().map(|m| m.ev).collect();
        TrainSummary {
            agent: cfg.agent.kind,
            env_steps,
            optimizer_steps: outcome.optimizer_step,
            episodes: outcome.episodes.len(),
            final_window_return: ret,
            final_window_sr: sr,
            final_quartile_ev: final_quartile_mean(&evs),
        }
    } else {
        let dc = cfg.dqn()?.clone();
        let total = dc.total_steps;
        let trainer = match resume {
            Some((params, step)) => DqnTrainer::with_params(&env_cfg, &norm, dc, params, seed, step)?,
            None => DqnTrainer::new(&env_cfg, &norm, dc, arch, seed)?,
        };
        let mut prev = trainer.step_count();
        let mut last_report = prev;
        let outcome = trainer.train(|t, rec| {
            metrics.write(rec)?;
            let now = t.step_count();
            if crossed(prev, now, every) {
                save_periodic(out, "step", now, t.params(), t.optimizer_step(), &hash)?;
            }
            if opts.verbose && crossed(last_report, now, total.div_ceil(20).max(1)) {
                eprintln!("step {now:>9}/{total}  return {:>7.3}  eps {:.3}", rec.ret, rec.epsilon);
                last_report = now;
            }
            prev = now;
            Ok(())
        })?;
        let env_steps = total.max(prev);
        save_checkpoint(&out.join(FINAL_CHECKPOINT), &outcome.params, outcome.optimizer_step, env_steps, &hash)?;
        let (ret, sr) = window_stats(&outcome.episodes, 100);
        TrainSummary {
            agent: cfg.agent.kind,
            env_steps,
            optimizer_steps: outcome.optimizer_step,
            episodes: outcome.episodes.len(),
            final_window_return: ret,
            final_window_sr: sr,
            final_quartile_ev: None,
        }
    };
    write_json(&out.join(TRAIN_SUMMARY), &summary)
}

/// Held-out scores written after meta-training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaEvalReport {
    pub tasks: Vec<MetaEval>,
    pub mean_zero_shot_return: f64,
    pub mean_adapted_return: f64,
    pub mean_adaptation_gain: f64,
}

fn cmd_meta_train(cfg: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<()> {
    let mc = cfg
        .meta
        .clone()
        .ok_or_else(|| Error::Config("meta-train needs a meta block".into()))?;
    if !cfg.agent.kind.is_ppo() {
        return Err(Error::Config("meta-train adapts an actor-critic; use a ppo agent".into()));
    }
    let env_cfg = cfg.env_config();
    let norm = normalizer_for(cfg, opts.checkpoint.as_deref())?;
    norm.save(&out.join(NORMALIZER))?;
    let hash = hash_of(cfg)?;
    let seed = cfg.seeds.master;
    let resume = resume_from(opts.checkpoint.as_deref())?;
    let mut metrics = JsonlWriter::open(&out.join(META_METRICS), resume.is_some())?;
    let (params, start) = match resume {
        Some(r) => r,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init", 0));
            (build_network(actor_critic_spec(&env_cfg, cfg.arch()?), &mut rng)?, 0)
        }
    };
    let every = cfg.eval.checkpoint_every;
    let total = mc.meta_iters;
    let trainer = MetaTrainer::new(&env_cfg, &norm, mc.clone(), params, seed, start)?;
    let outcome = trainer.train(|t, m| {
        metrics.write(m)?;
        if crossed(m.meta_iter - 1, m.meta_iter, every) {
            save_periodic(out, "iter", m.meta_iter, t.params(), t.optimizer_step(), &hash)?;
        }
        if opts.verbose {
            eprintln!(
                "meta iter {:>5}/{total}  query return {:>7.3}  gain {:>7.3}",
                m.meta_iter, m.mean_query_return, m.adaptation_gain
            );
        }
        Ok(())
    })?;
    let iters = outcome.metrics.last().map_or(start, |m| m.meta_iter);
    save_checkpoint(&out.join(FINAL_CHECKPOINT), &outcome.params, outcome.optimizer_step, iters, &hash)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "meta-heldout", 0));
    let held_out = sample_tasks(&mut rng, mc.eval_tasks)?;
    let tasks = held_out
        .iter()
        .map(|t| meta_eval(&outcome.params, &env_cfg, &norm, t, &mc))
        .collect::<Result<Vec<_>>>()?;
    let n = tasks.len() as f64;
    let zero = tasks.iter().map(|t| t.zero_shot_return).sum::<f64>() / n;
    let adapted = tasks.iter().map(|t| t.query_return).sum::<f64>() / n;
    write_json(
        &out.join(META_EVAL),
        &MetaEvalReport {
            tasks,
            mean_zero_shot_return: zero,
            mean_adapted_return: adapted,
            mean_adaptation_gain: adapted - zero,
        },
    )
}

/// Evaluates `params` with the eval block of `cfg`.
pub fn evaluate(cfg: &ExperimentConfig, env_cfg: &EnvConfig, norm: &Normalizer, params: &PolicyParams) -> Result<(Vec<EpisodeStats>, EvalSummary)> {
    let seed = cfg.seeds.master;
    let mut env = Env::new(env_cfg.clone(), norm.clone(), derive_seed(seed, "eval", 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "eval-policy", 0));
    let mode = if cfg.eval.greedy {
        ActMode::Greedy
    } else {
        ActMode::Sample {
            epsilon: cfg.agent.dqn.as_ref().map_or(0.0, |d| d.eps_end),
        }
    };
    let (stats, ev) = run_eval_net(params, mode, &mut env, cfg.eval.episodes, cfg.gamma(), &mut rng)?;
    let summary = EvalSummary::from_stats(&stats, ev)?;
    Ok((stats, summary))
}

fn cmd_eval(cfg: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<()> {
    let ckpt = opts
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("eval needs --checkpoint".into()))?;
    let (params, _) = load_checkpoint(ckpt)?;
    let norm = normalizer_for(cfg, Some(ckpt))?;
    let (stats, summary) = evaluate(cfg, &cfg.env_config(), &norm, &params)?;
    crate::io::write_jsonl(&out.join(EVAL_EPISODES), &stats)?;
    write_json(&out.join(EVAL_SUMMARY), &summary)?;
    if opts.verbose {
        eprintln!(
            "sr {:.3}  mean return {:.3}  mean length {:.1}  over {} episodes",
            summary.sr, summary.mean_return, summary.mean_length, summary.n_episodes
        );
    }
    Ok(())
}

fn cmd_heatmap(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let scene = experiment_scene(cfg)?;
    let env_cfg = cfg.env_config();
    for kind in cfg.eval.heatmap_feature.kinds() {
        let grid = feature_heatmap(&env_cfg, &scene, kind, cfg.eval.heatmap_draws)?;
        export_heatmap(&out.join(format!("heatmap_{kind}.csv")), &grid)?;
    }
    Ok(())
}
