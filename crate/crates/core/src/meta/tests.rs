use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::{build_network, Arch};
use crate::ppo::actor_critic_spec;

fn setup() -> (EnvConfig, Normalizer, PolicyParams) {
    let cfg = EnvConfig::default();
    let norm = Env::fit_normalizer(&cfg, 200, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = build_network(actor_critic_spec(&cfg, Arch::FfStats), &mut rng).unwrap();
    (cfg, norm, params)
}

fn small() -> MetaConfig {
    MetaConfig {
        n_envs: 2,
        support_steps: 32,
        query_steps: 32,
        support_eval_episodes: 2,
        query_eval_episodes: 3,
        ..MetaConfig::default()
    }
}

fn tasks(seed: u64, n: usize) -> Vec<TaskSpec> {
    sample_tasks(&mut ChaCha8Rng::seed_from_u64(seed), n).unwrap()
}

#[test]
fn defaults_follow_the_reference_setup() {
    let c = MetaConfig::default();
    assert_eq!((c.meta_iters, c.tasks_per_batch, c.inner_steps), (2000, 3, 1));
    assert_eq!((c.outer_lr, c.critic_lr, c.inner_lr), (1e-4, 1e-4, 3e-3));
    assert_eq!((c.support_steps, c.support_eval_episodes), (128, 5));
    assert_eq!((c.gamma, c.clip, c.ent_coef, c.vf_coef, c.max_grad_norm), (0.997, 0.1, 0.02, 0.4, 0.5));
    c.validate().unwrap();
    assert!(MetaConfig { inner_steps: 0, ..c.clone() }.validate().is_err());
    assert!(MetaConfig { support_steps: 12, ..c }.validate().is_err());
}

#[test]
fn task_sampling_is_deterministic_and_bounded() {
    assert_eq!(tasks(9, 3), tasks(9, 3));
    assert_ne!(tasks(9, 3), tasks(10, 3));
    assert!(sample_tasks(&mut ChaCha8Rng::seed_from_u64(0), 0).is_err());
    let base = EnvConfig::default();
    let all = tasks(1, 1000);
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    for t in &all {
        lo = lo.min(t.reflectivity);
        hi = hi.max(t.reflectivity);
        assert!(t.hall_scale.iter().all(|s| (0.8..=1.2).contains(s)));
        assert!((0.3..=1.0).contains(&t.emitter_offset_m));
        let cfg = t.apply(&base).unwrap();
        cfg.scene.validate().unwrap();
    }
    assert!(lo >= 0.4 && hi <= 0.9);
    // the draws actually spread over the interval
    assert!(lo < 0.45 && hi > 0.85);
}

#[test]
fn inner_adapt_freezes_the_encoder_and_isolates_the_copy() {
    let (cfg, norm, params) = setup();
    let t = &tasks(2, 1)[0];
    let (mut adapted, _) = inner_adapt(&params, &cfg, &norm, t, &small()).unwrap();
    assert_eq!(adapted.block(BlockKind::Encoder), params.block(BlockKind::Encoder));
    assert_ne!(adapted.block(BlockKind::ActorHead), params.block(BlockKind::ActorHead));
    assert_ne!(adapted.block(BlockKind::CriticHead), params.block(BlockKind::CriticHead));
    let before = params.clone();
    adapted.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
    assert_eq!(params, before);
}

#[test]
fn zero_inner_rate_leaves_parameters_unchanged() {
    let (cfg, norm, params) = setup();
    let t = &tasks(2, 1)[0];
    let mc = MetaConfig { inner_lr: 0.0, ..small() };
    let (adapted, _) = inner_adapt(&params, &cfg, &norm, t, &mc).unwrap();
    assert_eq!(adapted, params);
}

#[test]
fn head_delta_matches_finite_difference_gradient() {
    let (cfg, norm, params) = setup();
    let t = &tasks(3, 1)[0];
    let mc = small();
    let (adapted, support) = inner_adapt(&params, &cfg, &norm, t, &mc).unwrap();
    let loss = |p: &PolicyParams| full_batch_loss(p, &support, &mc.coefs()).unwrap().0.loss;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for block in HEADS {
        let r = params.block_range(block);
        for _ in 0..12 {
            let i = rng.random_range(r.clone());
            let h = 1e-5;
            let mut p = params.clone();
            p.as_mut_slice()[i] += h;
            let up = loss(&p);
            p.as_mut_slice()[i] -= 2.0 * h;
            let down = loss(&p);
            let fd = (up - down) / (2.0 * h);
            let delta = adapted.as_slice()[i] - params.as_slice()[i];
            let expect = -mc.inner_lr * fd;
            let err = (delta - expect).abs() / expect.abs().max(1e-7);
            assert!(err < 1e-4, "{block:?}[{i}]: delta {delta} vs {expect}");
        }
    }
}

#[test]
fn outer_gradient_is_the_mean_of_independent_task_gradients() {
    let (cfg, norm, params) = setup();
    let mc = small();
    let batch = tasks(4, 3);
    let mut p = params.clone();
    let mut opt = Adam::new(p.len());
    let step = fomaml_outer_step(&mut p, &mut opt, &batch, &cfg, &norm, &mc).unwrap();
    let per: Vec<Vec<f64>> = batch
        .iter()
        .map(|t| task_query_gradient(&params, &cfg, &norm, t, &mc).unwrap().query_grad)
        .collect();
    for (i, m) in step.mean_grad.iter().enumerate() {
        let oracle = (per[0][i] + per[1][i] + per[2][i]) / 3.0;
        assert!((m - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()));
    }
    assert_ne!(p, params);
    assert_eq!(opt.step_count(), 1);
}

#[test]
fn identical_tasks_reduce_to_the_single_task_gradient() {
    let (cfg, norm, params) = setup();
    let mc = small();
    let t = tasks(5, 1).remove(0);
    let single = task_query_gradient(&params, &cfg, &norm, &t, &mc).unwrap().query_grad;
    let mut p = params.clone();
    let mut opt = Adam::new(p.len());
    let step = fomaml_outer_step(&mut p, &mut opt, &[t.clone(), t.clone(), t], &cfg, &norm, &mc).unwrap();
    for (a, b) in step.mean_grad.iter().zip(&single) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
}

#[test]
fn zero_gradient_leaves_parameters_unchanged() {
    let (_, _, params) = setup();
    let mut p = params.clone();
    let mut opt = Adam::new(p.len());
    apply_outer(&mut p, &mut opt, &vec![0.0; params.len()], &small()).unwrap();
    assert_eq!(p, params);
}

#[test]
fn critic_rate_applies_to_the_critic_head_only() {
    let (_, _, params) = setup();
    let mc = MetaConfig { outer_lr: 0.0, critic_lr: 1e-3, ..small() };
    let mut p = params.clone();
    let mut opt = Adam::new(p.len());
    apply_outer(&mut p, &mut opt, &vec![1.0; params.len()], &mc).unwrap();
    for b in [BlockKind::Encoder, BlockKind::ActorHead] {
        assert_eq!(p.block(b), params.block(b));
    }
    assert_ne!(p.block(BlockKind::CriticHead), params.block(BlockKind::CriticHead));
}

#[test]
fn meta_eval_without_adaptation_equals_zero_shot() {
    let (cfg, norm, params) = setup();
    let t = &tasks(6, 1)[0];
    let mc = MetaConfig { inner_lr: 0.0, ..small() };
    let r = meta_eval(&params, &cfg, &norm, t, &mc).unwrap();
    assert_eq!(r.query_return, r.zero_shot_return);
    assert_eq!(r.query_discounted, r.zero_shot_discounted);
    let again = meta_eval(&params, &cfg, &norm, t, &small()).unwrap();
    assert_eq!(again, meta_eval(&params, &cfg, &norm, t, &small()).unwrap());
    assert!(again.support_steps >= 2);
}

#[test]
fn collect_episodes_stops_after_the_last_requested_episode() {
    let (cfg, norm, params) = setup();
    let env = Env::new(cfg, norm, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let buf = collect_episodes(&params, env, 3, &small(), &mut rng).unwrap();
    assert_eq!(buf.dones.iter().filter(|d| **d).count(), 3);
    assert_eq!(buf.dones.last(), Some(&true));
    assert_eq!(buf.episodes.len(), 3);
    assert_eq!(buf.obs.nrows(), buf.len());
    assert_eq!(buf.n_steps, buf.len());
}

#[test]
fn meta_smoke_iteration_is_finite_and_reproducible() {
    let (cfg, norm, params) = setup();
    let mc = MetaConfig { meta_iters: 1, ..small() };
    let run = || {
        MetaTrainer::new(&cfg, &norm, mc.clone(), params.clone(), 7, 0)
            .unwrap()
            .train(|_, _| Ok(()))
            .unwrap()
    };
    let a = run();
    assert_eq!(a.metrics.len(), 1);
    let m = &a.metrics[0];
    assert_eq!(m.meta_iter, 1);
    assert_eq!(m.per_task_returns.len(), 3);
    assert!(m.adaptation_gain.is_finite() && m.mean_query_return.is_finite());
    let b = run();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.params, b.params);
}

#[test]
fn recurrent_adaptation_freezes_encoder_and_lstm() {
    let mut cfg = EnvConfig::default();
    cfg.observation = crate::env::ObservationConfig::raw();
    let norm = Env::fit_normalizer(&cfg, 50, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = build_network(actor_critic_spec(&cfg, Arch::RecurrentRaw), &mut rng).unwrap();
    let t = &tasks(8, 1)[0];
    let mc = MetaConfig { support_steps: 16, ..small() };
    let (adapted, _) = inner_adapt(&params, &cfg, &norm, t, &mc).unwrap();
    for b in [BlockKind::Encoder, BlockKind::Lstm] {
        assert_eq!(adapted.block(b), params.block(b));
    }
    assert_ne!(adapted.block(BlockKind::ActorHead), params.block(BlockKind::ActorHead));
}
