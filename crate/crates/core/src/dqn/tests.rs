use super::*;
use crate::env::{EnvConfig, ObservationConfig, PolarGrid};
use crate::features::{FeatureKind, Normalizer};
use crate::nn::{build_network, grad_check, Arch, BlockKind, PolicyParams};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn epsilon_schedule() {
    let cfg = DqnConfig::default();
    assert_eq!(epsilon_at(0, &cfg), 1.0);
    assert_eq!(epsilon_at(200_000, &cfg), 0.05);
    assert_eq!(epsilon_at(900_000, &cfg), 0.05);
    assert!((epsilon_at(100_000, &cfg) - 0.525).abs() < 1e-12);
    let mut prev = f64::INFINITY;
    for s in (0..1_000_000).step_by(997) {
        let e = epsilon_at(s, &cfg);
        assert!(e <= prev);
        prev = e;
    }
}

fn env_cfg() -> EnvConfig {
    let mut cfg = EnvConfig::default();
    cfg.observation = ObservationConfig::stats(FeatureKind::PhaseDiff);
    cfg
}

fn tiny_cfg() -> EnvConfig {
    let mut cfg = env_cfg();
    cfg.grid = PolarGrid {
        n_rings: 3,
        n_sectors: 8,
        ..cfg.grid
    };
    cfg
}

fn q_net(cfg: &EnvConfig, arch: Arch, seed: u64) -> PolicyParams {
    build_network(q_spec(cfg, arch), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn greedy_and_tie_rules() {
    let cfg = env_cfg();
    let mut p = PolicyParams::zeros(q_spec(&cfg, Arch::FfStats)).unwrap();
    let obs = vec![0.3; cfg.observation.flat_len()];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(select_action(&p, &obs, None, 0.0, &mut rng).unwrap().0, 0);
    let bias = p.tensors().iter().find(|t| t.name == "q.bias").unwrap().range();
    for (k, i) in bias.enumerate() {
        p.as_mut_slice()[i] = (k + 1) as f64;
    }
    assert_eq!(select_action(&p, &obs, None, 0.0, &mut rng).unwrap().0, 5);

    let n = 60_000;
    let mut counts = [0usize; 6];
    for _ in 0..n {
        counts[select_action(&p, &obs, None, 1.0, &mut rng).unwrap().0] += 1;
    }
    let pr = 1.0 / 6.0;
    let sd = (n as f64 * pr * (1.0 - pr)).sqrt();
    assert!(counts.iter().all(|&c| (c as f64 - n as f64 * pr).abs() < 3.0 * sd), "{counts:?}");
}

fn random_batch(cfg: &EnvConfig, n: usize, rng: &mut ChaCha8Rng) -> ReplayBatch {
    let len = cfg.observation.flat_len();
    ReplayBatch {
        batch: n,
        steps: 1,
        obs: Array2::from_shape_fn((n, len), |_| rng.random_range(-1.0..1.0)),
        next_obs: Array2::from_shape_fn((n, len), |_| rng.random_range(-1.0..1.0)),
        actions: (0..n).map(|_| rng.random_range(0..6)).collect(),
        rewards: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        dones: (0..n).map(|_| rng.random_bool(0.3)).collect(),
        mask: vec![true; n],
    }
}

#[test]
fn td_targets_match_loop_oracle() {
    let cfg = env_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let target = q_net(&cfg, Arch::FfStats, 3);
    let b = random_batch(&cfg, 32, &mut rng);
    let y = td_targets(&b, &target, 0.99).unwrap();
    let y0 = td_targets(&b, &target, 0.0).unwrap();
    for i in 0..32 {
        let q = crate::nn::forward(&target, b.next_obs.slice(ndarray::s![i..i + 1, ..]), None).unwrap().value;
        let mut max = f64::NEG_INFINITY;
        for a in 0..6 {
            max = max.max(q[[0, a]]);
        }
        let want = if b.dones[i] { b.rewards[i] } else { b.rewards[i] + 0.99 * max };
        assert!((y[i] - want).abs() < 1e-6);
        if b.dones[i] {
            assert_eq!(y[i], b.rewards[i]);
        }
        assert_eq!(y0[i], b.rewards[i]);
    }
}

#[test]
fn loss_matches_loop_oracle_and_vanishes_at_target() {
    let cfg = env_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = q_net(&cfg, Arch::FfStats, 4);
    let b = random_batch(&cfg, 16, &mut rng);
    let y: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
    let (loss, _) = dqn_loss(&p, &b, &y).unwrap();
    let mut want = 0.0;
    for i in 0..16 {
        let q = crate::nn::forward(&p, b.obs.slice(ndarray::s![i..i + 1, ..]), None).unwrap().value;
        want += (q[[0, b.actions[i]]] - y[i]).powi(2) / 16.0;
    }
    assert!((loss - want).abs() < 1e-6);

    let q = crate::nn::forward(&p, b.obs.view(), None).unwrap().value;
    let exact: Vec<f64> = (0..16).map(|i| q[[i, b.actions[i]]]).collect();
    let (l0, g0) = dqn_loss(&p, &b, &exact).unwrap();
    assert_eq!(l0, 0.0);
    assert!(g0.iter().all(|g| *g == 0.0));
}

#[test]
fn single_transition_gradient_is_two_err_dq() {
    let cfg = env_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = q_net(&cfg, Arch::FfStats, 5);
    let b = random_batch(&cfg, 1, &mut rng);
    let y = [0.7];
    let (_, g) = dqn_loss(&p, &b, &y).unwrap();
    let q = crate::nn::forward(&p, b.obs.view(), None).unwrap().value[[0, b.actions[0]]];
    // dQ/d(bias of the taken action) is 1.
    let bias = p.tensors().iter().find(|t| t.name == "q.bias").unwrap().offset + b.actions[0];
    assert!((g[bias] - 2.0 * (q - y[0])).abs() < 1e-12);
    let r = grad_check(|q| dqn_loss(q, &b, &y).unwrap().0, &p, &g, 40, &mut rng);
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn recurrent_loss_gradient() {
    let mut cfg = env_cfg();
    cfg.observation = ObservationConfig::raw();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut p = q_net(&cfg, Arch::RecurrentRaw, 7);
    for v in p.as_mut_slice() {
        *v += rng.random_range(-0.03..0.03);
    }
    let mut b = random_batch(&cfg, 2 * 8, &mut rng);
    b.batch = 2;
    b.steps = 8;
    b.mask[15] = false;
    let y: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, g) = dqn_loss(&p, &b, &y).unwrap();
    let r = grad_check(|q| dqn_loss(q, &b, &y).unwrap().0, &p, &g, 40, &mut rng);
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

fn transition(len: usize, done: bool, tag: f32) -> Transition {
    Transition {
        obs: vec![tag; len],
        action: 0,
        reward: tag as f64,
        next_obs: vec![tag + 0.5; len],
        done,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn sequences_stay_within_episodes(lengths in prop::collection::vec(1usize..12, 1..40), cap in 5usize..60, seed in 0u64..1000) {
        let mut buf = ReplayBuffer::new(cap);
        let mut tag = 0.0f32;
        for (ep, &n) in lengths.iter().enumerate() {
            for k in 0..n {
                // Encode the episode in the observation to check draws.
                buf.push(transition(2, k + 1 == n, ep as f32 * 1000.0 + tag), ep as u64);
                tag += 1.0;
            }
            prop_assert!(buf.len() <= cap);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = buf.sample_sequences(16, 8, &mut rng).unwrap();
        for s in 0..16 {
            let first = b.obs[[s, 0]];
            let ep = (first / 1000.0).floor();
            let mut prev = first;
            let mut ended = false;
            for t in 0..8 {
                let r = t * 16 + s;
                if !b.mask[r] {
                    ended = true;
                    continue;
                }
                prop_assert!(!ended, "gap inside a sequence");
                prop_assert_eq!((b.obs[[r, 0]] / 1000.0).floor(), ep);
                if t > 0 {
                    prop_assert_eq!(b.obs[[r, 0]], prev + 1.0);
                    prop_assert!(!b.dones[r - 16]);
                }
                prev = b.obs[[r, 0]];
            }
        }
    }
}

fn identity(cfg: &EnvConfig) -> Normalizer {
    Normalizer::identity(cfg.observation.normalizer_channels())
}

#[test]
fn no_updates_before_learn_start_and_target_sync() {
    let cfg = tiny_cfg();
    let dcfg = DqnConfig {
        learn_start: 300,
        target_sync_every: 100,
        total_steps: 1000,
        batch_size: 16,
        ..DqnConfig::default()
    };
    let mut tr = DqnTrainer::new(&cfg, &identity(&cfg), dcfg, Arch::FfStats, 1).unwrap();
    let p0 = tr.params().clone();
    for _ in 0..299 {
        tr.step_once().unwrap();
        assert_eq!(tr.params(), &p0);
        assert_eq!(tr.optimizer_step(), 0);
    }
    let mut target = tr.target().clone();
    for _ in 299..1000 {
        tr.step_once().unwrap();
        if tr.step_count() % 100 == 0 {
            assert_eq!(tr.target(), tr.params());
            target = tr.target().clone();
        } else {
            assert_eq!(tr.target(), &target);
        }
    }
    assert_ne!(tr.params(), &p0);
    assert!(tr.replay().len() <= 50_000);
    // Heads and encoder both learn.
    assert_ne!(tr.params().block(BlockKind::Encoder), p0.block(BlockKind::Encoder));
}

#[test]
fn smoke_run_is_reproducible() {
    let cfg = tiny_cfg();
    let dcfg = DqnConfig {
        total_steps: 5_000,
        learn_start: 1_000,
        ..DqnConfig::default()
    };
    let run = || train_dqn(&cfg, &identity(&cfg), dcfg.clone(), Arch::FfStats, 3).unwrap();
    let a = run();
    assert!(!a.metrics.is_empty());
    let b = run();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.params, b.params);
}

#[test]
fn recurrent_smoke_run() {
    let mut cfg = tiny_cfg();
    cfg.observation = ObservationConfig::raw();
    cfg.reward.max_steps = 20;
    let dcfg = DqnConfig {
        total_steps: 120,
        learn_start: 60,
        batch_size: 4,
        ..DqnConfig::recurrent()
    };
    let out = train_dqn(&cfg, &identity(&cfg), dcfg, Arch::RecurrentRaw, 0).unwrap();
    assert!(!out.metrics.is_empty());
    assert!(out.optimizer_step > 0);
    assert!(out.params.is_finite());
}
