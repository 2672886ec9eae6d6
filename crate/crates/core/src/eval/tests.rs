use super::*;
use crate::env::{EnvConfig, ObservationConfig};
use crate::features::{FeatureKind, Normalizer};
use rand::SeedableRng;

fn stats(success: &[bool]) -> Vec<EpisodeStats> {
    success
        .iter()
        .map(|&s| EpisodeStats {
            return_undiscounted: if s { 5.0 } else { -1.0 },
            return_discounted: 0.0,
            length: 10,
            success: s,
            final_distance_m: if s { 0.5 } else { 4.0 },
            start_distance_m: 6.0,
        })
        .collect()
}

#[test]
fn success_rate_examples() {
    assert_eq!(success_rate(&stats(&[true, true, true])).unwrap(), 1.0);
    assert_eq!(success_rate(&stats(&[true, false, false, true])).unwrap(), 0.5);
    assert!(success_rate(&[]).is_err());
}

#[test]
fn explained_variance_examples() {
    let t = [1.0, 3.0, -2.0, 0.5, 7.0];
    assert_eq!(explained_variance(&t, &t).unwrap(), Some(1.0));
    let m = t.iter().sum::<f64>() / t.len() as f64;
    let ev = explained_variance(&[m; 5], &t).unwrap().unwrap();
    assert!(ev.abs() < 1e-15);
    assert!(explained_variance(&[0.0; 5], &t).unwrap().unwrap() <= 0.0);
    assert_eq!(explained_variance(&[1.0, 2.0], &[3.0, 3.0]).unwrap(), None);
    assert!(explained_variance(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn explained_variance_matches_sum_of_squares_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let n = rng.random_range(2..200);
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        // E[x^2] - E[x]^2 form, independent of the implementation's two passes.
        let var = |v: &[f64]| {
            let nf = v.len() as f64;
            v.iter().map(|x| x * x).sum::<f64>() / nf - (v.iter().sum::<f64>() / nf).powi(2)
        };
        let r: Vec<f64> = t.iter().zip(&p).map(|(a, b)| a - b).collect();
        let want = 1.0 - var(&r) / var(&t);
        let got = explained_variance(&p, &t).unwrap().unwrap();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        assert!(got <= 1.0);
    }
}

#[test]
fn discounted_return_of_scripted_episode() {
    let mut tr = EpisodeTracker::new(0.997, 3.0);
    for r in [0.95, 0.95, 10.95] {
        tr.push(r);
    }
    let s = tr.finish(true, 0.5);
    let want = 0.95 + 0.997 * 0.95 + 0.997f64.powi(2) * 10.95;
    assert!((s.return_discounted - want).abs() < 1e-12);
    assert!((s.return_discounted - 12.781_548_55).abs() < 1e-9);
    assert!((s.return_undiscounted - 12.85).abs() < 1e-12);
    assert_eq!(s.length, 3);
}

fn quiet_env(seed: u64) -> Env {
    let mut cfg = EnvConfig::default();
    cfg.scene.noise_power = 0.0;
    cfg.scene.max_reflection_order = 0;
    cfg.observation = ObservationConfig::stats(FeatureKind::Rms);
    let norm = Normalizer::identity(cfg.observation.normalizer_channels());
    Env::new(cfg, norm, seed).unwrap()
}

#[test]
fn zero_episodes_is_empty() {
    let mut env = quiet_env(0);
    let oracle = GeodesicOracle { grid: env.config().grid.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(run_eval(&oracle, &mut env, 0, 0.99, &mut rng).unwrap().is_empty());
}

#[test]
fn geodesic_oracle_always_succeeds() {
    let mut env = quiet_env(3);
    let grid = env.config().grid.clone();
    let oracle = GeodesicOracle { grid: grid.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let eps = env.config().reward.epsilon_m;
    let out = run_eval(&oracle, &mut env, 200, 0.99, &mut rng).unwrap();
    for s in &out {
        assert!(s.success, "{s:?}");
        assert!(s.final_distance_m <= eps);
        assert!(s.length <= env.config().reward.max_steps);
    }
    assert_eq!(success_rate(&out).unwrap(), 1.0);
    // Return equals the telescoped progress plus bonuses and penalties.
    for s in &out {
        let want = s.start_distance_m - s.final_distance_m - 0.05 * s.length as f64 + 10.0;
        assert!((s.return_undiscounted - want).abs() < 1e-9);
    }
}

#[test]
fn network_eval_is_reproducible() {
    use crate::nn::{build_network, Arch, NetSpec};
    let env_cfg = quiet_env(0).config().clone();
    let spec = NetSpec::new(Arch::FfStats, &env_cfg.observation.shape(), 6, HeadKind::ActorCritic);
    let params = build_network(spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let run = |mode| {
        let mut env = quiet_env(7);
        let policy = NetPolicy { params: &params, mode };
        run_eval(&policy, &mut env, 5, 0.99, &mut ChaCha8Rng::seed_from_u64(2)).unwrap()
    };
    assert_eq!(run(ActMode::Greedy), run(ActMode::Greedy));
    assert_eq!(run(ActMode::Sample { epsilon: 0.0 }), run(ActMode::Sample { epsilon: 0.0 }));
}

#[test]
fn value_scored_eval_matches_plain_eval() {
    use crate::nn::{build_network, Arch, NetSpec};
    let env_cfg = quiet_env(0).config().clone();
    for head in [HeadKind::ActorCritic, HeadKind::QValues] {
        let spec = NetSpec::new(Arch::FfStats, &env_cfg.observation.shape(), 6, head);
        let params = build_network(spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mode = ActMode::Sample { epsilon: 0.3 };
        let plain = run_eval(&NetPolicy { params: &params, mode }, &mut quiet_env(7), 6, 0.99, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let (scored, ev) = run_eval_net(&params, mode, &mut quiet_env(7), 6, 0.99, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(plain, scored);
        match head {
            HeadKind::ActorCritic => assert!(ev.unwrap() <= 1.0),
            HeadKind::QValues => assert_eq!(ev, None),
        }
    }
}

#[test]
fn epsilon_greedy_rules() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(epsilon_greedy(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 0.0, &mut rng), 5);
    assert_eq!(epsilon_greedy(&[0.5; 6], 0.0, &mut rng), 0);
    let n = 60_000;
    let mut counts = [0usize; 6];
    for _ in 0..n {
        counts[epsilon_greedy(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 1.0, &mut rng)] += 1;
    }
    let p = 1.0 / 6.0;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
    }
}

fn heat_scene() -> (crate::sim::Scene, EnvConfig, PolarGrid) {
    let cfg = EnvConfig::default();
    (cfg.scene.clone(), cfg.clone(), cfg.grid)
}

#[test]
fn rms_heatmap_decays_with_distance_in_free_space() {
    let (mut scene, cfg, grid) = heat_scene();
    scene.max_reflection_order = 0;
    scene.noise_power = 0.0;
    let h = feature_heatmap(&cfg, &scene, FeatureKind::Rms, 1).unwrap();
    let mut pts: Vec<(f64, f64)> = h
        .cells
        .iter()
        .map(|c| {
            let p = grid.cell_to_position(crate::env::Cell::new(c.ring, c.sector)).unwrap();
            (p.distance(scene.emitter_pos), c.value)
        })
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in pts.windows(2) {
        if w[1].0 - w[0].0 > 1e-9 {
            assert!(w[1].1 < w[0].1, "{w:?}");
        }
    }
}

#[test]
fn heatmaps_finite_and_reproducible() {
    let (scene, cfg, grid) = heat_scene();
    for kind in FeatureKind::STATISTICS {
        let a = feature_heatmap(&cfg, &scene, kind, 2).unwrap();
        assert_eq!(a.cells.len(), grid.n_cells());
        assert!(a.cells.iter().all(|c| c.value.is_finite() && c.variance.is_finite()));
        if kind == FeatureKind::PhaseDiff {
            assert_eq!(a, feature_heatmap(&cfg, &scene, kind, 2).unwrap());
        }
    }
    assert!(feature_heatmap(&cfg, &scene, FeatureKind::RawIq, 2).is_err());
}

#[test]
fn heatmap_csv_round_trip_and_atomicity() {
    let (mut scene, cfg, grid) = heat_scene();
    scene.max_reflection_order = 0;
    let h = feature_heatmap(&cfg, &scene, FeatureKind::Mean, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mean.csv");
    export_heatmap(&path, &h).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), grid.n_cells() + 1);
    assert_eq!(read_heatmap(&path).unwrap(), h.cells);

    let bad = dir.path().join("missing").join("x.csv");
    assert!(export_heatmap(&bad, &h).is_err());
    assert!(!bad.exists());
}

#[test]
fn metrics_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    let recs = stats(&[true, false, true]);
    export_metrics(&path, &recs).unwrap();
    let back: Vec<EpisodeStats> = crate::io::read_jsonl(&path).unwrap();
    assert_eq!(back, recs);
}
