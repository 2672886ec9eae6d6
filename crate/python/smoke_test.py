"""Smoke test for the rfseeker_py extension module.

Build and install first, e.g. `pip install --no-build-isolation ./crates/py`
or `maturin develop -m crates/py/Cargo.toml`, then run
`python python/smoke_test.py`.
"""

import json
import math
import tempfile
from pathlib import Path

import rfseeker_py as rf


def test_env_episode():
    cfg = json.dumps({"observation": {"normalizer_draws": 50}})
    env = rf.Env(cfg, seed=3)
    obs = env.reset()
    assert env.obs_shape == [2, 4, 3]
    assert len(obs) == 24 and all(math.isfinite(v) for v in obs)
    done, steps, total = False, 0, 0.0
    while not done:
        obs, reward, done, success, distance = env.step(steps % env.n_actions)
        total += reward
        steps += 1
    assert steps <= 128 and math.isfinite(total) and distance >= 0.0
    # an explicit start and goal reproduce the same observation
    a = rf.Env(cfg, seed=5).reset((2, 3), (6, 9))
    b = rf.Env(cfg, seed=5).reset((2, 3), (6, 9))
    assert a == b


def test_phase_difference_of_a_plane_wave():
    n, shift = 64, 0.7
    re = [[math.cos(0.1 * t + k * shift) for t in range(n)] for k in range(4)]
    im = [[math.sin(0.1 * t + k * shift) for t in range(n)] for k in range(4)]
    rows = rf.extract_feature("phase_diff", re, im)
    assert len(rows) == 4
    # row i holds the phase of antenna i relative to every other antenna j
    for i, row in enumerate(rows):
        want = [(i - j) * shift for j in range(4) if j != i]
        assert all(abs(a - b) < 1e-9 for a, b in zip(row, want)), (row, want)


def test_gae_single_step():
    adv, ret = rf.compute_gae([1.0], [0.5], [True], 9.0, gamma=0.9, lam=0.95)
    assert adv == [0.5] and ret == [1.0]
    assert rf.explained_variance([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0


def test_heatmap_command():
    with tempfile.TemporaryDirectory() as d:
        cfg = Path(d) / "c.json"
        cfg.write_text(json.dumps({"eval": {"heatmap_draws": 1, "heatmap_feature": "rms"}}))
        out = rf.run("heatmap", str(cfg), out=str(Path(d) / "h"))
        lines = (Path(out) / "heatmap_rms.csv").read_text().splitlines()
        assert len(lines) == 8 * 16 + 1


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_"):
            fn()
            print(f"ok {name}")
