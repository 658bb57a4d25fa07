#!/usr/bin/env python3
"""Smoke test for the cpbrl_py extension module.

Builds the cdylib with cargo, loads it, and exercises the simulator, batch
generation, LQR synthesis, the world model and the classical helpers.

Usage: python3 python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
import sysconfig
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_and_import():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "cpbrl-py"],
        cwd=REPO,
        check=True,
    )
    ext = ".dylib" if sys.platform == "darwin" else ".so"
    built = REPO / "target" / "release" / f"libcpbrl_py{ext}"
    if not built.exists():  # windows drops the lib prefix
        built = REPO / "target" / "release" / "cpbrl_py.dll"
    tmp = Path(tempfile.mkdtemp(prefix="cpbrl_py_"))
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    shutil.copy(built, tmp / f"cpbrl_py{suffix}")
    sys.path.insert(0, str(tmp))
    import cpbrl_py

    return cpbrl_py


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    m = build_and_import()

    # simulator basics
    cp = m.CartPole()
    origin = m.State(0.0, 0.0, 0.0, 0.0)
    assert cp.step(origin, 0.0).as_tuple() == (0.0, 0.0, 0.0, 0.0)
    approx(cp.reward(origin), 0.0)
    tilted = m.State(0.3, 0.0, 0.1, 0.0)
    approx(cp.reward(tilted), -0.1)
    fallen = m.State(0.71, 0.0, 0.0, 0.0, failed=True)
    approx(cp.reward(fallen), -1.0)
    assert cp.step(fallen, 10.0).failed

    # determinism of the step function
    s1 = cp.step(tilted, 5.0)
    s2 = cp.step(tilted, 5.0)
    assert s1.as_tuple() == s2.as_tuple()

    # policies: evaluation, clamping, JSON round trip
    pol = m.Policy.linear([38.8, 10.1, 2.8, 3.9])
    approx(pol.act(m.State(0.1, 0.0, 0.0, 0.0)), 3.88, 1e-12)
    assert abs(m.Policy.linear([1e6, 0, 0, 0]).act(tilted)) <= 10.0
    round_tripped = m.Policy.from_json(pol.to_json())
    assert round_tripped.kind == "linear"
    assert round_tripped.describe() == pol.describe()

    # batch generation and LQR synthesis from it
    batch = m.Batch.generate(4000, m.seed_for(0, "data"))
    assert len(batch) == 4000
    s, a, s_next, r = batch.transition(0)
    assert abs(a) <= 10.0
    approx(r, cp.reward(s_next), 1e-12)
    lqr = m.synthesize_lqr(batch)
    pen = cp.penalty(lqr)
    print(f"lqr: {lqr.describe()}  system penalty {pen:.3f}")
    assert pen < 5.0

    # closed-loop rollout keeps the pole up from a small tilt
    traj = cp.run_episode(lqr, m.State(0.1, 0.0, 0.0, 0.0), 100)
    assert len(traj) == 100
    last_state, _, _ = traj[-1]
    assert not last_state.failed and abs(last_state.theta) < 0.25

    # world model: quick fit, one-step prediction sanity
    model, delta_rmse, reward_acc = m.WorldModel.fit(batch, epochs=30, seed=m.seed_for(0, "model"))
    print(f"world model: delta rmse {delta_rmse}, reward accuracy {reward_acc:.3f}")
    assert reward_acc > 0.7
    pred, pred_r = model.predict(tilted, 5.0)
    true_next = cp.step(tilted, 5.0)
    assert abs(pred.theta - true_next.theta) < 0.05
    assert pred_r in (0.0, -0.1, -1.0)
    assert model.penalty(lqr) < 5.0

    # classical helpers
    p, k = m.solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    approx(p[0][0], (1.0 + math.sqrt(5.0)) / 2.0, 1e-9)
    kp, ki, kd = m.zn_gains(-14.3, 113.0)
    approx(kp, -8.58, 1e-12)
    approx(ki, 1.2 * -14.3 / 113.0, 1e-12)
    approx(kd, 0.6 * -14.3 * 113.0 / 8.0, 1e-12)

    # shared evaluation set and seed streams
    states = m.default_test_states()
    assert len(states) == 100
    assert all(abs(s.theta) <= 0.3 for s in states)
    assert m.seed_for(0, "data") != m.seed_for(0, "model")
    assert m.seed_for(0, "gprl", run=0) != m.seed_for(0, "gprl", run=1)

    print("smoke test passed")


if __name__ == "__main__":
    main()
