"""Compare the compiled and pure-Python kernels on the default 1225-state model.

Usage: python benchmarks/bench_kernels.py [--steps N] [--episodes N] [--repeat N]
"""

import argparse
import statistics
import time

import numpy as np

from qswitch._kernels import _pure
from qswitch.mdp import ModelParams, build_model
from qswitch.planner import PlannerConfig, policy_iteration
from qswitch.simulator import _tables

try:
    from qswitch._kernels import _core
except ImportError:  # extension not built
    _core = None


def timed(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), statistics.median(times)


def cases(model, policy, steps, episodes):
    V = np.zeros(model.n_states)
    out = np.empty_like(V)
    choice = np.empty(model.n_states, dtype=np.int64)
    rows = np.asarray(policy.rows, dtype=np.int64)
    args = (model.sa_reward, model.tr_ptr, model.tr_next, model.tr_prob)

    exact = _tables(policy, model.params, False)
    quantized = _tables(policy, model.params, True)

    def make(mod):
        return {
            "policy_sweep": lambda: mod.policy_sweep(V, out, rows, 0.9, *args),
            "greedy_sweep": lambda: mod.greedy_sweep(V, out, choice, 0.9, model.sa_ptr, *args, 1e-8),
            f"simulate {steps} steps": lambda: mod.run_trajectory(exact, np.random.default_rng(0), steps),
            f"{episodes} episodes x 132": lambda: mod.episode_returns(
                quantized, np.random.default_rng(0), episodes, 132, 0.9
            ),
        }

    return make


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--episodes", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=5)
    ns = ap.parse_args(argv)

    model = build_model(ModelParams(f_th=0.85))
    policy = policy_iteration(model, PlannerConfig()).policy
    make = cases(model, policy, ns.steps, ns.episodes)
    pure = make(_pure)
    core = make(_core) if _core is not None else {}

    print(f"model: {model.n_states} states, {model.n_rows} state-action rows")
    print(f"{'kernel':<26}{'python (s)':>12}{'cython (s)':>12}{'speedup':>10}")
    for name, fn in pure.items():
        p, _ = timed(fn, ns.repeat)
        if name in core:
            c, _ = timed(core[name], ns.repeat)
            print(f"{name:<26}{p:>12.4f}{c:>12.5f}{p / c:>9.1f}x")
        else:
            print(f"{name:<26}{p:>12.4f}{'n/a':>12}{'':>10}")


if __name__ == "__main__":
    main()
