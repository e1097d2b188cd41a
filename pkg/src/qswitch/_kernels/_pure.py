"""Pure-Python/numpy implementations of the compiled kernels.

Used when the Cython extension is not built, or when
``QSWITCH_BACKEND=python`` is set.  Signatures and results match
:mod:`qswitch._kernels._core`.
"""

from __future__ import annotations

import numpy as np


def _row_q(V, gamma, sa_reward, tr_ptr, tr_next, tr_prob):
    contrib = tr_prob * V[tr_next]
    return sa_reward + gamma * np.add.reduceat(contrib, tr_ptr[:-1])


def policy_sweep(V, out, policy_rows, gamma, sa_reward, tr_ptr, tr_next, tr_prob):
    q = _row_q(V, gamma, sa_reward, tr_ptr, tr_next, tr_prob)
    out[:] = q[policy_rows]
    return float(np.max(np.abs(out - V))) if len(V) else 0.0


def greedy_sweep(V, out, choice, gamma, sa_ptr, sa_reward, tr_ptr, tr_next, tr_prob, tie_tol):
    q = _row_q(V, gamma, sa_reward, tr_ptr, tr_next, tr_prob)
    starts = sa_ptr[:-1]
    best = np.maximum.reduceat(q, starts)
    counts = np.diff(sa_ptr)
    near = q >= np.repeat(best, counts) - tie_tol
    rows = np.arange(len(q), dtype=np.int64)
    choice[:] = np.minimum.reduceat(np.where(near, rows, len(q)), starts)
    out[:] = best
    return float(np.max(np.abs(out - V))) if len(V) else 0.0


def run_trajectory(tables, rng, steps):
    from ..simulator import PolicyMiss, SimState, step

    state = SimState.empty()
    times, fids = [], []
    for t in range(steps):
        try:
            events, state = step(state, tables.policy, tables.params, rng, quantized=tables.quantized)
        except PolicyMiss as exc:
            return np.asarray(times, dtype=np.int64), np.asarray(fids), exc.state_index
        if events.success:
            times.append(t + 1)
            fids.append(events.delivered_fidelity)
    return np.asarray(times, dtype=np.int64), np.asarray(fids, dtype=np.float64), -1


def episode_returns(tables, rng, n_episodes, horizon, gamma):
    from ..simulator import PolicyMiss, SimState, step

    out = np.empty(n_episodes, dtype=np.float64)
    for e in range(n_episodes):
        state = SimState.empty()
        g, disc = 0.0, 1.0
        for _ in range(horizon):
            try:
                events, state = step(state, tables.policy, tables.params, rng, quantized=tables.quantized)
            except PolicyMiss as exc:
                return out, exc.state_index
            if events.success:
                g = g + disc
            disc = disc * gamma
        out[e] = g
    return out, -1
