"""Long-run behaviour of the Markov chain induced by a fixed policy.

Used as an exact oracle for simulated throughput: with a unichain induced
chain, the long-run reward per step equals ``sum_s pi(s) r(s, policy(s))``.
"""

from __future__ import annotations

import numpy as np

from .mdp import SwitchModel
from .planner import Policy

__all__ = ["policy_chain", "reachable_states", "stationary_distribution", "long_run_reward_rate"]


def policy_chain(model: SwitchModel, policy: Policy) -> tuple[np.ndarray, np.ndarray]:
    """Dense transition matrix and per-state reward under ``policy``."""
    if not policy.is_total:
        raise ValueError("policy must assign an action to every state")
    n = model.n_states
    P = np.zeros((n, n))
    for s, row in enumerate(policy.rows.tolist()):
        for j, p in model.transitions(row):
            P[s, j] += p
    return P, model.sa_reward[policy.rows].copy()


def reachable_states(P: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(len(P), dtype=bool)
    seen[start] = True
    stack = [start]
    while stack:
        s = stack.pop()
        for j in np.flatnonzero(P[s] > 0.0):
            if not seen[j]:
                seen[j] = True
                stack.append(j)
    return np.flatnonzero(seen)


def stationary_distribution(P: np.ndarray, start: int | None = None) -> np.ndarray:
    """Stationary distribution of the chain restricted to states reachable from ``start``.

    Raises ``np.linalg.LinAlgError`` if that subchain has more than one
    closed class (the distribution would not be unique).
    """
    n = len(P)
    idx = np.arange(n) if start is None else reachable_states(P, start)
    sub = P[np.ix_(idx, idx)]
    A = sub.T - np.eye(len(idx))
    A[-1, :] = 1.0
    b = np.zeros(len(idx))
    b[-1] = 1.0
    pi_sub = np.linalg.solve(A, b)
    if np.max(np.abs(pi_sub @ sub - pi_sub)) > 1e-9:
        raise np.linalg.LinAlgError("stationary solve did not produce an invariant distribution")
    pi = np.zeros(n)
    pi[idx] = np.clip(pi_sub, 0.0, None)
    return pi / pi.sum()


def long_run_reward_rate(model: SwitchModel, policy: Policy, start: int | None = None) -> float:
    """Expected reward per step in steady state, from the empty state by default."""
    P, r = policy_chain(model, policy)
    pi = stationary_distribution(P, model.empty_state if start is None else start)
    return float(pi @ r)
