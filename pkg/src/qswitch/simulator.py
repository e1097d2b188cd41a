"""Seeded Monte Carlo simulation of the switch under a fixed policy.

The simulator tracks the exact fidelity of every stored pair alongside the
age label the policy sees.  Exact fidelities decay as e^{-alpha} per step
from their value at creation.  For pairs that were never distilled the label is
the true age; a distilled pair is labelled with the grid age nearest to its
fidelity at creation and ages one label per step from there.  In
``quantized`` mode the exact fidelity is pinned to the label's grid value, so
the simulated law coincides with the MDP transition law.

Within a step the generator is consumed in a fixed order: arrival A, arrival
B, then the distillation outcome if the action is a distillation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import IO, NamedTuple, Sequence

import numpy as np

from . import _kernels
from .mdp import Action, ActionUnavailable, Distill, ModelParams, Swap, SwitchState, format_state, n_buffers
from .planner import Policy
from .werner import distill_output_fidelity, distill_success_prob, nearest_age, swap_fidelity

__all__ = [
    "LivePair",
    "SimState",
    "SimConfig",
    "MetricsReport",
    "StepEvents",
    "PolicyMiss",
    "step",
    "simulate",
    "compute_metrics",
    "discounted_return",
    "episode_returns",
    "horizon_for",
]

MODES = ("exact", "quantized")


class PolicyMiss(ActionUnavailable):
    def __init__(self, state: SwitchState, state_index: int):
        super().__init__(f"policy has no action for visited state {format_state(state)}")
        self.state = state
        self.state_index = state_index


class LivePair(NamedTuple):
    exact_fidelity: float
    age_label: int
    # fidelity when created and steps held since; exact_fidelity is
    # origin_fidelity * F(held), so undistilled pairs sit exactly on the grid
    origin_fidelity: float = 1.0
    held: int = 0


@dataclass
class SimState:
    # each list is ordered by (age_label ascending, exact_fidelity descending)
    client_a: list[LivePair] = field(default_factory=list)
    client_b: list[LivePair] = field(default_factory=list)

    @classmethod
    def empty(cls) -> "SimState":
        return cls()

    def switch_state(self) -> SwitchState:
        return SwitchState(
            tuple(p.age_label for p in self.client_a),
            tuple(p.age_label for p in self.client_b),
        )


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    steps: int = 10_000
    mode: str = "exact"

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError(f"steps={self.steps!r} must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode={self.mode!r} must be one of {MODES}")
        if not (0 <= self.seed < 2**64):
            raise ValueError(f"seed={self.seed!r} must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class MetricsReport:
    steps: int
    success_count: int
    throughput: float
    avg_fidelity: float | None
    jitter: float | None
    success_times: tuple[int, ...] = field(repr=False)


class StepEvents(NamedTuple):
    state: SwitchState
    action: Action
    reward: float
    success: bool
    delivered_fidelity: float | None


@lru_cache(maxsize=64)
def _grid(params: ModelParams) -> tuple[float, ...]:
    return params.decay.fidelities()


def _insert(pairs: list[LivePair], pair: LivePair) -> None:
    f, lab = pair.exact_fidelity, pair.age_label
    i = 0
    for i, p in enumerate(pairs):
        if p.age_label > lab or (p.age_label == lab and p.exact_fidelity < f):
            break
    else:
        i = len(pairs)
    pairs.insert(i, pair)


def _find(pairs: list[LivePair], label: int, start: int = 0) -> int:
    for i in range(start, len(pairs)):
        if pairs[i].age_label == label:
            return i
    raise ActionUnavailable(f"no stored pair with age label {label}")


def _age(pairs: list[LivePair], fids: tuple[float, ...], m_star: int, quantized: bool) -> list[LivePair]:
    out = []
    for _, lab, orig, held in pairs:
        lab += 1
        held += 1
        if lab > m_star:
            continue
        out.append(LivePair(fids[lab] if quantized else orig * fids[held], lab, orig, held))
    return out


def _admit(pairs: list[LivePair], L: int, fresh: float) -> list[LivePair]:
    if len(pairs) >= L:
        pairs = pairs[: L - 1]  # evict the oldest
    _insert(pairs, LivePair(fresh, 0, fresh))
    return pairs


def step(
    sim_state: SimState,
    policy: Policy,
    params: ModelParams,
    rng: np.random.Generator,
    quantized: bool = False,
) -> tuple[StepEvents, SimState]:
    """Advance one time step: act on the decision state, age, then admit arrivals.

    Swaps and distillations use, among pairs carrying the requested label,
    the one with the highest exact fidelity.
    """
    fids = _grid(params)
    u_a = rng.random()
    u_b = rng.random()
    state = sim_state.switch_state()
    idx = policy.model.index.get(state)
    row = -1 if idx is None else int(policy.rows[idx])
    if row < 0:
        raise PolicyMiss(state, -1 if idx is None else idx)
    action = policy.model.row_actions[row]

    a, b = list(sim_state.client_a), list(sim_state.client_b)
    success, delivered = False, None
    if isinstance(action, Swap):
        pa = a.pop(_find(a, action.age_a))
        pb = b.pop(_find(b, action.age_b))
        f = swap_fidelity(pa.exact_fidelity, pb.exact_fidelity)
        if f >= params.f_th:
            success, delivered = True, f
    elif isinstance(action, Distill):
        buf = a if action.client == "A" else b
        i = _find(buf, action.age_x)
        j = _find(buf, action.age_y, i + 1)
        f1, f2 = buf[i].exact_fidelity, buf[j].exact_fidelity
        del buf[j], buf[i]
        p = distill_success_prob(f1, f2)
        if rng.random() < p:
            f = distill_output_fidelity(f1, f2)
            lab = nearest_age(f, params.decay)
            f = fids[lab] if quantized else f
            _insert(buf, LivePair(f, lab, f))

    a = _age(a, fids, params.m_star, quantized)
    b = _age(b, fids, params.m_star, quantized)
    if u_a < params.lambda1:
        a = _admit(a, params.L, fids[0] if quantized else 1.0)
    if u_b < params.lambda2:
        b = _admit(b, params.L, fids[0] if quantized else 1.0)
    events = StepEvents(state, action, params.q if success else 0.0, success, delivered)
    return events, SimState(a, b)


# --------------------------------------------------------------------------
# compiled-kernel plumbing


@dataclass(frozen=True)
class _SimTables:
    policy: Policy
    params: ModelParams
    quantized: bool
    m_star: int
    L: int
    lambda1: float
    lambda2: float
    f_th: float
    fids: np.ndarray
    offsets: np.ndarray
    n_buffers: int
    lexw: np.ndarray
    kind: np.ndarray
    arg_x: np.ndarray
    arg_y: np.ndarray
    client: np.ndarray


def _rank_tables(m_star: int, L: int) -> tuple[np.ndarray, np.ndarray]:
    """Tables that rank a sorted age buffer in (size, lexicographic) order.

    ``offsets[k]`` counts buffers smaller than size k; ``lexw[r, a]`` counts
    non-decreasing length-r tails whose values start below ``a``.
    """
    offsets = np.zeros(L + 1, dtype=np.int64)
    for k in range(1, L + 1):
        offsets[k] = offsets[k - 1] + math.comb(k - 1 + m_star, m_star)
    lexw = np.zeros((L + 1, m_star + 2), dtype=np.int64)
    for r in range(L + 1):
        for a in range(1, m_star + 2):
            lexw[r, a] = lexw[r, a - 1] + math.comb(r + m_star - (a - 1), r)
    return offsets, lexw


def _check_compatible(policy: Policy, params: ModelParams) -> None:
    mp = policy.model.params
    if (mp.m_star, mp.L, mp.f_star) != (params.m_star, params.L, params.f_star):
        raise ValueError("policy was solved for a different state space (m_star, L or f_star differ)")


def _tables(policy: Policy, params: ModelParams, quantized: bool) -> _SimTables:
    _check_compatible(policy, params)
    fids = _grid(params)
    offsets, lexw = _rank_tables(params.m_star, params.L)
    n = policy.model.n_states
    kind = np.full(n, -1, dtype=np.int64)
    arg_x = np.zeros(n, dtype=np.int64)
    arg_y = np.zeros(n, dtype=np.int64)
    client = np.zeros(n, dtype=np.int64)
    actions = policy.model.row_actions
    for s, row in enumerate(policy.rows.tolist()):
        if row < 0:
            continue
        act = actions[row]
        if isinstance(act, Swap):
            kind[s], arg_x[s], arg_y[s] = 1, act.age_a, act.age_b
        elif isinstance(act, Distill):
            kind[s], arg_x[s], arg_y[s] = 2, act.age_x, act.age_y
            client[s] = 0 if act.client == "A" else 1
        else:
            kind[s] = 0
    return _SimTables(
        policy=policy,
        params=params,
        quantized=quantized,
        m_star=params.m_star,
        L=params.L,
        lambda1=params.lambda1,
        lambda2=params.lambda2,
        f_th=params.f_th,
        fids=np.asarray(fids, dtype=np.float64),
        offsets=offsets,
        n_buffers=n_buffers(params.m_star, params.L),
        lexw=lexw,
        kind=kind,
        arg_x=arg_x,
        arg_y=arg_y,
        client=client,
    )


def _raise_miss(policy: Policy, bad: int) -> None:
    if bad >= 0:
        raise PolicyMiss(policy.model.states[bad], bad)


# --------------------------------------------------------------------------
# public entry points


def simulate(
    policy: Policy,
    params: ModelParams,
    sim: SimConfig = SimConfig(),
    trace: IO[str] | None = None,
) -> MetricsReport:
    """Run ``sim.steps`` steps from the empty switch and summarize deliveries.

    With ``trace`` set, one JSON record per step is written to it; tracing
    always runs the reference Python step.
    """
    rng = np.random.default_rng(sim.seed)
    quantized = sim.mode == "quantized"
    if trace is None:
        times, fids, bad = _kernels.run_trajectory(_tables(policy, params, quantized), rng, sim.steps)
        _raise_miss(policy, bad)
        return compute_metrics(times.tolist(), fids.tolist(), sim.steps)

    _check_compatible(policy, params)
    state = SimState.empty()
    times, fids = [], []
    for t in range(1, sim.steps + 1):
        ev, state = step(state, policy, params, rng, quantized=quantized)
        if ev.success:
            times.append(t)
            fids.append(ev.delivered_fidelity)
        rec = {
            "t": t,
            "state": format_state(ev.state),
            "action": str(ev.action),
            "reward": ev.reward,
            "success": ev.success,
            "fidelity": ev.delivered_fidelity,
        }
        trace.write(json.dumps(rec) + "\n")
    return compute_metrics(times, fids, sim.steps)


def compute_metrics(success_times: Sequence[int], delivered_fidelities: Sequence[float], steps: int) -> MetricsReport:
    """Throughput, mean delivered fidelity and jitter of one run.

    Jitter is the population standard deviation of the gaps between
    consecutive deliveries.  Metrics without enough deliveries are None.
    """
    times = np.asarray(success_times, dtype=np.int64)
    if len(times) != len(delivered_fidelities):
        raise ValueError("success_times and delivered_fidelities differ in length")
    if len(times) and (np.any(np.diff(times) <= 0) or times[0] < 1 or times[-1] > steps):
        raise ValueError(f"success_times must be strictly increasing within [1, {steps}]")
    n = len(times)
    avg = float(np.mean(delivered_fidelities)) if n else None
    jitter = float(np.std(np.diff(times))) if n >= 2 else None
    return MetricsReport(
        steps=steps,
        success_count=n,
        throughput=n / steps,
        avg_fidelity=avg,
        jitter=jitter,
        success_times=tuple(times.tolist()),
    )


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    g, disc = 0.0, 1.0
    for r in rewards:
        g = g + disc * r
        disc = disc * gamma
    return g


def horizon_for(gamma: float, eps: float = 1e-6) -> int:
    """Smallest H with gamma**H < eps."""
    if gamma <= 0.0:
        return 1
    h = math.ceil(math.log(eps) / math.log(gamma))
    while gamma**h >= eps:
        h += 1
    return h


def episode_returns(
    policy: Policy,
    params: ModelParams,
    n_episodes: int,
    gamma: float,
    horizon: int | None = None,
    seed: int = 0,
    mode: str = "quantized",
) -> np.ndarray:
    """Truncated discounted returns of independent episodes from the empty state."""
    if mode not in MODES:
        raise ValueError(f"mode={mode!r} must be one of {MODES}")
    horizon = horizon_for(gamma) if horizon is None else horizon
    rng = np.random.default_rng(seed)
    tables = _tables(policy, params, mode == "quantized")
    out, bad = _kernels.episode_returns(tables, rng, n_episodes, horizon, gamma)
    _raise_miss(policy, bad)
    return out
