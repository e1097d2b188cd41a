"""Finite MDP of a two-client entanglement switch.

A decision state holds, for each client, the sorted ages of the Bell pairs
stored at the switch.  One time step is

    action on the decision state -> aging/cutoff -> Bernoulli arrivals

and the post-arrival state is the next decision state.  Buffers hold at most
``L`` pairs; an arrival into a full buffer evicts the oldest pair.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Iterator, NamedTuple, Union

import numpy as np

from .werner import (
    DecayModel,
    distill_output_fidelity,
    distill_success_prob,
    nearest_age,
    swap_fidelity,
)

__all__ = [
    "ModelParams",
    "SwitchState",
    "Wait",
    "Swap",
    "Distill",
    "Action",
    "TransitionEntry",
    "ActionUnavailable",
    "SwitchModel",
    "canonical",
    "enumerate_buffers",
    "enumerate_states",
    "available_actions",
    "reward",
    "apply_action",
    "age_and_discard",
    "arrival_distribution",
    "transition",
    "build_model",
    "format_state",
    "format_action",
    "parse_state",
    "parse_action",
]

Buffer = tuple[int, ...]


class ActionUnavailable(ValueError):
    """Raised when an action references pairs the state does not hold."""


@dataclass(frozen=True)
class ModelParams:
    lambda1: float = 0.7
    lambda2: float = 0.7
    m_star: int = 3
    f_star: float = 0.85
    L: int = 3
    f_th: float = 0.9
    q: float = 1.0
    allow_distill: bool = True

    def __post_init__(self) -> None:
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v!r} must be a probability in [0, 1]")
        if self.L < 1:
            raise ValueError(f"L={self.L!r} must be >= 1")
        if not (0.0 <= self.f_th <= 1.0):
            raise ValueError(f"f_th={self.f_th!r} must lie in [0, 1]")
        if self.q != 1.0:
            raise ValueError(f"q={self.q!r}: only deterministic swaps (q=1) are modelled")
        DecayModel(self.f_star, self.m_star)  # validates m_star / f_star

    @property
    def decay(self) -> DecayModel:
        return DecayModel(self.f_star, self.m_star)


class SwitchState(NamedTuple):
    client_a: Buffer
    client_b: Buffer


def canonical(client_a, client_b) -> SwitchState:
    return SwitchState(tuple(sorted(client_a)), tuple(sorted(client_b)))


@dataclass(frozen=True, order=True)
class Wait:
    def __str__(self) -> str:
        return "WAIT"


@dataclass(frozen=True, order=True)
class Swap:
    age_a: int
    age_b: int

    def __str__(self) -> str:
        return f"SWAP({self.age_a},{self.age_b})"


@dataclass(frozen=True, order=True)
class Distill:
    client: str  # "A" or "B"
    age_x: int
    age_y: int

    def __post_init__(self) -> None:
        if self.client not in ("A", "B"):
            raise ValueError(f"client must be 'A' or 'B', got {self.client!r}")
        if self.age_x > self.age_y:
            x, y = self.age_y, self.age_x
            object.__setattr__(self, "age_x", x)
            object.__setattr__(self, "age_y", y)

    def __str__(self) -> str:
        return f"DISTILL({self.client},{self.age_x},{self.age_y})"


Action = Union[Wait, Swap, Distill]

_KIND = {Wait: 0, Swap: 1, Distill: 2}


def action_sort_key(action: Action) -> tuple:
    if isinstance(action, Wait):
        return (0,)
    if isinstance(action, Swap):
        return (1, action.age_a, action.age_b)
    return (2, action.client, action.age_x, action.age_y)


class TransitionEntry(NamedTuple):
    next_state: SwitchState
    probability: float


# --------------------------------------------------------------------------
# state space


def enumerate_buffers(m_star: int, L: int) -> list[Buffer]:
    """All sorted age multisets of size 0..L, ordered by (size, ages)."""
    out: list[Buffer] = []
    for k in range(L + 1):
        out.extend(itertools.combinations_with_replacement(range(m_star + 1), k))
    return out


def enumerate_states(params: ModelParams) -> list[SwitchState]:
    bufs = enumerate_buffers(params.m_star, params.L)
    return [SwitchState(a, b) for a in bufs for b in bufs]


def available_actions(state: SwitchState, params: ModelParams) -> list[Action]:
    a, b = state
    actions: list[Action] = [Wait()]
    for x in sorted(set(a)):
        for y in sorted(set(b)):
            actions.append(Swap(x, y))
    if params.allow_distill:
        for client, buf in (("A", a), ("B", b)):
            pairs = set()
            for i in range(len(buf)):
                for j in range(i + 1, len(buf)):
                    pairs.add((buf[i], buf[j]))
            actions.extend(Distill(client, x, y) for x, y in sorted(pairs))
    return actions


def _remove(buf: Buffer, *ages: int) -> Buffer:
    items = list(buf)
    for age in ages:
        try:
            items.remove(age)
        except ValueError:
            raise ActionUnavailable(f"no pair of age {age} in buffer {list(buf)}") from None
    return tuple(items)


def _check_available(state: SwitchState, action: Action, params: ModelParams) -> None:
    if isinstance(action, Wait):
        return
    if isinstance(action, Swap):
        if action.age_a in state.client_a and action.age_b in state.client_b:
            return
    elif isinstance(action, Distill):
        if params.allow_distill:
            buf = state.client_a if action.client == "A" else state.client_b
            try:
                _remove(buf, action.age_x, action.age_y)
                return
            except ActionUnavailable:
                pass
    raise ActionUnavailable(f"{action} is not available in {format_state(state)}")


def swap_succeeds(age_a: int, age_b: int, params: ModelParams) -> bool:
    fids = params.decay.fidelities()
    return swap_fidelity(fids[age_a], fids[age_b]) >= params.f_th


def reward(state: SwitchState, action: Action, params: ModelParams) -> float:
    _check_available(state, action, params)
    if isinstance(action, Swap):
        return params.q * (1.0 if swap_succeeds(action.age_a, action.age_b, params) else 0.0)
    return 0.0


def distill_outcome(age_x: int, age_y: int, params: ModelParams) -> tuple[float, int]:
    """(success probability, quantized age of the distilled pair)."""
    decay = params.decay
    fids = decay.fidelities()
    fx, fy = fids[age_x], fids[age_y]
    return distill_success_prob(fx, fy), nearest_age(distill_output_fidelity(fx, fy), decay)


def apply_action(state: SwitchState, action: Action, params: ModelParams) -> dict[SwitchState, float]:
    _check_available(state, action, params)
    a, b = state
    if isinstance(action, Wait):
        return {state: 1.0}
    if isinstance(action, Swap):
        return {SwitchState(_remove(a, action.age_a), _remove(b, action.age_b)): 1.0}
    p, new_age = distill_outcome(action.age_x, action.age_y, params)
    buf = a if action.client == "A" else b
    rest = _remove(buf, action.age_x, action.age_y)
    won = tuple(sorted(rest + (new_age,)))
    if action.client == "A":
        dist = {SwitchState(won, b): p, SwitchState(rest, b): 1.0 - p}
    else:
        dist = {SwitchState(a, won): p, SwitchState(a, rest): 1.0 - p}
    return {s: pr for s, pr in dist.items() if pr > 0.0}


def age_and_discard(state: SwitchState, params: ModelParams) -> SwitchState:
    m = params.m_star
    return SwitchState(
        tuple(x + 1 for x in state.client_a if x + 1 <= m),
        tuple(x + 1 for x in state.client_b if x + 1 <= m),
    )


def _admit(buf: Buffer, L: int) -> Buffer:
    # buffers are sorted, so the oldest pair is last
    if len(buf) >= L:
        buf = buf[: L - 1]
    return (0,) + buf


def arrival_distribution(state: SwitchState, params: ModelParams) -> dict[SwitchState, float]:
    l1, l2, L = params.lambda1, params.lambda2, params.L
    a, b = state
    a_in, b_in = _admit(a, L), _admit(b, L)
    out: dict[SwitchState, float] = {}
    for s, p in (
        (SwitchState(a_in, b_in), l1 * l2),
        (SwitchState(a_in, b), l1 * (1.0 - l2)),
        (SwitchState(a, b_in), (1.0 - l1) * l2),
        (SwitchState(a, b), (1.0 - l1) * (1.0 - l2)),
    ):
        if p > 0.0:
            out[s] = out.get(s, 0.0) + p
    return out


def transition(state: SwitchState, action: Action, params: ModelParams) -> list[TransitionEntry]:
    merged: dict[SwitchState, float] = {}
    for mid, p in apply_action(state, action, params).items():
        aged = age_and_discard(mid, params)
        for nxt, q in arrival_distribution(aged, params).items():
            merged[nxt] = merged.get(nxt, 0.0) + p * q
    return [TransitionEntry(s, p) for s, p in merged.items()]


# --------------------------------------------------------------------------
# compiled tables


@dataclass(frozen=True, eq=False)
class SwitchModel:
    """Flattened state/action/transition tables for one parameter set.

    Rows are (state, action) pairs; the actions of state ``s`` occupy rows
    ``sa_ptr[s]:sa_ptr[s+1]`` in :func:`available_actions` order.  The
    transitions of row ``r`` are ``tr_next[tr_ptr[r]:tr_ptr[r+1]]`` with
    probabilities ``tr_prob[...]``.
    """

    params: ModelParams
    states: list[SwitchState]
    actions: list[list[Action]]
    sa_ptr: np.ndarray
    sa_state: np.ndarray
    sa_reward: np.ndarray
    tr_ptr: np.ndarray
    tr_next: np.ndarray
    tr_prob: np.ndarray
    index: dict[SwitchState, int] = field(repr=False)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_rows(self) -> int:
        return len(self.sa_reward)

    @cached_property
    def row_actions(self) -> list[Action]:
        return [a for acts in self.actions for a in acts]

    def row_of(self, state: SwitchState, action: Action) -> int:
        s = self.index[canonical(*state)]
        try:
            return int(self.sa_ptr[s]) + self.actions[s].index(action)
        except ValueError:
            raise ActionUnavailable(f"{action} is not available in {format_state(state)}") from None

    def transitions(self, row: int) -> Iterator[tuple[int, float]]:
        lo, hi = self.tr_ptr[row], self.tr_ptr[row + 1]
        return zip(self.tr_next[lo:hi].tolist(), self.tr_prob[lo:hi].tolist())

    @property
    def empty_state(self) -> int:
        return self.index[SwitchState((), ())]

    def dump(self, fp: IO[str]) -> None:
        """Write the model as JSON lines.

        First line: ``{"params": {...}, "n_states": N, "n_rows": R}``.  Then one
        object per (state, action) row::

            {"state": "A=[0,2] B=[1]", "action": "SWAP(0,1)", "reward": 1.0,
             "next": [["A=[1] B=[]", 0.09], ...]}
        """
        header = {"params": _params_dict(self.params), "n_states": self.n_states, "n_rows": self.n_rows}
        fp.write(json.dumps(header, sort_keys=True) + "\n")
        for s, state in enumerate(self.states):
            for k, action in enumerate(self.actions[s]):
                row = int(self.sa_ptr[s]) + k
                rec = {
                    "state": format_state(state),
                    "action": str(action),
                    "reward": float(self.sa_reward[row]),
                    "next": [[format_state(self.states[n]), p] for n, p in self.transitions(row)],
                }
                fp.write(json.dumps(rec) + "\n")


def _params_dict(params: ModelParams) -> dict:
    return {k: getattr(params, k) for k in params.__dataclass_fields__}


def build_model(params: ModelParams) -> SwitchModel:
    """Enumerate states and actions and tabulate every transition."""
    states = enumerate_states(params)
    index = {s: i for i, s in enumerate(states)}

    # action -> after-action distribution and aging/arrival only depend on
    # small pieces of the state, so memoize the arrival step
    arrivals: dict[SwitchState, dict[SwitchState, float]] = {}
    distill_cache: dict[tuple[int, int], tuple[float, int]] = {}
    fids = params.decay.fidelities()
    swap_ok = {
        (x, y): swap_fidelity(fids[x], fids[y]) >= params.f_th
        for x in range(params.m_star + 1)
        for y in range(params.m_star + 1)
    }

    actions: list[list[Action]] = []
    sa_ptr = [0]
    sa_state: list[int] = []
    rewards: list[float] = []
    tr_ptr = [0]
    tr_next: list[int] = []
    tr_prob: list[float] = []

    for s, state in enumerate(states):
        acts = available_actions(state, params)
        actions.append(acts)
        a, b = state
        for act in acts:
            if isinstance(act, Wait):
                after = ((state, 1.0),)
                r = 0.0
            elif isinstance(act, Swap):
                after = ((SwitchState(_remove(a, act.age_a), _remove(b, act.age_b)), 1.0),)
                r = params.q if swap_ok[act.age_a, act.age_b] else 0.0
            else:
                key = (act.age_x, act.age_y)
                if key not in distill_cache:
                    distill_cache[key] = distill_outcome(act.age_x, act.age_y, params)
                p, new_age = distill_cache[key]
                buf = a if act.client == "A" else b
                rest = _remove(buf, act.age_x, act.age_y)
                won = tuple(sorted(rest + (new_age,)))
                if act.client == "A":
                    after = ((SwitchState(won, b), p), (SwitchState(rest, b), 1.0 - p))
                else:
                    after = ((SwitchState(a, won), p), (SwitchState(a, rest), 1.0 - p))
                r = 0.0
            merged: dict[int, float] = {}
            for mid, p in after:
                if p <= 0.0:
                    continue
                aged = age_and_discard(mid, params)
                dist = arrivals.get(aged)
                if dist is None:
                    dist = arrivals[aged] = arrival_distribution(aged, params)
                for nxt, q in dist.items():
                    j = index[nxt]
                    merged[j] = merged.get(j, 0.0) + p * q
            for j in sorted(merged):
                tr_next.append(j)
                tr_prob.append(merged[j])
            tr_ptr.append(len(tr_next))
            sa_state.append(s)
            rewards.append(r)
        sa_ptr.append(len(rewards))

    return SwitchModel(
        params=params,
        states=states,
        actions=actions,
        sa_ptr=np.asarray(sa_ptr, dtype=np.int64),
        sa_state=np.asarray(sa_state, dtype=np.int64),
        sa_reward=np.asarray(rewards, dtype=np.float64),
        tr_ptr=np.asarray(tr_ptr, dtype=np.int64),
        tr_next=np.asarray(tr_next, dtype=np.int64),
        tr_prob=np.asarray(tr_prob, dtype=np.float64),
        index=index,
    )


# --------------------------------------------------------------------------
# text forms shared by the model dump and the policy file


def _fmt_buf(buf: Buffer) -> str:
    return "[" + ",".join(str(x) for x in buf) + "]"


def format_state(state: SwitchState) -> str:
    return f"A={_fmt_buf(state.client_a)} B={_fmt_buf(state.client_b)}"


def _parse_buf(text: str) -> Buffer:
    text = text.strip()
    if not (text.startswith("[") and text.endswith("]")):
        raise ValueError(f"malformed buffer {text!r}")
    body = text[1:-1].strip()
    return tuple(sorted(int(x) for x in body.split(","))) if body else ()


def parse_state(text: str) -> SwitchState:
    parts = text.split()
    if len(parts) != 2 or not parts[0].startswith("A=") or not parts[1].startswith("B="):
        raise ValueError(f"malformed state {text!r}")
    return SwitchState(_parse_buf(parts[0][2:]), _parse_buf(parts[1][2:]))


def format_action(action: Action) -> str:
    return str(action)


def parse_action(text: str) -> Action:
    text = text.strip()
    if text == "WAIT":
        return Wait()
    name, _, rest = text.partition("(")
    if not rest.endswith(")"):
        raise ValueError(f"malformed action {text!r}")
    args = [x.strip() for x in rest[:-1].split(",")]
    if name == "SWAP" and len(args) == 2:
        return Swap(int(args[0]), int(args[1]))
    if name == "DISTILL" and len(args) == 3:
        return Distill(args[0], int(args[1]), int(args[2]))
    raise ValueError(f"malformed action {text!r}")


def n_buffers(m_star: int, L: int) -> int:
    return sum(math.comb(k + m_star, m_star) for k in range(L + 1))
