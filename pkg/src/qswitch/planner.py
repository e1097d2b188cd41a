"""Optimal stationary policies for the switch MDP.

Policy iteration is the primary solver; value iteration is kept as an
independent cross-check.  Both use Jacobi sweeps over the flattened
transition tables of :class:`~qswitch.mdp.SwitchModel`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Mapping

import numpy as np

from . import _kernels
from .mdp import (
    Action,
    ActionUnavailable,
    SwitchModel,
    SwitchState,
    canonical,
    format_action,
    format_state,
    parse_action,
    parse_state,
)

log = logging.getLogger(__name__)

__all__ = [
    "PlannerConfig",
    "Policy",
    "ValueFunction",
    "ConvergenceError",
    "policy_evaluation",
    "policy_improvement",
    "policy_iteration",
    "value_iteration",
    "q_values",
    "bellman_residual",
    "dump_policy",
    "parse_policy",
]


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class PlannerConfig:
    gamma: float = 0.9
    eval_tolerance: float = 1e-10
    max_eval_sweeps: int = 100_000
    max_improvement_rounds: int = 1_000
    # actions whose Q-value is within this of the best count as tied
    tie_tolerance: float = 1e-8

    def __post_init__(self) -> None:
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"gamma={self.gamma!r} must lie in [0, 1)")
        if self.eval_tolerance <= 0:
            raise ValueError("eval_tolerance must be positive")
        if self.max_eval_sweeps < 1 or self.max_improvement_rounds < 1:
            raise ValueError("iteration budgets must be >= 1")


class Policy(Mapping[SwitchState, Action]):
    """Deterministic stationary policy over a model's states.

    Stored as one transition-table row per state (``-1`` marks a state with
    no assigned action, which only arises for hand-built partial policies).
    """

    def __init__(self, model: SwitchModel, rows: np.ndarray):
        rows = np.array(rows, dtype=np.int64)
        if rows.shape != (model.n_states,):
            raise ValueError(f"expected {model.n_states} rows, got shape {rows.shape}")
        for s, row in enumerate(rows.tolist()):
            if row != -1 and not (model.sa_ptr[s] <= row < model.sa_ptr[s + 1]):
                raise ActionUnavailable(f"row {row} does not belong to state {format_state(model.states[s])}")
        self.model = model
        self.rows = rows
        self.rows.setflags(write=False)

    @classmethod
    def all_wait(cls, model: SwitchModel) -> "Policy":
        return cls(model, model.sa_ptr[:-1].copy())

    @classmethod
    def from_mapping(cls, model: SwitchModel, mapping: Mapping[SwitchState, Action]) -> "Policy":
        rows = np.full(model.n_states, -1, dtype=np.int64)
        for state, action in mapping.items():
            rows[model.index[canonical(*state)]] = model.row_of(state, action)
        return cls(model, rows)

    @property
    def is_total(self) -> bool:
        return bool(np.all(self.rows >= 0))

    def __getitem__(self, state: SwitchState) -> Action:
        row = self.rows[self.model.index[canonical(*state)]]
        if row < 0:
            raise KeyError(state)
        return self.model.row_actions[row]

    def __iter__(self) -> Iterator[SwitchState]:
        return (s for s, row in zip(self.model.states, self.rows.tolist()) if row >= 0)

    def __len__(self) -> int:
        return int(np.count_nonzero(self.rows >= 0))

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Policy):
            return self.model.states == other.model.states and dict(self.items()) == dict(other.items())
        return super().__eq__(other)

    __hash__ = None  # type: ignore[assignment]


class ValueFunction(Mapping[SwitchState, float]):
    def __init__(self, model: SwitchModel, values: np.ndarray):
        self.model = model
        self.values = np.asarray(values, dtype=np.float64)

    def __getitem__(self, state: SwitchState) -> float:
        return float(self.values[self.model.index[canonical(*state)]])

    def __iter__(self) -> Iterator[SwitchState]:
        return iter(self.model.states)

    def __len__(self) -> int:
        return self.model.n_states


def _tables(model: SwitchModel):
    return model.sa_reward, model.tr_ptr, model.tr_next, model.tr_prob


def q_values(model: SwitchModel, values: np.ndarray, gamma: float) -> np.ndarray:
    """Expected one-step reward plus discounted next value for every row."""
    contrib = model.tr_prob * values[model.tr_next]
    return model.sa_reward + gamma * np.add.reduceat(contrib, model.tr_ptr[:-1])


def bellman_residual(model: SwitchModel, values: np.ndarray, gamma: float, policy: Policy | None = None) -> float:
    """Max-norm residual of the optimal (or fixed-policy) Bellman operator."""
    q = q_values(model, values, gamma)
    if policy is not None:
        target = q[policy.rows]
    else:
        target = np.maximum.reduceat(q, model.sa_ptr[:-1])
    return float(np.max(np.abs(target - values)))


def policy_evaluation(
    policy: Policy,
    model: SwitchModel,
    config: PlannerConfig = PlannerConfig(),
    initial: np.ndarray | None = None,
) -> ValueFunction:
    """Iteratively evaluate ``policy`` until successive sweeps differ by at most the tolerance."""
    if not policy.is_total:
        missing = next(s for s, r in zip(model.states, policy.rows.tolist()) if r < 0)
        raise ActionUnavailable(f"policy has no action for {format_state(missing)}")
    V = np.zeros(model.n_states) if initial is None else np.array(initial, dtype=np.float64)
    out = np.empty_like(V)
    reward, tr_ptr, tr_next, tr_prob = _tables(model)
    diff = np.inf
    for sweep in range(1, config.max_eval_sweeps + 1):
        diff = _kernels.policy_sweep(V, out, policy.rows, config.gamma, reward, tr_ptr, tr_next, tr_prob)
        V, out = out, V
        if diff <= config.eval_tolerance:
            return ValueFunction(model, V)
    raise ConvergenceError("policy evaluation did not converge", diff, config.max_eval_sweeps)


def _greedy(model: SwitchModel, V: np.ndarray, config: PlannerConfig) -> tuple[np.ndarray, np.ndarray, float]:
    out = np.empty_like(V)
    choice = np.empty(model.n_states, dtype=np.int64)
    reward, tr_ptr, tr_next, tr_prob = _tables(model)
    diff = _kernels.greedy_sweep(
        V, out, choice, config.gamma, model.sa_ptr, reward, tr_ptr, tr_next, tr_prob, config.tie_tolerance
    )
    return out, choice, diff


def policy_improvement(values: ValueFunction, model: SwitchModel, config: PlannerConfig = PlannerConfig()) -> Policy:
    """Greedy policy for ``values``; near-ties resolve to the earliest action in model order."""
    _, choice, _ = _greedy(model, np.asarray(values.values, dtype=np.float64), config)
    return Policy(model, choice)


@dataclass
class PlannerResult:
    policy: Policy
    values: ValueFunction
    iterations: int
    residual: float

    def __iter__(self):
        # unpacks as (policy, values, iterations)
        return iter((self.policy, self.values, self.iterations))


def policy_iteration(model: SwitchModel, config: PlannerConfig = PlannerConfig()) -> PlannerResult:
    """Howard policy iteration from the all-Wait policy.

    Evaluation is warm-started from the previous policy's values.
    """
    policy = Policy.all_wait(model)
    V = None
    for rnd in range(1, config.max_improvement_rounds + 1):
        values = policy_evaluation(policy, model, config, initial=V)
        V = values.values
        improved = policy_improvement(values, model, config)
        if np.array_equal(improved.rows, policy.rows):
            residual = bellman_residual(model, V, config.gamma)
            log.debug("policy iteration converged after %d rounds (residual %.2e)", rnd, residual)
            return PlannerResult(policy, values, rnd, residual)
        policy = improved
    raise ConvergenceError(
        "policy iteration exceeded max_improvement_rounds",
        bellman_residual(model, V, config.gamma),
        config.max_improvement_rounds,
    )


def value_iteration(model: SwitchModel, config: PlannerConfig = PlannerConfig()) -> ValueFunction:
    """Iterate the optimal Bellman operator to an eval_tolerance-accurate fixed point.

    Use :func:`policy_improvement` on the result to extract a greedy policy.
    """
    V = np.zeros(model.n_states)
    g = config.gamma
    stop = config.eval_tolerance * (1.0 - g) / g if g > 0 else np.inf
    diff = np.inf
    for sweep in range(1, config.max_eval_sweeps + 1):
        V, _, diff = _greedy(model, V, config)
        if diff <= stop:
            log.debug("value iteration converged after %d sweeps", sweep)
            return ValueFunction(model, V)
    raise ConvergenceError("value iteration did not converge", diff, config.max_eval_sweeps)


# --------------------------------------------------------------------------
# text format: one "A=[..] B=[..] -> ACTION" line per state, in model order


def dump_policy(policy: Policy, fp: IO[str], header: Mapping[str, object] | None = None) -> None:
    """Write ``policy`` as text.  ``header`` items become leading ``# key: value`` lines."""
    for key, value in (header or {}).items():
        fp.write(f"# {key}: {value}\n")
    for state, row in zip(policy.model.states, policy.rows.tolist()):
        if row >= 0:
            fp.write(f"{format_state(state)} -> {format_action(policy.model.row_actions[row])}\n")


def iter_policy_lines(lines: Iterable[str]) -> Iterator[tuple[SwitchState, Action]]:
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        left, sep, right = line.partition("->")
        if not sep:
            raise ValueError(f"line {lineno}: expected 'STATE -> ACTION', got {line!r}")
        try:
            yield parse_state(left.strip()), parse_action(right.strip())
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None


def parse_policy(lines: Iterable[str], model: SwitchModel) -> Policy:
    mapping = {}
    for state, action in iter_policy_lines(lines):
        if state not in model.index:
            raise ValueError(f"state {format_state(state)} is not in the model's state space")
        mapping[state] = action
    return Policy.from_mapping(model, mapping)


def read_policy_header(lines: Iterable[str]) -> dict[str, str]:
    out = {}
    for raw in lines:
        if not raw.startswith("#"):
            break
        key, _, value = raw[1:].partition(":")
        out[key.strip()] = value.strip()
    return out
