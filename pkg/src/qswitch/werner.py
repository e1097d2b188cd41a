"""Werner-state arithmetic for link-level Bell pairs.

All functions are pure and operate on plain floats.  The physically
meaningful fidelity domain is [1/4, 1]; a Werner state is entangled only
for F > 1/2.  Inputs in [0, 1/4) are accepted (the formulas stay defined)
but are logged as lying in the separable regime.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

log = logging.getLogger(__name__)

__all__ = [
    "DecayModel",
    "decoherence_rate",
    "fidelity_at_age",
    "swap_fidelity",
    "distill_success_prob",
    "distill_output_fidelity",
    "nearest_age",
]


def _check_fidelity(name: str, f: float) -> None:
    if not (0.0 <= f <= 1.0):
        raise ValueError(f"{name}={f!r} is outside the fidelity domain [0, 1]")
    if f < 0.25:
        log.debug("%s=%g is below 1/4 (separable regime)", name, f)


def decoherence_rate(f_star: float, m_star: int) -> float:
    """Return alpha such that exp(-alpha * m_star) == f_star."""
    if not (0.0 < f_star < 1.0):
        raise ValueError(f"f_star={f_star!r} must lie in the open interval (0, 1)")
    if m_star < 1:
        raise ValueError(f"m_star={m_star!r} must be >= 1")
    return -math.log(f_star) / m_star


@dataclass(frozen=True)
class DecayModel:
    """Exponential memory decoherence with a hard cutoff age.

    ``m_star = 0`` is allowed as a degenerate model in which pairs are only
    usable in the step they arrive; ``alpha`` is then 0.
    """

    f_star: float
    m_star: int

    def __post_init__(self) -> None:
        if self.m_star < 0:
            raise ValueError(f"m_star={self.m_star!r} must be >= 0")
        if self.m_star > 0:
            decoherence_rate(self.f_star, self.m_star)  # validates
        elif not (0.0 < self.f_star <= 1.0):
            raise ValueError(f"f_star={self.f_star!r} must lie in (0, 1]")

    @property
    def alpha(self) -> float:
        if self.m_star == 0:
            return 0.0
        return decoherence_rate(self.f_star, self.m_star)

    def fidelities(self) -> tuple[float, ...]:
        """Fidelity of a pair at every age 0..m_star."""
        return tuple(fidelity_at_age(m, self) for m in range(self.m_star + 1))


def fidelity_at_age(m: int, model: DecayModel) -> float:
    if m < 0 or m > model.m_star:
        raise ValueError(f"age {m} outside [0, {model.m_star}]")
    if m == model.m_star and m > 0:
        # exact by construction; avoids exp(log(x)) round-off at the cutoff
        return model.f_star
    return math.exp(-model.alpha * m)


def swap_fidelity(f1: float, f2: float) -> float:
    """Fidelity of the pair produced by a Bell measurement joining two Werner pairs."""
    _check_fidelity("f1", f1)
    _check_fidelity("f2", f2)
    return ((4.0 * f1 - 1.0) * (4.0 * f2 - 1.0) / 3.0 + 1.0) / 4.0


def distill_success_prob(f1: float, f2: float) -> float:
    """Success probability of two-to-one (BBPSSW) distillation."""
    _check_fidelity("f1", f1)
    _check_fidelity("f2", f2)
    return 8.0 / 9.0 * f1 * f2 - 2.0 / 9.0 * (f1 + f2) + 5.0 / 9.0


def distill_output_fidelity(f1: float, f2: float) -> float:
    """Fidelity of the surviving pair, conditioned on distillation success."""
    p = distill_success_prob(f1, f2)
    if p <= 0.0:
        raise ZeroDivisionError(f"distillation success probability is {p} for ({f1}, {f2})")
    return (10.0 / 9.0 * f1 * f2 - 1.0 / 9.0 * (f1 + f2) + 1.0 / 9.0) / p


def nearest_age(f: float, model: DecayModel) -> int:
    """Age on the grid 0..m_star whose fidelity is closest to ``f``.

    Ties go to the smaller age.
    """
    _check_fidelity("f", f)
    best, best_gap = 0, math.inf
    for m, fm in enumerate(model.fidelities()):
        gap = abs(f - fm)
        if gap < best_gap:
            best, best_gap = m, gap
    return best
