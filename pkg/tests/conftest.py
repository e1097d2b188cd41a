import functools

import pytest

from qswitch.mdp import ModelParams, build_model
from qswitch.planner import PlannerConfig, policy_iteration

DEFAULTS = dict(lambda1=0.7, lambda2=0.7, m_star=3, f_star=0.85, L=3)
THRESHOLDS = (0.70, 0.75, 0.80, 0.85, 0.90, 0.95)


@functools.lru_cache(maxsize=None)
def default_model(f_th=0.9, allow_distill=True):
    return build_model(ModelParams(f_th=f_th, allow_distill=allow_distill, **DEFAULTS))


@functools.lru_cache(maxsize=None)
def default_solution(f_th=0.9, allow_distill=True):
    return policy_iteration(default_model(f_th, allow_distill), PlannerConfig())


_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    def _record(criterion: int, passed: bool, detail: str) -> None:
        _ACCEPTANCE[criterion] = (passed, detail)
        print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} - {detail}")

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {n}: {detail}")
