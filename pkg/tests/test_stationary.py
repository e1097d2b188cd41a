import numpy as np
import pytest

from qswitch.mdp import ModelParams, build_model
from qswitch.planner import Policy, policy_iteration
from qswitch.simulator import SimConfig, simulate
from qswitch.stationary import long_run_reward_rate, reachable_states, stationary_distribution


def test_two_state_chain():
    P = np.array([[0.9, 0.1], [0.5, 0.5]])
    pi = stationary_distribution(P)
    # balance: 0.1 pi0 = 0.5 pi1
    assert pi == pytest.approx([5 / 6, 1 / 6], abs=1e-12)


def test_restricted_to_reachable():
    # state 2 is unreachable from 0 and absorbing on its own
    P = np.array([[0.5, 0.5, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert list(reachable_states(P, 0)) == [0, 1]
    pi = stationary_distribution(P, start=0)
    assert pi == pytest.approx([2 / 3, 1 / 3, 0.0], abs=1e-12)
    with pytest.raises(np.linalg.LinAlgError):
        stationary_distribution(P)


def test_certain_arrivals_rate_is_one():
    params = ModelParams(lambda1=1.0, lambda2=1.0, f_th=0.9, L=1, m_star=1, f_star=0.85)
    model = build_model(params)
    assert long_run_reward_rate(model, policy_iteration(model).policy) == pytest.approx(1.0)


def test_all_wait_rate_is_zero():
    model = build_model(ModelParams(m_star=1, L=1, f_star=0.9))
    assert long_run_reward_rate(model, Policy.all_wait(model)) == 0.0


def test_small_model_against_simulation():
    params = ModelParams(lambda1=0.5, lambda2=0.3, m_star=2, f_star=0.8, L=2, f_th=0.8, allow_distill=False)
    model = build_model(params)
    pol = policy_iteration(model).policy
    rate = long_run_reward_rate(model, pol)
    sim = simulate(pol, params, SimConfig(seed=7, steps=200_000))
    assert sim.throughput == pytest.approx(rate, rel=0.02)
