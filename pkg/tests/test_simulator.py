import io
import json
import math
from collections import Counter

import numpy as np
import pytest

from qswitch import _kernels
from qswitch.werner import fidelity_at_age
from qswitch.mdp import Distill, ModelParams, Swap, SwitchState, Wait, build_model
from qswitch.planner import Policy, policy_iteration
from qswitch.simulator import (
    LivePair,
    PolicyMiss,
    SimConfig,
    SimState,
    compute_metrics,
    discounted_return,
    episode_returns,
    horizon_for,
    simulate,
    step,
)

from conftest import default_model, default_solution


class ScriptedRng:
    def __init__(self, values):
        self.values = list(values)

    def random(self):
        return self.values.pop(0)


def policy_with(model, mapping):
    rows = Policy.all_wait(model).rows.copy()
    for state, action in mapping.items():
        rows[model.index[state]] = model.row_of(state, action)
    return Policy(model, rows)


class TestMetrics:
    def test_every_step(self):
        rep = compute_metrics(list(range(1, 101)), [1.0] * 100, 100)
        assert (rep.throughput, rep.jitter, rep.avg_fidelity) == (1.0, 0.0, 1.0)

    def test_hand_computed(self):
        rep = compute_metrics([2, 5, 11], [0.9, 0.95, 1.0], 20)
        assert rep.throughput == pytest.approx(0.15)
        # gaps 3 and 6: population std 1.5
        assert rep.jitter == pytest.approx(1.5)
        assert rep.avg_fidelity == pytest.approx(0.95)
        assert rep.success_count == 3 and rep.success_times == (2, 5, 11)

    def test_empty(self):
        rep = compute_metrics([], [], 10)
        assert rep.throughput == 0.0 and rep.avg_fidelity is None and rep.jitter is None

    def test_single_success_has_no_jitter(self):
        rep = compute_metrics([4], [0.9], 10)
        assert rep.jitter is None and rep.avg_fidelity == 0.9

    @pytest.mark.parametrize("times", [[3, 2], [1, 1], [0, 2], [5, 11]])
    def test_bad_times(self, times):
        with pytest.raises(ValueError):
            compute_metrics(times, [1.0] * len(times), 10)


class TestDiscountedReturn:
    def test_examples(self):
        assert discounted_return([0, 0, 0], 0.9) == 0.0
        assert discounted_return([1, 0, 1], 0.5) == pytest.approx(1.25)
        h = horizon_for(0.9)
        assert 0.9**h < 1e-6 <= 0.9 ** (h - 1)
        assert h == 132
        assert discounted_return([1] * h, 0.9) == pytest.approx(10.0, abs=1e-5)


class TestStep:
    def test_fresh_swap(self):
        model = default_model(0.95)
        pol = policy_with(model, {SwitchState((0,), (0,)): Swap(0, 0)})
        state = SimState([LivePair(1.0, 0)], [LivePair(1.0, 0)])
        ev, nxt = step(state, pol, model.params, ScriptedRng([0.99, 0.99]))
        assert ev.success and ev.delivered_fidelity == 1.0 and ev.reward == 1.0
        assert nxt.switch_state() == SwitchState((), ())

    def test_distill_two_old_pairs(self):
        model = default_model(0.9)
        s = SwitchState((3, 3), ())
        pol = policy_with(model, {s: Distill("A", 3, 3)})
        state = SimState([LivePair(0.85, 3), LivePair(0.85, 3)], [])
        # arrivals fail, distillation draw 0.81 < 0.82 succeeds
        ev, nxt = step(state, pol, model.params, ScriptedRng([0.99, 0.99, 0.81]))
        assert not ev.success and ev.action == Distill("A", 3, 3)
        (pair,) = nxt.client_a
        # created with label 2 and fidelity 0.884146, then aged one step
        assert pair.age_label == 3
        decay = 0.85 ** (1 / 3)
        assert pair.exact_fidelity == pytest.approx(0.725 / 0.82 * decay, abs=1e-12)
        # draw 0.83 >= 0.82 fails: both pairs lost
        _, nxt = step(state, pol, model.params, ScriptedRng([0.99, 0.99, 0.83]))
        assert nxt.switch_state() == SwitchState((), ())

    def test_quantized_pins_fidelity(self):
        model = default_model(0.9)
        s = SwitchState((3, 3), ())
        pol = policy_with(model, {s: Distill("A", 3, 3)})
        state = SimState([LivePair(0.85, 3), LivePair(0.85, 3)], [])
        _, nxt = step(state, pol, model.params, ScriptedRng([0.99, 0.99, 0.5]), quantized=True)
        (pair,) = nxt.client_a
        assert (pair.exact_fidelity, pair.age_label) == (0.85, 3)

    def test_below_threshold_swap_consumes(self):
        model = default_model(0.95)
        s = SwitchState((2,), (2,))
        pol = policy_with(model, {s: Swap(2, 2)})
        state = SimState([LivePair(0.85 ** (2 / 3), 2)], [LivePair(0.85 ** (2 / 3), 2)])
        ev, nxt = step(state, pol, model.params, ScriptedRng([0.99, 0.99]))
        assert not ev.success and ev.delivered_fidelity is None
        assert nxt.switch_state() == SwitchState((), ())

    def test_arrival_into_full_buffer(self):
        model = default_model(0.9)
        state = SimState([LivePair(1.0, 0), LivePair(0.9, 1), LivePair(0.8, 2)], [])
        _, nxt = step(state, Policy.all_wait(model), model.params, ScriptedRng([0.0, 0.99]))
        assert [p.age_label for p in nxt.client_a] == [0, 1, 2]

    def test_quantized_law_matches_mdp(self):
        model = default_model(0.85)
        s = SwitchState((2, 3), (1,))
        action = Distill("A", 2, 3)
        pol = policy_with(model, {s: action})
        fids = model.params.decay.fidelities()
        start = SimState([LivePair(fids[2], 2), LivePair(fids[3], 3)], [LivePair(fids[1], 1)])
        rng = np.random.default_rng(11)
        n = 20_000
        counts = Counter(step(start, pol, model.params, rng, quantized=True)[1].switch_state() for _ in range(n))
        row = model.row_of(s, action)
        expected = {model.states[j]: p for j, p in model.transitions(row)}
        assert set(counts) <= set(expected)
        for nxt, p in expected.items():
            se = math.sqrt(p * (1 - p) / n)
            assert abs(counts[nxt] / n - p) <= 4 * se + 1e-12


class TestSimulate:
    def test_certain_arrivals(self):
        params = ModelParams(lambda1=1.0, lambda2=1.0, f_th=0.9, L=1, m_star=1, f_star=0.85)
        pol = policy_iteration(build_model(params)).policy
        rep = simulate(pol, params, SimConfig(seed=1, steps=500))
        # the run starts from the empty decision state, so step 1 has nothing to swap
        assert rep.success_times == tuple(range(2, 501))
        assert rep.throughput == 499 / 500 and rep.jitter == 0.0 and rep.avg_fidelity == 1.0

    def test_no_arrivals(self):
        params = ModelParams(lambda1=0.0, lambda2=0.0)
        pol = policy_iteration(build_model(params)).policy
        rep = simulate(pol, params, SimConfig(seed=1, steps=1000))
        assert rep.success_count == 0 and rep.throughput == 0.0

    @pytest.mark.parametrize("mode", ["exact", "quantized"])
    def test_reproducible_and_consistent(self, mode):
        model = default_model(0.85)
        pol = default_solution(0.85).policy
        a = simulate(pol, model.params, SimConfig(seed=42, steps=5000, mode=mode))
        b = simulate(pol, model.params, SimConfig(seed=42, steps=5000, mode=mode))
        assert a == b
        assert a.success_count == len(a.success_times)
        assert a.throughput == a.success_count / 5000
        assert a.avg_fidelity >= 0.85

    def test_distilling_policy_delivers_above_threshold(self):
        # force distillation whenever possible so distilled pairs get swapped
        model = default_model(0.8)
        mapping = {}
        for s, acts in zip(model.states, model.actions):
            d = [a for a in acts if isinstance(a, Distill)]
            sw = [a for a in acts if isinstance(a, Swap)]
            if d:
                mapping[s] = d[0]
            elif sw:
                mapping[s] = sw[0]
        pol = Policy.from_mapping(model, {**{s: Wait() for s in model.states}, **mapping})
        buf = io.StringIO()
        rep = simulate(pol, model.params, SimConfig(seed=3, steps=3000), trace=buf)
        recs = [json.loads(l) for l in buf.getvalue().splitlines()]
        assert len(recs) == 3000
        assert any(r["action"].startswith("DISTILL") for r in recs)
        delivered = [r["fidelity"] for r in recs if r["success"]]
        assert len(delivered) == rep.success_count
        assert min(delivered) >= 0.8
        # same run without tracing (compiled path if available)
        assert simulate(pol, model.params, SimConfig(seed=3, steps=3000)) == rep

    def test_non_distilled_pairs_track_age(self):
        model = default_model(0.9, False)
        pol = default_solution(0.9, False).policy
        rng = np.random.default_rng(5)
        decay = model.params.decay
        state = SimState.empty()
        for _ in range(2000):
            _, state = step(state, pol, model.params, rng)
            for p in state.client_a + state.client_b:
                assert p.exact_fidelity == fidelity_at_age(p.age_label, decay)
                assert abs(p.exact_fidelity - math.exp(-decay.alpha * p.age_label)) <= 1e-9

    def test_grid_edge_threshold_matches_mdp(self):
        # f_th equals F(m*): Swap(0, m*) sits exactly on the threshold
        params = ModelParams(lambda1=0.5, lambda2=0.3, m_star=2, f_star=0.8, L=2, f_th=0.8, allow_distill=False)
        model = build_model(params)
        pol = policy_iteration(model).policy
        exact = simulate(pol, params, SimConfig(seed=7, steps=20_000))
        quant = simulate(pol, params, SimConfig(seed=7, steps=20_000, mode="quantized"))
        assert exact == quant

    def test_policy_miss_names_state(self):
        model = default_model(0.9)
        rows = default_solution(0.9).policy.rows.copy()
        rows[model.index[SwitchState((0,), ())]] = -1
        pol = Policy(model, rows)
        with pytest.raises(PolicyMiss, match=r"A=\[0\] B=\[\]"):
            simulate(pol, model.params, SimConfig(seed=0, steps=1000))

    def test_incompatible_params(self):
        pol = default_solution(0.9).policy
        with pytest.raises(ValueError):
            simulate(pol, ModelParams(L=2), SimConfig(steps=10))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SimConfig(steps=0)
        with pytest.raises(ValueError):
            SimConfig(mode="fuzzy")
        with pytest.raises(ValueError):
            SimConfig(seed=-1)


def test_episode_returns_match_planner_value():
    model = default_model(0.9)
    res = default_solution(0.9)
    g = episode_returns(res.policy, model.params, 20_000, 0.9, seed=2)
    se = g.std(ddof=1) / math.sqrt(len(g))
    assert abs(g.mean() - res.values[SwitchState((), ())]) <= 3 * se
