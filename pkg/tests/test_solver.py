from __future__ import annotations

import math

import numpy as np
import pytest

import stable_moe as sm
from stable_moe import dynamics, solver
from stable_moe.gating import PURPOSE_ROUTE, slot_stream
from stable_moe.model import FeasibilityError, ServerState, TokenBatch

from conftest import make_params, random_small_instance, zero_state


def test_energy_cap_tokens_worked_values():
    p = make_params(num_servers=2, caps=[15.0, 2.0], budgets=[9.5, 1.0])
    assert solver.energy_cap_tokens(0, p) == 195
    assert solver.energy_cap_tokens(1, p) == 100  # exact cube boundary


def test_energy_cap_tokens_zero_cap():
    assert solver._energy_cap_count(0.0, 2e-6) == 0


def test_profile_reduces_to_log_when_queues_empty():
    p = make_params(num_servers=1, top_k=1, tradeoff_v=1.0, caps=[15.0], budgets=[9.5])
    prof = solver.build_profile(0, ServerState(0, 0.0), 250, p)
    cap = min(195, 300)
    for n in (0, 1, 5, 200, 250):
        assert prof.values[n] == pytest.approx(math.log1p(min(n, cap)), abs=1e-12)
    assert prof.values[1] == pytest.approx(math.log(2))
    assert prof.best_completions[3] == 3
    assert prof.best_frequencies[3] == dynamics.min_frequency_for(3, p)


def test_profile_empty_input_is_null():
    p = make_params(num_servers=1, top_k=1)
    prof = solver.build_profile(0, ServerState(0, 0.0), 0, p)
    assert prof.values[0] == 0.0
    assert prof.best_completions[0] == 0
    assert prof.best_frequencies[0] == 0.0


def test_profile_flat_when_energy_price_dominates():
    # first increment already negative: processing nothing is optimal
    p = make_params(num_servers=1, top_k=1, tradeoff_v=1.0, caps=[15.0], budgets=[9.5])
    huge_price = ServerState(0, 1e27)
    prof = solver.build_profile(0, huge_price, 50, p)
    assert (prof.values == 0.0).all()
    assert (prof.best_completions == 0).all()


def test_profile_concavity_on_random_draws():
    rng = np.random.default_rng(41)
    p = make_params(num_servers=1, top_k=1, caps=[15.0], budgets=[9.5])
    for _ in range(100):
        state = ServerState(int(rng.integers(0, 400)), float(rng.uniform(0, 40)))
        v = float(rng.choice([0.1, 1.0, 10.0, 100.0]))
        prof = solver.build_profile(0, state, 500, p.with_overrides(tradeoff_v=v))
        gains = np.diff(prof.values)
        assert gains.min() >= -1e-9
        assert (np.diff(gains) <= 1e-9).all()
        ub = np.minimum(state.token_backlog + np.arange(501),
                        min(prof.capacity_limit, prof.energy_limit))
        assert (prof.best_completions <= ub).all()


def test_solver_forced_when_top_k_equals_server_count():
    p = make_params(num_servers=2, top_k=2)
    batch = TokenBatch(0, np.array([[0.9, 0.1], [0.2, 0.8]]))
    res = sm.solve_per_slot(batch, zero_state(p), p)
    assert (res.decision.routing == 1).all()
    assert res.solver_kind == "exact-flow"
    assert res.optimality_certificate


def test_solver_concentrates_when_consistency_pays():
    p = make_params(num_servers=2, top_k=1, tradeoff_v=1.0, consistency_weight=10.0)
    batch = TokenBatch(0, np.array([[0.9, 0.1], [0.9, 0.1]]))
    res = sm.solve_per_slot(batch, zero_state(p), p)
    assert res.decision.routing.tolist() == [[1, 0], [1, 0]]
    assert res.objective_value == pytest.approx(math.log(3) + 18.0, abs=1e-9)


def test_solver_splits_and_breaks_tie_to_lower_indices():
    p = make_params(num_servers=2, top_k=1, tradeoff_v=1.0, consistency_weight=0.0)
    batch = TokenBatch(0, np.array([[0.9, 0.1], [0.9, 0.1]]))
    res = sm.solve_per_slot(batch, zero_state(p), p)
    assert res.objective_value == pytest.approx(2 * math.log(2), abs=1e-9)
    # tie between the two splits goes to token 0 -> server 0
    assert res.decision.routing.tolist() == [[1, 0], [0, 1]]


def test_solver_empty_batch_still_drains_queues():
    p = make_params(num_servers=2, top_k=1, tradeoff_v=1.0, caps=[15.0, 15.0], budgets=[9.5, 9.5])
    states = (ServerState(40, 0.0), ServerState(0, 0.0))
    batch = TokenBatch(0, np.zeros((0, 2)))
    res = sm.solve_per_slot(batch, states, p)
    assert res.decision.routing.shape == (0, 2)
    assert dynamics.capacity(float(res.decision.frequencies[0]), p) == 40
    assert res.decision.frequencies[1] == 0.0


def test_flow_matches_oracle_on_random_instances():
    rng = np.random.default_rng(1234)
    for _ in range(60):
        p, batch, states = random_small_instance(rng)
        flow = sm.solve_per_slot(batch, states, p)
        oracle = sm.brute_force_oracle(batch, states, p)
        assert flow.objective_value == pytest.approx(oracle.objective_value, abs=1e-9)


def test_branch_and_bound_matches_oracle():
    rng = np.random.default_rng(4321)
    for _ in range(40):
        p, batch, states = random_small_instance(rng)
        bnb = sm.branch_and_bound_solve(batch, states, p)
        oracle = sm.brute_force_oracle(batch, states, p)
        assert bnb.objective_value == pytest.approx(oracle.objective_value, abs=1e-9)
        assert bnb.solver_kind == "branch-and-bound"


def test_oracle_frequency_grid_never_improves():
    rng = np.random.default_rng(99)
    for _ in range(10):
        p, batch, states = random_small_instance(rng)
        sm.brute_force_oracle(batch, states, p, frequency_grid=12)


def test_oracle_single_server_reduces_to_profile_search():
    p = make_params(num_servers=1, top_k=1, tradeoff_v=2.0, caps=[6.0], budgets=[3.0])
    states = (ServerState(9, 1.5),)
    batch = TokenBatch(0, np.array([[0.7], [0.2]]))
    oracle = sm.brute_force_oracle(batch, states, p)
    flow = sm.solve_per_slot(batch, states, p)
    assert oracle.decision.routing.sum() == 2
    assert oracle.objective_value == pytest.approx(flow.objective_value, abs=1e-12)


def test_oracle_rejects_oversized_instances():
    p = make_params(num_servers=4, top_k=2)
    batch = TokenBatch(0, np.random.default_rng(0).uniform(0, 1, size=(9, 4)))
    with pytest.raises(FeasibilityError, match="too large"):
        sm.brute_force_oracle(batch, zero_state(p), p)


def test_routing_invariant_to_scaling_tradeoff_alone():
    # with empty queues the argmax depends on (V, mu) only through mu
    rng = np.random.default_rng(7)
    p = make_params(num_servers=3, top_k=1, tradeoff_v=1.0, consistency_weight=2.0,
                    caps=[15.0, 9.0, 4.0], budgets=[9.5, 5.0, 2.0])
    batch = TokenBatch(0, rng.uniform(0, 1, size=(4, 3)))
    base = sm.solve_per_slot(batch, zero_state(p), p)
    doubled = sm.solve_per_slot(batch, zero_state(p), p.with_overrides(tradeoff_v=2.0))
    np.testing.assert_array_equal(base.decision.routing, doubled.decision.routing)


def test_objective_invariant_under_score_weight_rebalance():
    # scaling scores by a and the consistency weight by 1/a leaves the
    # problem unchanged
    rng = np.random.default_rng(8)
    p = make_params(num_servers=3, top_k=2, tradeoff_v=3.0, consistency_weight=2.0,
                    caps=[15.0, 9.0, 4.0], budgets=[9.5, 5.0, 2.0])
    scores = rng.uniform(0, 0.5, size=(4, 3))
    states = tuple(ServerState(int(rng.integers(0, 10)), float(rng.uniform(0, 4)))
                   for _ in range(3))
    a = sm.solve_per_slot(TokenBatch(0, scores), states, p)
    b = sm.solve_per_slot(TokenBatch(0, 2.0 * scores), states,
                          p.with_overrides(consistency_weight=1.0))
    np.testing.assert_array_equal(a.decision.routing, b.decision.routing)
    assert a.objective_value == pytest.approx(b.objective_value, abs=1e-9)


def test_every_emitted_decision_is_feasible():
    rng = np.random.default_rng(55)
    p = make_params(num_servers=4, top_k=2, tradeoff_v=20.0, consistency_weight=0.5,
                    caps=[15.0, 10.0, 5.0, 3.0], budgets=[9.0, 5.0, 2.5, 1.5])
    states = zero_state(p)
    for t in range(30):
        batch = TokenBatch(t, rng.uniform(0, 1, size=(int(rng.integers(0, 40)), 4)))
        res = sm.solve_per_slot(batch, states, p)
        routing = res.decision.routing
        if batch.size:
            assert (routing.sum(axis=1) == p.top_k).all()
        freqs = res.decision.frequencies
        assert (freqs >= 0).all() and (freqs <= p.max_frequency).all()
        routed = routing.sum(axis=0)
        new_states = []
        for j in range(4):
            done = dynamics.completed_tokens(states[j].token_backlog, int(routed[j]),
                                             float(freqs[j]), p)
            used = dynamics.compute_energy(done, float(freqs[j]), j, p) if done else 0.0
            assert used <= p.energy_cap[j] + 1e-9
            assert done <= states[j].token_backlog + routed[j]
            new_states.append(ServerState(
                dynamics.update_token_queue(states[j].token_backlog, int(routed[j]), done),
                dynamics.update_energy_queue(states[j].energy_backlog, used, p.energy_budget[j]),
            ))
        states = tuple(new_states)


# --- baselines ---------------------------------------------------------------


def test_queue_aware_routing_is_forced_by_backlogs():
    p = make_params(num_servers=3, top_k=2, caps=[15.0] * 3, budgets=[9.5] * 3)
    states = (ServerState(5, 0.0), ServerState(1, 0.0), ServerState(3, 0.0))
    batch = TokenBatch(0, np.full((4, 3), 0.5))
    routing = sm.baseline_route("C", batch, states, p)
    assert (routing == np.array([0, 1, 1])[None, :]).all()


def test_energy_aware_routing_uses_energy_backlogs():
    p = make_params(num_servers=3, top_k=1, caps=[15.0] * 3, budgets=[9.5] * 3)
    states = (ServerState(0, 2.0), ServerState(0, 0.5), ServerState(0, 1.0))
    batch = TokenBatch(0, np.full((2, 3), 0.5))
    routing = sm.baseline_route("D", batch, states, p)
    assert (routing == np.array([0, 1, 0])[None, :]).all()


def test_score_routing_takes_the_highest_scores():
    p = make_params(num_servers=3, top_k=1)
    batch = TokenBatch(0, np.array([[0.1, 0.7, 0.2]]))
    routing = sm.baseline_route("B", batch, zero_state(p), p)
    assert routing.tolist() == [[0, 1, 0]]


def test_random_routing_concentration_and_determinism():
    p = sm.default_params()
    batch = TokenBatch(0, np.full((10_000, 10), 0.1))
    rng = slot_stream(p.rng_seed, PURPOSE_ROUTE, 0)
    routing = sm.baseline_route("A", batch, zero_state(p), p, rng)
    assert (routing.sum(axis=1) == 3).all()
    share = routing.mean(axis=0)
    sigma = math.sqrt(0.3 * 0.7 / 10_000)
    assert (np.abs(share - 0.3) < 3 * sigma + 1e-12).all()
    rng2 = slot_stream(p.rng_seed, PURPOSE_ROUTE, 0)
    routing2 = sm.baseline_route("A", batch, zero_state(p), p, rng2)
    np.testing.assert_array_equal(routing, routing2)


def test_random_routing_requires_a_generator():
    p = make_params(num_servers=2, top_k=1)
    with pytest.raises(ValueError, match="generator"):
        sm.baseline_route("A", TokenBatch(0, np.zeros((1, 2))), zero_state(p), p)


def test_unknown_baseline_rejected():
    p = make_params(num_servers=2, top_k=1)
    with pytest.raises(ValueError, match="unknown baseline"):
        sm.baseline_route("E", TokenBatch(0, np.zeros((0, 2))), zero_state(p), p)


def test_baseline_frequency_worked_values():
    p = make_params(num_servers=1, top_k=1, caps=[15.0], budgets=[9.5])
    assert sm.baseline_frequency(390, ServerState(0, 0.0), 0, p) == pytest.approx(1.95e9)
    assert sm.baseline_frequency(0, ServerState(0, 0.0), 0, p) == 0.0
    assert sm.baseline_frequency(30, ServerState(50, 0.0), 0, p) == pytest.approx(8e8)


def test_baseline_decision_is_feasible_and_uncertified():
    p = make_params(num_servers=3, top_k=2, caps=[15.0, 4.0, 3.0], budgets=[9.0, 2.0, 1.5])
    batch = TokenBatch(0, np.random.default_rng(2).uniform(0, 1, size=(20, 3)))
    for kind in ("B", "C", "D"):
        res = sm.baseline_decision(kind, batch, zero_state(p), p)
        assert res.solver_kind == "greedy"
        assert not res.optimality_certificate
        assert (res.decision.routing.sum(axis=1) == 2).all()
