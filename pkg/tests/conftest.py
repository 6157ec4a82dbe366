from __future__ import annotations

import numpy as np
import pytest

import stable_moe as sm
from stable_moe.model import ServerState, SystemParams, TokenBatch


@pytest.fixture(scope="session")
def paper_params() -> SystemParams:
    return sm.default_params()


def make_params(num_servers=2, top_k=1, caps=None, budgets=None, **overrides) -> SystemParams:
    """Small hand-built configuration for unit tests."""
    caps = caps if caps is not None else [15.0] * num_servers
    budgets = budgets if budgets is not None else [9.5] * num_servers
    base = dict(
        num_servers=num_servers,
        top_k=top_k,
        slot_duration=1.0,
        arrival_rate=10.0,
        cycles_per_token=1e7,
        max_frequency=3e9,
        switched_capacitance=tuple([2e-27] * num_servers),
        energy_cap=tuple(caps),
        energy_budget=tuple(budgets),
        tradeoff_v=1.0,
        consistency_weight=1.0,
        horizon=10,
        rng_seed=0,
    )
    base.update(overrides)
    return SystemParams(**base)


def zero_state(p: SystemParams):
    return tuple(ServerState(0, 0.0) for _ in range(p.num_servers))


def random_small_instance(rng: np.random.Generator):
    """Instance inside the exhaustive-search bounds: <=5 tokens, <=4 servers,
    K <= 2, backlogs in [0,20] tokens / [0,10] J, V in {0.1,1,10},
    mu in {0,1,5}."""
    num_servers = int(rng.integers(2, 5))
    top_k = int(rng.integers(1, min(2, num_servers) + 1))
    batch_size = int(rng.integers(0, 6))
    caps, budgets = [], []
    for _ in range(num_servers):
        cap = float(rng.uniform(0.5, 15.0))
        caps.append(cap)
        budgets.append(float(rng.uniform(0.1, cap)))
    p = make_params(
        num_servers=num_servers,
        top_k=top_k,
        caps=caps,
        budgets=budgets,
        tradeoff_v=float(rng.choice([0.1, 1.0, 10.0])),
        consistency_weight=float(rng.choice([0.0, 1.0, 5.0])),
    )
    batch = TokenBatch(0, rng.uniform(0.0, 1.0, size=(batch_size, num_servers)))
    states = tuple(
        ServerState(int(rng.integers(0, 21)), float(rng.uniform(0.0, 10.0)))
        for _ in range(num_servers)
    )
    return p, batch, states
