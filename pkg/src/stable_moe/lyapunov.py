"""Quadratic-potential bookkeeping for the queue system.

The potential is half the sum of squared backlogs over both queue families.
Minimizing its one-slot drift minus a weighted reward (throughput utility
plus gating consistency) is what the per-slot solver does; this module
evaluates that objective for any candidate decision, reports the realized
drift-plus-penalty of a decision against the pathwise upper bound, and
computes the decision-independent constant that caps the bound's quadratic
part in expectation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import dynamics
from .model import (
    ENERGY_TOL,
    FeasibilityError,
    ServerState,
    SlotDecision,
    SystemParams,
    TokenBatch,
)

__all__ = [
    "LyapunovReport",
    "lyapunov_value",
    "bound_B",
    "check_feasible",
    "slot_flows",
    "per_slot_objective",
    "drift_plus_penalty_report",
    "report_from_flows",
]


@dataclass(frozen=True)
class LyapunovReport:
    """Realized one-slot accounting: potential before/after, drift, penalty,
    drift-plus-penalty, and the pathwise right-hand side it must not exceed.
    """

    value: float
    value_next: float
    realized_drift: float
    penalty: float
    drift_plus_penalty: float
    bound_rhs: float


def lyapunov_value(states: Sequence[ServerState]) -> float:
    """Half the sum over servers of squared token and energy backlogs."""
    total = 0.0
    for s in states:
        total += s.token_backlog * s.token_backlog + s.energy_backlog * s.energy_backlog
    return 0.5 * total


def bound_B(p: SystemParams) -> float:
    """Decision-independent constant bounding the expected quadratic drift
    terms: half the sum over servers of (rate + rate^2) + capacity^2 +
    energy_cap^2 + energy_budget^2, with capacity taken at max frequency.
    """
    d_max = dynamics.capacity(p.max_frequency, p)
    lam = p.arrival_rate
    total = 0.0
    for j in range(p.num_servers):
        total += (lam + lam * lam) + d_max * d_max + p.energy_cap[j] ** 2 + p.energy_budget[j] ** 2
    return 0.5 * total


def check_feasible(batch: TokenBatch, states: Sequence[ServerState],
                   decision: SlotDecision, p: SystemParams) -> None:
    """Raise FeasibilityError naming the violated constraint and the
    offending token/server if the decision is not implementable.
    """
    routing = decision.routing
    freqs = decision.frequencies
    if routing.shape != (batch.size, p.num_servers):
        raise FeasibilityError(
            f"routing shape {routing.shape} does not match "
            f"(batch={batch.size}, servers={p.num_servers})"
        )
    row_sums = routing.sum(axis=1)
    bad = np.nonzero(row_sums != p.top_k)[0]
    if bad.size:
        i = int(bad[0])
        raise FeasibilityError(
            f"C1 violated for token {i}: routed to {int(row_sums[i])} servers, expected top_k={p.top_k}"
        )
    for j in range(p.num_servers):
        f = float(freqs[j])
        if not 0.0 <= f <= p.max_frequency:
            raise FeasibilityError(
                f"C2 violated for server {j}: frequency {f} outside [0, {p.max_frequency}]"
            )
    routed = routing.sum(axis=0).astype(np.int64)
    for j in range(p.num_servers):
        done = dynamics.completed_tokens(states[j].token_backlog, int(routed[j]), float(freqs[j]), p)
        used = dynamics.compute_energy(done, float(freqs[j]), j, p) if done else 0.0
        if used > p.energy_cap[j] + ENERGY_TOL:
            raise FeasibilityError(
                f"C4 violated for server {j}: energy {used} exceeds cap {p.energy_cap[j]}"
            )


def slot_flows(batch: TokenBatch, states: Sequence[ServerState],
               decision: SlotDecision, p: SystemParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Realized (routed, completed, energy) per server under a decision."""
    routed = decision.routing.sum(axis=0).astype(np.int64)
    completed = np.zeros(p.num_servers, dtype=np.int64)
    energy = np.zeros(p.num_servers)
    for j in range(p.num_servers):
        f = float(decision.frequencies[j])
        completed[j] = dynamics.completed_tokens(states[j].token_backlog, int(routed[j]), f, p)
        energy[j] = dynamics.compute_energy(int(completed[j]), f, j, p) if completed[j] else 0.0
    return routed, completed, energy


def gating_consistency(batch: TokenBatch, decision: SlotDecision) -> float:
    """Sum of gating scores over the chosen routing entries."""
    if batch.size == 0:
        return 0.0
    return float((batch.scores * decision.routing).sum())


def per_slot_objective(batch: TokenBatch, states: Sequence[ServerState],
                       decision: SlotDecision, p: SystemParams) -> float:
    """Value the per-slot problem assigns to a feasible decision:

        V * [sum_j log(1 + completed_j) + mu * consistency]
        - sum_j Q_j * (routed_j - completed_j)
        - sum_j Z_j * (energy_j - budget_j)

    Natural logarithm. The budget term is decision-independent but kept so
    reported values match the problem statement literally.
    """
    check_feasible(batch, states, decision, p)
    routed, completed, energy = slot_flows(batch, states, decision, p)
    q = np.array([s.token_backlog for s in states], dtype=np.float64)
    z = np.array([s.energy_backlog for s in states], dtype=np.float64)
    budget = np.asarray(p.energy_budget)
    reward = np.log1p(completed).sum() + p.consistency_weight * gating_consistency(batch, decision)
    value = p.tradeoff_v * reward
    value -= float(q @ (routed - completed))
    value -= float(z @ (energy - budget))
    return float(value)


def report_from_flows(states: Sequence[ServerState], routed: np.ndarray,
                      completed: np.ndarray, energy: np.ndarray, p: SystemParams,
                      consistency: float = 0.0) -> LyapunovReport:
    """Build the drift report from realized per-server flows.

    The right-hand side is the pathwise bound with expectations dropped:
    half the squared increments, plus the backlog-weighted increments, plus
    the penalty.
    """
    routed = np.asarray(routed, dtype=np.float64)
    completed_arr = np.asarray(completed, dtype=np.float64)
    energy = np.asarray(energy, dtype=np.float64)
    q = np.array([s.token_backlog for s in states], dtype=np.float64)
    z = np.array([s.energy_backlog for s in states], dtype=np.float64)
    budget = np.asarray(p.energy_budget)

    next_states = tuple(
        ServerState(
            dynamics.update_token_queue(states[j].token_backlog, int(routed[j]), int(completed[j])),
            dynamics.update_energy_queue(states[j].energy_backlog, float(energy[j]), p.energy_budget[j]),
        )
        for j in range(p.num_servers)
    )
    value = lyapunov_value(states)
    value_next = lyapunov_value(next_states)
    drift = value_next - value
    reward = np.log1p(completed_arr).sum() + p.consistency_weight * consistency
    penalty = -p.tradeoff_v * float(reward)
    dq = routed - completed_arr
    de = energy - budget
    rhs = 0.5 * float(dq @ dq + de @ de) + float(q @ dq) + float(z @ de) + penalty
    return LyapunovReport(
        value=value,
        value_next=value_next,
        realized_drift=drift,
        penalty=penalty,
        drift_plus_penalty=drift + penalty,
        bound_rhs=rhs,
    )


def drift_plus_penalty_report(batch: TokenBatch, states: Sequence[ServerState],
                              decision: SlotDecision, p: SystemParams) -> LyapunovReport:
    """Realized drift-plus-penalty of a feasible decision, with the pathwise
    upper bound it is guaranteed not to exceed.
    """
    check_feasible(batch, states, decision, p)
    routed, completed, energy = slot_flows(batch, states, decision, p)
    return report_from_flows(
        states, routed, completed, energy, p,
        consistency=gating_consistency(batch, decision),
    )
