"""Main simulation loop: per-slot arrivals, gating, routing, dynamics,
queue updates and metric accumulation, for the drift-penalty optimizer and
the four reference strategies.

The aggregation/broadcast steps of the surrounding training protocol are
zero-cost placeholders here; only computation is priced. All strategies in
one comparison observe identical arrival and score streams (streams are
keyed by seed and slot, never by strategy), so comparisons are paired.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import dynamics, solver
from .gating import (
    PURPOSE_ARRIVALS,
    PURPOSE_ROUTE,
    GatingConfig,
    GatingModel,
    gate_scores,
    sample_batch_size,
    slot_stream,
)
from .lyapunov import gating_consistency, slot_flows
from .model import (
    ENERGY_TOL,
    FeasibilityError,
    ServerState,
    SlotRecord,
    SystemParams,
    Trace,
    TokenBatch,
    atomic_write_text,
    initial_state,
)

__all__ = [
    "STRATEGIES",
    "RunSummary",
    "RunResult",
    "run",
    "compare",
    "sweep_v",
    "throughput_ratios",
    "TRACE_COLUMNS",
    "trace_csv_text",
    "write_trace_csv",
    "summary_dict",
    "write_summary_json",
]

log = logging.getLogger("stable_moe.sim")

STRATEGIES = ("stable-moe", "A", "B", "C", "D")

TRACE_COLUMNS = ("t", "strategy", "j", "batch_size", "d_rou", "d_com", "E_com", "Q", "Z", "f")


@dataclass(frozen=True)
class RunSummary:
    """Aggregates of one run; every numeric field is recomputable from the
    trace. Wall time is informational only and never serialized."""

    strategy: str
    horizon: int
    cumulative_throughput: int
    utility: float
    mean_consistency: float
    avg_token_backlog: tuple[float, ...]
    avg_energy_backlog: tuple[float, ...]
    final_token_backlog: tuple[int, ...]
    final_energy_backlog: tuple[float, ...]
    wall_time_s: float


@dataclass
class RunResult:
    strategy: str
    params: SystemParams
    trace: Trace
    summary: RunSummary


def _assert_slot_constraints(slot: int, batch: TokenBatch, states: Sequence[ServerState],
                             decision, routed, completed, energy, p: SystemParams) -> None:
    """Hard per-slot constraints, checked on every slot of every run."""
    if batch.size and not (decision.routing.sum(axis=1) == p.top_k).all():
        raise FeasibilityError(f"slot {slot}: a token is not routed to exactly top_k servers")
    freqs = decision.frequencies
    if (freqs < 0).any() or (freqs > p.max_frequency).any():
        raise FeasibilityError(f"slot {slot}: frequency outside [0, max_frequency]")
    for j in range(p.num_servers):
        if energy[j] > p.energy_cap[j] + ENERGY_TOL:
            raise FeasibilityError(
                f"slot {slot}: server {j} energy {energy[j]} exceeds cap {p.energy_cap[j]}"
            )
        if completed[j] > states[j].token_backlog + routed[j]:
            raise FeasibilityError(f"slot {slot}: server {j} completed more tokens than available")


def _decide(strategy: str, batch: TokenBatch, states, p: SystemParams,
            solver_kind: str, slot: int) -> solver.AssignmentResult:
    if strategy == "stable-moe":
        if solver_kind == "flow":
            return solver.solve_per_slot(batch, states, p)
        if solver_kind == "branch-and-bound":
            return solver.branch_and_bound_solve(batch, states, p)
        raise FeasibilityError(f"unknown solver kind {solver_kind!r}")
    rng = slot_stream(p.rng_seed, PURPOSE_ROUTE, slot) if strategy == "A" else None
    return solver.baseline_decision(strategy, batch, states, p, rng)


def run(strategy: str, p: SystemParams, *, gating_model: GatingModel | None = None,
        gating_config: GatingConfig | None = None,
        score_table: dict[int, np.ndarray] | None = None,
        solver_kind: str = "flow") -> RunResult:
    """Simulate one strategy for the full horizon.

    Each slot: draw the batch size, score the tokens, pick a routing and
    frequencies, apply the completion/energy dynamics and advance both
    queues. A ``score_table`` (slot -> score matrix) replays externally
    produced gating scores instead of the synthetic model.
    """
    if strategy not in STRATEGIES:
        raise FeasibilityError(f"unknown strategy {strategy!r}, expected one of {STRATEGIES}")
    model = gating_model
    if model is None and score_table is None:
        model = GatingModel(p.rng_seed, p.num_servers, gating_config)
    states = initial_state(p)
    trace = Trace()
    arrived_total = 0
    started = time.perf_counter()
    for t in range(p.horizon):
        if score_table is not None:
            scores = score_table.get(t)
            batch = TokenBatch(t, scores if scores is not None else np.zeros((0, p.num_servers)))
        else:
            size = sample_batch_size(p.arrival_rate, slot_stream(p.rng_seed, PURPOSE_ARRIVALS, t))
            batch = gate_scores(model, size, t)
        arrived_total += batch.size
        try:
            result = _decide(strategy, batch, states, p, solver_kind, t)
        except (FeasibilityError, RuntimeError) as exc:
            raise FeasibilityError(f"slot {t}: {exc}") from exc
        decision = result.decision
        routed, completed, energy = slot_flows(batch, states, decision, p)
        _assert_slot_constraints(t, batch, states, decision, routed, completed, energy, p)
        states = tuple(
            ServerState(
                dynamics.update_token_queue(states[j].token_backlog, int(routed[j]), int(completed[j])),
                dynamics.update_energy_queue(states[j].energy_backlog, float(energy[j]), p.energy_budget[j]),
            )
            for j in range(p.num_servers)
        )
        trace.append(SlotRecord(
            slot=t,
            batch_size=batch.size,
            routed=routed,
            completed=completed,
            energy=energy,
            frequencies=np.asarray(decision.frequencies),
            token_backlog=np.array([s.token_backlog for s in states], dtype=np.int64),
            energy_backlog=np.array([s.energy_backlog for s in states]),
            objective_value=result.objective_value,
            gating_consistency=gating_consistency(batch, decision),
        ))
        if log.isEnabledFor(logging.INFO) and (t + 1) % 100 == 0:
            log.info("strategy=%s slot=%d/%d backlog=%d", strategy, t + 1, p.horizon,
                     int(sum(s.token_backlog for s in states)))
    elapsed = time.perf_counter() - started

    total_completed = trace.cumulative_throughput()
    if total_completed > p.top_k * arrived_total:
        raise FeasibilityError("completed token copies exceed routed copies")
    summary = RunSummary(
        strategy=strategy,
        horizon=p.horizon,
        cumulative_throughput=total_completed,
        utility=trace.utility(),
        mean_consistency=trace.mean_consistency(),
        avg_token_backlog=tuple(trace.token_backlog_matrix().mean(axis=0)),
        avg_energy_backlog=tuple(trace.energy_backlog_matrix().mean(axis=0)),
        final_token_backlog=tuple(int(x) for x in trace.slots[-1].token_backlog),
        final_energy_backlog=tuple(float(x) for x in trace.slots[-1].energy_backlog),
        wall_time_s=elapsed,
    )
    return RunResult(strategy=strategy, params=p, trace=trace, summary=summary)


def compare(strategies: Sequence[str], p: SystemParams, **kwargs) -> list[RunResult]:
    """Run several strategies on identical arrival/score streams."""
    if not strategies:
        raise FeasibilityError("compare needs at least one strategy")
    return [run(s, p, **kwargs) for s in strategies]


def throughput_ratios(results: Sequence[RunResult]) -> dict[str, float]:
    """Cumulative-throughput ratio of the optimizer to each other strategy.

    0/0 counts as 1.0 (degenerate workload); a warning is logged when that
    convention fires.
    """
    by_name = {r.strategy: r for r in results}
    if "stable-moe" not in by_name:
        raise FeasibilityError("ratios need a stable-moe run")
    numerator = by_name["stable-moe"].summary.cumulative_throughput
    ratios: dict[str, float] = {}
    for name, result in by_name.items():
        if name == "stable-moe":
            continue
        denominator = result.summary.cumulative_throughput
        if denominator == 0 and numerator == 0:
            log.warning("degenerate workload: both throughputs are zero, reporting ratio 1.0")
            ratios[name] = 1.0
        elif denominator == 0:
            ratios[name] = float("inf")
        else:
            ratios[name] = numerator / denominator
    return ratios


def sweep_v(values: Sequence[float], p: SystemParams, **kwargs) -> list[RunResult]:
    """One optimizer run per trade-off weight, on identical streams."""
    if not values:
        raise FeasibilityError("sweep needs at least one value")
    for v in values:
        if not v > 0:
            raise FeasibilityError(f"trade-off values must be > 0, got {v}")
    return [run("stable-moe", p.with_overrides(tradeoff_v=float(v)), **kwargs) for v in values]


# --- artifact emission --------------------------------------------------------


def _fmt(x: float) -> str:
    """Fixed 9-significant-digit decimal rendering for byte-stable output."""
    return format(float(x), ".9g")


def trace_csv_text(results: Sequence[RunResult]) -> str:
    lines = [",".join(TRACE_COLUMNS)]
    for result in results:
        name = result.strategy
        for rec in result.trace:
            for j in range(result.params.num_servers):
                lines.append(",".join((
                    str(rec.slot),
                    name,
                    str(j),
                    str(rec.batch_size),
                    str(int(rec.routed[j])),
                    str(int(rec.completed[j])),
                    _fmt(rec.energy[j]),
                    str(int(rec.token_backlog[j])),
                    _fmt(rec.energy_backlog[j]),
                    _fmt(rec.frequencies[j]),
                )))
    return "\n".join(lines) + "\n"


def write_trace_csv(results: Sequence[RunResult], path: str) -> None:
    atomic_write_text(path, trace_csv_text(results))


def summary_dict(result: RunResult) -> dict:
    s = result.summary
    return {
        "strategy": s.strategy,
        "horizon": s.horizon,
        "cumulative_throughput": s.cumulative_throughput,
        "utility": s.utility,
        "mean_consistency": s.mean_consistency,
        "avg_token_backlog": list(s.avg_token_backlog),
        "avg_energy_backlog": list(s.avg_energy_backlog),
        "final_token_backlog": list(s.final_token_backlog),
        "final_energy_backlog": list(s.final_energy_backlog),
        "mean_total_token_backlog": float(sum(s.avg_token_backlog)),
    }


def write_summary_json(results: Sequence[RunResult], path: str) -> None:
    import json

    payload = [summary_dict(r) for r in results]
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
