"""Per-slot decision making.

The per-slot problem couples a binary routing matrix with per-server
frequencies. Two reductions make it exactly solvable:

* Frequency elimination: for a fixed completion count d the energy-optimal
  frequency is the smallest capacity-achieving one (energy rises strictly
  with frequency), so d becomes the only per-server degree of freedom.
* Server profiles: the best server-local value given n routed tokens,
  h_j(n), has non-increasing marginal gains (the completion increments are
  strictly decreasing), so the joint routing problem is a minimum-cost flow
  with a convex-cost arc expansion and its integral optimum is exact.

The flow is solved by successive shortest augmenting paths on a compressed
graph whose only explicit nodes are the servers and the sink; the token
layer is folded into per-arc minima maintained with lazy heaps, which keeps
one augmentation near O(J^2) instead of O(tokens * J).

A brute-force oracle (exhaustive over routings and integer completion
counts) and a branch-and-bound cross-check are provided for verification,
plus the four reference routing strategies with a throughput-greedy
frequency rule.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import dynamics
from .lyapunov import per_slot_objective
from .model import (
    ENERGY_TOL,
    FeasibilityError,
    ServerState,
    SlotDecision,
    SystemParams,
    TokenBatch,
)

__all__ = [
    "ServerProfile",
    "AssignmentResult",
    "energy_cap_tokens",
    "build_profile",
    "solve_per_slot",
    "branch_and_bound_solve",
    "brute_force_oracle",
    "baseline_route",
    "baseline_frequency",
    "baseline_decision",
    "BASELINE_KINDS",
    "ORACLE_ENUMERATION_LIMIT",
]

BASELINE_KINDS = ("A", "B", "C", "D")
ORACLE_ENUMERATION_LIMIT = 1_000_000

# Relative slack for integer boundary decisions on float data (same spirit
# as the exact-rational floor in the dynamics module).
_REL_TOL = 1e-12


@dataclass(frozen=True)
class AssignmentResult:
    """A per-slot decision plus the objective value it achieves and how it
    was obtained. ``optimality_certificate`` is True only for the exact
    solvers (flow, brute force, branch and bound)."""

    decision: SlotDecision
    objective_value: float
    solver_kind: str  # "exact-flow" | "brute-force" | "branch-and-bound" | "greedy"
    optimality_certificate: bool


def _energy_coef(j: int, p: SystemParams) -> float:
    """Energy at the minimum frequency for d completions is coef * d^3."""
    return p.switched_capacitance[j] * p.cycles_per_token ** 3 / p.slot_duration ** 2


def _energy_cap_count(e_max: float, coef: float) -> int:
    """Largest integer d with coef * d^3 <= e_max (1e-12 relative slack)."""
    if e_max <= 0 or coef <= 0:
        return 0
    target = e_max / coef
    k = max(int(round(target ** (1.0 / 3.0))), 0)
    while (k + 1) ** 3 <= target * (1 + _REL_TOL):
        k += 1
    while k > 0 and k ** 3 > target * (1 + _REL_TOL):
        k -= 1
    return k


def energy_cap_tokens(j: int, p: SystemParams) -> int:
    """Most tokens server j can complete in one slot without its energy,
    at the minimum capacity-achieving frequency, exceeding the hard cap."""
    return _energy_cap_count(p.energy_cap[j], _energy_coef(j, p))


# --- server profiles ---------------------------------------------------------


def _increment(d: int, q: int, z: float, coef: float, v: float) -> float:
    """Gain from completing token d+1 instead of stopping at d."""
    return v * math.log1p(1.0 / (d + 1)) + q - z * coef * (3 * d * d + 3 * d + 1)


def _local_value(d: int, q: int, z: float, coef: float, v: float) -> float:
    """Server-local value of completing d tokens (utility + drain bonus -
    energy-queue price)."""
    return v * math.log1p(d) + q * d - z * coef * d ** 3


def _best_completion(q: int, z: float, coef: float, v: float, hi: int) -> int:
    """Largest d in [0, hi] reachable through positive increments.

    The increments are non-increasing in d (strictly when v > 0 or z > 0),
    so this is found by binary search for the first non-positive increment.
    """
    if hi <= 0:
        return 0
    if _increment(0, q, z, coef, v) <= 0:
        return 0
    if _increment(hi - 1, q, z, coef, v) > 0:
        return hi
    lo, high = 0, hi - 1  # increment(lo) > 0, increment(high) <= 0
    while high - lo > 1:
        mid = (lo + high) // 2
        if _increment(mid, q, z, coef, v) > 0:
            lo = mid
        else:
            high = mid
    return high


@dataclass
class _SlimProfile:
    """Hot-path view of a server profile: the capped best completion count
    and the marginal gains of routing one more token."""

    server: int
    backlog: int
    best_capped: int  # min(unconstrained best, capacity limit, energy limit)
    marginals: list[float]  # index n = gain of the n-th routed token; [0] unused


def _build_slim(j: int, state: ServerState, n_max: int, p: SystemParams) -> _SlimProfile:
    q = state.token_backlog
    z = state.energy_backlog
    coef = _energy_coef(j, p)
    v = p.tradeoff_v
    cap = min(dynamics.capacity(p.max_frequency, p), energy_cap_tokens(j, p))
    best = _best_completion(q, z, coef, v, cap)
    n_pos = min(max(best - q, 0), n_max)
    marg = np.zeros(n_max + 1)
    if n_pos > 0:
        d = q + np.arange(n_pos, dtype=np.float64)
        marg[1 : n_pos + 1] = v * np.log1p(1.0 / (d + 1)) + q - z * coef * (3 * d * d + 3 * d + 1)
        if np.any(np.diff(marg[1 : n_pos + 1]) > 1e-9) or marg[n_pos] < -1e-9:
            raise RuntimeError(
                f"server {j} profile lost concavity (backlog={q}, energy_backlog={z}); "
                "the flow reduction would be invalid"
            )
    return _SlimProfile(j, q, best, marg.tolist())


@dataclass(frozen=True)
class ServerProfile:
    """Best server-local value for every possible routed count n = 0..n_max,
    with the maximizing completion count and its frequency.

    ``values`` is non-decreasing with non-increasing marginal gains; the
    completion count is always capped by queue+routed tokens, the compute
    capacity at max frequency, and the hard energy cap.
    """

    server: int
    values: np.ndarray
    best_completions: np.ndarray
    best_frequencies: np.ndarray
    queue_backlog: int
    capacity_limit: int
    energy_limit: int

    def marginal(self, n: int) -> float:
        return float(self.values[n] - self.values[n - 1])


def build_profile(j: int, state: ServerState, n_max: int, p: SystemParams) -> ServerProfile:
    """Tabulate h_j(n) for n = 0..n_max together with the optimal completion
    count and minimum frequency at each n."""
    if n_max < 0:
        raise ValueError(f"n_max must be >= 0, got {n_max}")
    slim = _build_slim(j, state, n_max, p)
    q = state.token_backlog
    z = state.energy_backlog
    coef = _energy_coef(j, p)
    best = np.minimum(slim.best_capped, q + np.arange(n_max + 1))
    values = np.array([_local_value(int(d), q, z, coef, p.tradeoff_v) for d in best])
    freqs = np.array([dynamics.min_frequency_for(int(d), p) for d in best])
    return ServerProfile(
        server=j,
        values=values,
        best_completions=best.astype(np.int64),
        best_frequencies=freqs,
        queue_backlog=q,
        capacity_limit=dynamics.capacity(p.max_frequency, p),
        energy_limit=energy_cap_tokens(j, p),
    )


# --- exact flow solver -------------------------------------------------------


def _route_flow(cost: list[list[float]], rem_per_token: int, marginals: list[list[float]],
                num_tokens: int, num_servers: int) -> tuple[list[list[bool]], list[int]]:
    """Min-cost routing of num_tokens * rem_per_token units.

    Successive shortest augmenting paths with potentials on the compressed
    graph {servers, sink}; token-layer transitions enter as per-arc minima
    held in lazy heaps (token potentials cancel pairwise, so only server and
    sink potentials are kept). Ties break toward the lower server index and
    then the lower token index.
    """
    INF = float("inf")
    assign = [[False] * num_servers for _ in range(num_tokens)]
    rem = [rem_per_token] * num_tokens
    loads = [0] * num_servers
    pi = [0.0] * num_servers
    pi_t = -max((m[1] if len(m) > 1 else 0.0) for m in marginals)
    sink = num_servers

    # entry[j]: (cost[i][j], i) over tokens that may still enter j
    entry = [[(cost[i][j], i) for i in range(num_tokens)] for j in range(num_servers)]
    for h in entry:
        heapq.heapify(h)
    # swap[u][v]: (cost[i][v] - cost[i][u], i) over tokens currently on u
    swap = [[[] for _ in range(num_servers)] for _ in range(num_servers)]

    for _ in range(num_tokens * rem_per_token):
        dist = [INF] * (num_servers + 1)
        parent: list[tuple | None] = [None] * (num_servers + 1)
        for j in range(num_servers):
            h = entry[j]
            while h and (rem[h[0][1]] <= 0 or assign[h[0][1]][j]):
                heapq.heappop(h)
            if h:
                dist[j] = h[0][0] - pi[j]
                parent[j] = ("entry", h[0][1])
        settled = [False] * (num_servers + 1)
        while True:
            u, best = -1, INF
            for vtx in range(num_servers + 1):
                if not settled[vtx] and dist[vtx] < best:
                    u, best = vtx, dist[vtx]
            if u < 0 or u == sink:
                if u >= 0:
                    settled[u] = True
                break
            settled[u] = True
            du = dist[u]
            piu = pi[u]
            if loads[u] < num_tokens:
                nd = du - marginals[u][loads[u] + 1] + piu - pi_t
                if nd < dist[sink]:
                    dist[sink] = nd
                    parent[sink] = ("grow", u)
            for v in range(num_servers):
                if v == u or settled[v]:
                    continue
                h = swap[u][v]
                while h and (not assign[h[0][1]][u] or assign[h[0][1]][v]):
                    heapq.heappop(h)
                if h:
                    nd = du + h[0][0] + piu - pi[v]
                    if nd < dist[v]:
                        dist[v] = nd
                        parent[v] = ("swap", u, h[0][1])
        dt = dist[sink]
        if dt == INF or parent[sink] is None:
            raise FeasibilityError("routing flow has no augmenting path")

        moves = []
        grow_at = parent[sink][1]
        node = grow_at
        while True:
            par = parent[node]
            if par[0] == "entry":
                moves.append((par[1], None, node))
                break
            _, prev, token = par
            moves.append((token, prev, node))
            node = prev
        loads[grow_at] += 1
        for token, src, dst in moves:
            if src is None:
                rem[token] -= 1
            else:
                assign[token][src] = False
                if rem[token] > 0:
                    heapq.heappush(entry[src], (cost[token][src], token))
            assign[token][dst] = True
            row = cost[token]
            base = row[dst]
            for w in range(num_servers):
                if w != dst:
                    heapq.heappush(swap[dst][w], (row[w] - base, token))
        for j in range(num_servers):
            pi[j] += dist[j] if settled[j] else dt
        pi_t += dt
    return assign, loads


def _decision_from_loads(profiles: Sequence[_SlimProfile], loads: Sequence[int],
                         routing: np.ndarray, p: SystemParams) -> SlotDecision:
    freqs = np.zeros(p.num_servers)
    for j, prof in enumerate(profiles):
        target = min(prof.best_capped, prof.backlog + int(loads[j]))
        freqs[j] = dynamics.min_frequency_for(target, p)
    return SlotDecision(routing=routing, frequencies=freqs)


def solve_per_slot(batch: TokenBatch, states: Sequence[ServerState],
                   p: SystemParams) -> AssignmentResult:
    """Exactly maximize the per-slot objective over routings and frequencies.

    Reformulation: objective = sum_j h_j(n_j) + sum_{i,j} (V*mu*g_ij - Q_j)
    x_ij + sum_j Z_j * budget_j, with n_j the tokens routed to j. Concavity
    of h_j makes the min-cost-flow solution exact; the reported objective is
    re-evaluated through the dynamics on the returned decision.
    """
    if p.top_k > p.num_servers:
        raise FeasibilityError(f"top_k exceeds num_servers ({p.top_k} > {p.num_servers})")
    num_tokens = batch.size
    profiles = [_build_slim(j, states[j], num_tokens, p) for j in range(p.num_servers)]
    if num_tokens == 0:
        routing = np.zeros((0, p.num_servers), dtype=np.int8)
        decision = _decision_from_loads(profiles, [0] * p.num_servers, routing, p)
        value = per_slot_objective(batch, states, decision, p)
        return AssignmentResult(decision, value, "exact-flow", True)

    vmu = p.tradeoff_v * p.consistency_weight
    shift = vmu * float(batch.scores.max())  # uniform: every token uses exactly top_k arcs
    backlog = np.array([s.token_backlog for s in states], dtype=np.float64)
    cost = (backlog[None, :] - vmu * batch.scores + shift).tolist()
    marginals = [prof.marginals for prof in profiles]
    assign, loads = _route_flow(cost, p.top_k, marginals, num_tokens, p.num_servers)
    routing = np.array(assign, dtype=np.int8)
    decision = _decision_from_loads(profiles, loads, routing, p)
    value = per_slot_objective(batch, states, decision, p)
    return AssignmentResult(decision, value, "exact-flow", True)


# --- brute-force oracle ------------------------------------------------------


def _oracle_server_tables(batch: TokenBatch, states: Sequence[ServerState],
                          p: SystemParams) -> tuple[np.ndarray, list[list[int]]]:
    """Exhaustive per-server value tables.

    table[j][n] is the full server-j contribution to the objective when n
    tokens are routed there, maximized by scanning every integer completion
    count and pricing it through the dynamics module (independent of the
    profile/flow machinery). Also returns the maximizing counts.
    """
    num_tokens = batch.size
    d_max = dynamics.capacity(p.max_frequency, p)
    table = np.zeros((p.num_servers, num_tokens + 1))
    arg = [[0] * (num_tokens + 1) for _ in range(p.num_servers)]
    for j in range(p.num_servers):
        q = states[j].token_backlog
        z = states[j].energy_backlog
        budget_term = z * p.energy_budget[j]
        for n in range(num_tokens + 1):
            best_val = -math.inf
            best_d = 0
            for d in range(0, min(q + n, d_max) + 1):
                f = dynamics.min_frequency_for(d, p)
                done = dynamics.completed_tokens(q, n, f, p)
                used = dynamics.compute_energy(done, f, j, p) if done else 0.0
                if used > p.energy_cap[j] + ENERGY_TOL:
                    break  # energy grows with d; everything beyond is infeasible
                val = p.tradeoff_v * math.log1p(done) + q * done - z * used
                if val > best_val:
                    best_val = val
                    best_d = done
            table[j, n] = best_val + budget_term - q * n
            arg[j][n] = best_d
    return table, arg


def _check_frequency_grid(batch: TokenBatch, states: Sequence[ServerState],
                          p: SystemParams, table: np.ndarray, grid: int) -> None:
    """Sanity mode: a uniform frequency grid must never beat the integer-
    completion-count enumeration (the min-frequency reduction is lossless)."""
    num_tokens = batch.size
    for j in range(p.num_servers):
        q = states[j].token_backlog
        z = states[j].energy_backlog
        for n in range(num_tokens + 1):
            for step in range(1, grid + 1):
                f = p.max_frequency * step / grid
                done = dynamics.completed_tokens(q, n, f, p)
                used = dynamics.compute_energy(done, f, j, p) if done else 0.0
                if used > p.energy_cap[j] + ENERGY_TOL:
                    continue
                val = (p.tradeoff_v * math.log1p(done) + q * done - z * used
                       + z * p.energy_budget[j] - q * n)
                if val > table[j, n] + 1e-9:
                    raise RuntimeError(
                        f"frequency grid beat the exact reduction on server {j} (n={n}, f={f})"
                    )


def brute_force_oracle(batch: TokenBatch, states: Sequence[ServerState], p: SystemParams,
                       frequency_grid: int | None = None) -> AssignmentResult:
    """Exhaustive maximum of the per-slot objective over every routing and
    every per-server integer completion count.

    Only valid on small instances: the routing space is C(J, K)^|batch| and
    is enumerated outright (capped at 1e6). Stays independent of the flow
    solver; values are priced through the dynamics module.
    """
    if p.top_k > p.num_servers:
        raise FeasibilityError(f"top_k exceeds num_servers ({p.top_k} > {p.num_servers})")
    num_tokens = batch.size
    combos = list(itertools.combinations(range(p.num_servers), p.top_k))
    total = len(combos) ** num_tokens
    if total > ORACLE_ENUMERATION_LIMIT:
        raise FeasibilityError(
            f"instance too large for exhaustive search: {len(combos)}^{num_tokens} routings"
        )
    table, arg = _oracle_server_tables(batch, states, p)
    if frequency_grid:
        _check_frequency_grid(batch, states, p, table, frequency_grid)

    membership = np.zeros((len(combos), p.num_servers), dtype=np.int64)
    for ci, combo in enumerate(combos):
        membership[ci, list(combo)] = 1
    vmu = p.tradeoff_v * p.consistency_weight
    if num_tokens:
        token_w = batch.scores @ membership.T * vmu  # (tokens, combos)
        best_total = -math.inf
        best_choice: tuple[int, ...] | None = None
        for block in _chunked_products(len(combos), num_tokens):
            counts = membership[block].sum(axis=1)  # (chunk, servers)
            server_part = table[np.arange(p.num_servers)[None, :], counts].sum(axis=1)
            token_part = token_w[np.arange(num_tokens)[None, :], block].sum(axis=1)
            values = server_part + token_part
            k = int(np.argmax(values))
            if values[k] > best_total:
                best_total = float(values[k])
                best_choice = tuple(int(c) for c in block[k])
        routing = np.zeros((num_tokens, p.num_servers), dtype=np.int8)
        for i, ci in enumerate(best_choice):
            routing[i, list(combos[ci])] = 1
    else:
        routing = np.zeros((0, p.num_servers), dtype=np.int8)
    loads = routing.sum(axis=0)
    freqs = np.array([
        dynamics.min_frequency_for(arg[j][int(loads[j])], p) for j in range(p.num_servers)
    ])
    decision = SlotDecision(routing=routing, frequencies=freqs)
    value = per_slot_objective(batch, states, decision, p)
    return AssignmentResult(decision, value, "brute-force", True)


def _chunked_products(base: int, repeat: int, chunk: int = 65536):
    """Yield the cartesian product {0..base-1}^repeat as int arrays in chunks."""
    block: list[tuple[int, ...]] = []
    for choice in itertools.product(range(base), repeat=repeat):
        block.append(choice)
        if len(block) == chunk:
            yield np.array(block, dtype=np.int64)
            block = []
    if block:
        yield np.array(block, dtype=np.int64)


# --- branch-and-bound cross-check --------------------------------------------


def branch_and_bound_solve(batch: TokenBatch, states: Sequence[ServerState],
                           p: SystemParams) -> AssignmentResult:
    """Depth-first branch and bound over per-token server subsets.

    Exact but only intended for small cross-check instances; the bound adds
    each remaining token's best subset weight plus the most any server value
    could still grow.
    """
    if p.top_k > p.num_servers:
        raise FeasibilityError(f"top_k exceeds num_servers ({p.top_k} > {p.num_servers})")
    num_tokens = batch.size
    combos = list(itertools.combinations(range(p.num_servers), p.top_k))
    if len(combos) ** max(num_tokens, 1) > ORACLE_ENUMERATION_LIMIT:
        raise FeasibilityError("instance too large for branch and bound")
    profiles = [_build_slim(j, states[j], num_tokens, p) for j in range(p.num_servers)]
    # h_j(n) from the marginal gains; the flow-independent constant parts of
    # the objective are added by the final re-evaluation.
    h = np.zeros((p.num_servers, num_tokens + 1))
    for j, prof in enumerate(profiles):
        h[j] = np.cumsum(prof.marginals)
    backlog = np.array([s.token_backlog for s in states], dtype=np.float64)
    vmu = p.tradeoff_v * p.consistency_weight
    weights = np.array([
        [vmu * batch.scores[i, list(c)].sum() - backlog[list(c)].sum() for c in combos]
        for i in range(num_tokens)
    ]) if num_tokens else np.zeros((0, len(combos)))
    order = [np.argsort(-weights[i], kind="stable") for i in range(num_tokens)]
    max_w = weights.max(axis=1) if num_tokens else np.zeros(0)
    suffix_max_w = np.concatenate([np.cumsum(max_w[::-1])[::-1], [0.0]])

    best_value = -math.inf
    best_choice: list[int] = []
    counts = [0] * p.num_servers
    choice: list[int] = []

    def bound(i: int, partial: float) -> float:
        remaining = num_tokens - i
        reachable = sum(
            h[j, min(counts[j] + remaining, num_tokens)] for j in range(p.num_servers)
        )
        return partial + suffix_max_w[i] + reachable

    def dfs(i: int, partial: float) -> None:
        nonlocal best_value, best_choice
        if i == num_tokens:
            value = partial + sum(h[j, counts[j]] for j in range(p.num_servers))
            if value > best_value + 1e-12:
                best_value = value
                best_choice = list(choice)
            return
        if bound(i, partial) <= best_value + 1e-12:
            return
        for ci in order[i]:
            for j in combos[ci]:
                counts[j] += 1
            choice.append(int(ci))
            dfs(i + 1, partial + float(weights[i, ci]))
            choice.pop()
            for j in combos[ci]:
                counts[j] -= 1

    dfs(0, 0.0)
    routing = np.zeros((num_tokens, p.num_servers), dtype=np.int8)
    for i, ci in enumerate(best_choice):
        routing[i, list(combos[ci])] = 1
    decision = _decision_from_loads(profiles, routing.sum(axis=0), routing, p)
    value = per_slot_objective(batch, states, decision, p)
    return AssignmentResult(decision, value, "branch-and-bound", True)


# --- baseline strategies -----------------------------------------------------


def baseline_route(kind: str, batch: TokenBatch, states: Sequence[ServerState],
                   p: SystemParams, rng: np.random.Generator | None = None) -> np.ndarray:
    """Reference routing matrices.

    A: top_k distinct servers uniformly at random per token. B: the top_k
    highest gating scores per token. C: the top_k smallest token backlogs.
    D: the top_k smallest energy backlogs. C and D rank slot-start backlogs
    once for the whole batch; all ties break toward the lower server index.
    """
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline kind {kind!r}, expected one of {BASELINE_KINDS}")
    num_tokens = batch.size
    j, k = p.num_servers, p.top_k
    routing = np.zeros((num_tokens, j), dtype=np.int8)
    if num_tokens == 0:
        return routing
    if kind == "A":
        if rng is None:
            raise ValueError("baseline A needs a random generator")
        picks = np.argsort(rng.random((num_tokens, j)), axis=1, kind="stable")[:, :k]
        np.put_along_axis(routing, picks, 1, axis=1)
    elif kind == "B":
        picks = np.argsort(-batch.scores, axis=1, kind="stable")[:, :k]
        np.put_along_axis(routing, picks, 1, axis=1)
    else:
        if kind == "C":
            ranking = np.argsort([s.token_backlog for s in states], kind="stable")
        else:
            ranking = np.argsort([s.energy_backlog for s in states], kind="stable")
        routing[:, ranking[:k]] = 1
    return routing


def baseline_frequency(routed: int, state: ServerState, j: int, p: SystemParams) -> float:
    """Myopic throughput-greedy frequency: finish as many tokens as the
    queue, the compute capacity, and the hard energy cap allow, at the
    minimum frequency for that count. Ignores the energy backlog."""
    target = min(
        state.token_backlog + routed,
        dynamics.capacity(p.max_frequency, p),
        energy_cap_tokens(j, p),
    )
    return dynamics.min_frequency_for(target, p)


def baseline_decision(kind: str, batch: TokenBatch, states: Sequence[ServerState],
                      p: SystemParams, rng: np.random.Generator | None = None) -> AssignmentResult:
    """Route with a reference strategy and apply its frequency rule."""
    routing = baseline_route(kind, batch, states, p, rng)
    routed = routing.sum(axis=0)
    freqs = np.array([
        baseline_frequency(int(routed[j]), states[j], j, p) for j in range(p.num_servers)
    ])
    decision = SlotDecision(routing=routing, frequencies=freqs)
    value = per_slot_objective(batch, states, decision, p)
    return AssignmentResult(decision, value, "greedy", False)
