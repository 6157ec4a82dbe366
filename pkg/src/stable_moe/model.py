"""Domain types, parameter validation, and the default experiment configuration.

Everything here is an immutable value object: state evolves only by
constructing successor instances, so all types are safe to share between
threads. Validation happens at construction; building an object that
violates an invariant is impossible through the public interface.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, fields, replace
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "ParameterError",
    "FeasibilityError",
    "SystemParams",
    "ServerState",
    "TokenBatch",
    "SlotDecision",
    "SlotOutcome",
    "SlotRecord",
    "Trace",
    "validate_params",
    "heterogeneous_energy_profile",
    "default_params",
    "initial_state",
    "save_params",
    "load_params",
    "DEFAULT_SEED",
    "ENERGY_TOL",
]

# Absolute tolerance for comparing joules (energies are real-valued and the
# min-frequency rule can overshoot a hard cap by a few ulps).
ENERGY_TOL = 1e-9

# Sampling ranges for the heterogeneous per-server energy profile, in joules.
ENERGY_CAP_RANGE = (3.0, 15.0)
ENERGY_BUDGET_RANGE = (1.5, 9.5)

# Default seed for the stock configuration. Chosen so the sampled energy
# profile leaves comfortable sustainable headroom above the offered load
# while keeping at least one genuinely weak server (see tests).
DEFAULT_SEED = 83342

_MASK64 = (1 << 64) - 1


class ParameterError(ValueError):
    """A configuration value violates a documented bound."""


class FeasibilityError(ValueError):
    """A routing/frequency decision violates a hard per-slot constraint."""


@dataclass(frozen=True)
class SystemParams:
    """Global constants of one experiment.

    ``switched_capacitance``, ``energy_cap`` and ``energy_budget`` hold one
    value per server. Queues hold tokens (integers) and joules (reals);
    frequencies are cycles per second.
    """

    num_servers: int
    top_k: int
    slot_duration: float
    arrival_rate: float
    cycles_per_token: float
    max_frequency: float
    switched_capacitance: tuple[float, ...]
    energy_cap: tuple[float, ...]
    energy_budget: tuple[float, ...]
    tradeoff_v: float
    consistency_weight: float
    horizon: int
    rng_seed: int

    def __post_init__(self):
        object.__setattr__(self, "switched_capacitance", tuple(float(x) for x in self.switched_capacitance))
        object.__setattr__(self, "energy_cap", tuple(float(x) for x in self.energy_cap))
        object.__setattr__(self, "energy_budget", tuple(float(x) for x in self.energy_budget))
        validate_params(self)

    def with_overrides(self, **kwargs) -> "SystemParams":
        return replace(self, **kwargs)


def validate_params(p: SystemParams) -> SystemParams:
    """Return ``p`` unchanged if every invariant holds, else raise.

    Error messages name the offending field and the violated bound.
    """
    j = p.num_servers
    if not isinstance(j, int) or j < 1:
        raise ParameterError(f"num_servers must be a positive count, got {j!r}")
    if not isinstance(p.top_k, int) or p.top_k < 1:
        raise ParameterError(f"top_k must be a positive count, got {p.top_k!r}")
    if p.top_k > j:
        raise ParameterError(f"top_k exceeds num_servers ({p.top_k} > {j})")
    if not p.slot_duration > 0:
        raise ParameterError(f"slot_duration must be > 0, got {p.slot_duration}")
    if not p.cycles_per_token > 0:
        raise ParameterError(f"cycles_per_token must be > 0, got {p.cycles_per_token}")
    if not p.max_frequency > 0:
        raise ParameterError(f"max_frequency must be > 0, got {p.max_frequency}")
    if not p.arrival_rate >= 0:
        raise ParameterError(f"arrival_rate must be >= 0, got {p.arrival_rate}")
    if not p.tradeoff_v > 0:
        raise ParameterError(f"tradeoff_v must be > 0, got {p.tradeoff_v}")
    if not p.consistency_weight >= 0:
        raise ParameterError(f"consistency_weight must be >= 0, got {p.consistency_weight}")
    if not isinstance(p.horizon, int) or p.horizon < 1:
        raise ParameterError(f"horizon must be a positive count, got {p.horizon!r}")
    if not isinstance(p.rng_seed, int):
        raise ParameterError(f"rng_seed must be an integer, got {p.rng_seed!r}")
    for name, values in (
        ("switched_capacitance", p.switched_capacitance),
        ("energy_cap", p.energy_cap),
        ("energy_budget", p.energy_budget),
    ):
        if len(values) != j:
            raise ParameterError(f"{name} must have num_servers={j} entries, got {len(values)}")
    for srv in range(j):
        if not p.switched_capacitance[srv] > 0:
            raise ParameterError(
                f"switched_capacitance must be > 0 for server {srv}, got {p.switched_capacitance[srv]}"
            )
        cap = p.energy_cap[srv]
        budget = p.energy_budget[srv]
        if not budget > 0:
            raise ParameterError(f"energy_budget must be > 0 for server {srv}, got {budget}")
        if budget > cap:
            raise ParameterError(
                f"energy_budget exceeds energy_cap for server {srv} ({budget} > {cap})"
            )
    return p


def _energy_profile_rng(seed: int) -> np.random.Generator:
    # Philox is counter-based and platform-independent; the profile stream is
    # keyed separately from the per-slot streams (see gating module).
    key = np.array([seed & _MASK64, 0xE4E2], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def heterogeneous_energy_profile(seed: int, num_servers: int) -> tuple[list[float], list[float]]:
    """Draw per-server (energy cap, energy budget) pairs, in joules.

    Caps are uniform on [3, 15] and budgets uniform on [1.5, 9.5]; a pair is
    redrawn until budget <= cap. Deterministic per seed.
    """
    if num_servers < 1:
        raise ParameterError(f"num_servers must be a positive count, got {num_servers}")
    rng = _energy_profile_rng(seed)
    caps: list[float] = []
    budgets: list[float] = []
    for _ in range(num_servers):
        while True:
            cap = rng.uniform(*ENERGY_CAP_RANGE)
            budget = rng.uniform(*ENERGY_BUDGET_RANGE)
            if budget <= cap:
                break
        caps.append(float(cap))
        budgets.append(float(budget))
    return caps, budgets


def default_params(seed: int = DEFAULT_SEED, **overrides) -> SystemParams:
    """The stock configuration: 10 servers, top-3 routing, 390 tokens/slot,
    1 s slots, 1e7 cycles/token, 3 GHz cap, 2e-27 switched capacitance,
    energy profile sampled from the heterogeneous ranges.
    """
    seed = overrides.pop("rng_seed", seed)
    num_servers = overrides.pop("num_servers", 10)
    if "energy_cap" in overrides or "energy_budget" in overrides:
        caps = overrides.pop("energy_cap")
        budgets = overrides.pop("energy_budget")
    else:
        caps, budgets = heterogeneous_energy_profile(seed, num_servers)
    base = dict(
        num_servers=num_servers,
        top_k=3,
        slot_duration=1.0,
        arrival_rate=390.0,
        cycles_per_token=1e7,
        max_frequency=3e9,
        switched_capacitance=tuple([2e-27] * num_servers),
        energy_cap=tuple(caps),
        energy_budget=tuple(budgets),
        tradeoff_v=50.0,
        consistency_weight=0.05,
        horizon=500,
        rng_seed=seed,
    )
    base.update(overrides)
    if len(base["switched_capacitance"]) == 1 and num_servers > 1:
        base["switched_capacitance"] = tuple(list(base["switched_capacitance"]) * num_servers)
    return SystemParams(**base)


@dataclass(frozen=True)
class ServerState:
    """One server's backlogs: tokens waiting (integer) and the virtual
    energy-overuse queue (joules). Both are clamped at zero by the dynamics.
    """

    token_backlog: int
    energy_backlog: float

    def __post_init__(self):
        if not isinstance(self.token_backlog, (int, np.integer)) or self.token_backlog < 0:
            raise ParameterError(f"token_backlog must be a non-negative integer, got {self.token_backlog!r}")
        if not self.energy_backlog >= 0:
            raise ParameterError(f"energy_backlog must be >= 0, got {self.energy_backlog}")
        object.__setattr__(self, "token_backlog", int(self.token_backlog))
        object.__setattr__(self, "energy_backlog", float(self.energy_backlog))


def initial_state(p: SystemParams) -> tuple[ServerState, ...]:
    """All queues start empty."""
    return tuple(ServerState(0, 0.0) for _ in range(p.num_servers))


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TokenBatch:
    """The tokens arriving in one slot with their gating scores.

    ``scores`` has one row per token (row index is the token id) and one
    column per server; every entry lies in [0, 1]. Batch sizes are drawn
    from a Poisson arrival process by the gating module.
    """

    slot_index: int
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 2:
            raise ParameterError(f"scores must be 2-d (tokens x servers), got shape {scores.shape}")
        if scores.size and (scores.min() < 0.0 or scores.max() > 1.0):
            raise ParameterError("gating scores must lie in [0, 1]")
        object.__setattr__(self, "scores", _freeze(scores))

    @property
    def size(self) -> int:
        return self.scores.shape[0]

    @property
    def num_servers(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class SlotDecision:
    """One slot's action: a binary routing matrix (tokens x servers) and a
    frequency per server. Row sums must equal top_k; checked against the
    params by the objective/feasibility code.
    """

    routing: np.ndarray
    frequencies: np.ndarray

    def __post_init__(self):
        routing = np.asarray(self.routing)
        if routing.ndim != 2:
            raise ParameterError(f"routing must be 2-d (tokens x servers), got shape {routing.shape}")
        if routing.size and not np.isin(routing, (0, 1)).all():
            raise ParameterError("routing entries must be 0 or 1")
        freqs = np.asarray(self.frequencies, dtype=np.float64)
        if freqs.ndim != 1 or freqs.shape[0] != routing.shape[1]:
            raise ParameterError("frequencies must hold one value per server")
        if freqs.size and freqs.min() < 0.0:
            raise ParameterError("frequencies must be >= 0")
        object.__setattr__(self, "routing", _freeze(routing.astype(np.int8)))
        object.__setattr__(self, "frequencies", _freeze(freqs))


@dataclass(frozen=True)
class SlotOutcome:
    """Realized per-slot quantities: tokens routed/completed per server,
    energy spent, the per-slot objective value, the gating-consistency sum,
    and the successor queue state.
    """

    routed: np.ndarray
    completed: np.ndarray
    energy: np.ndarray
    objective_value: float
    gating_consistency: float
    post_state: tuple[ServerState, ...]

    def __post_init__(self):
        routed = np.asarray(self.routed, dtype=np.int64)
        completed = np.asarray(self.completed, dtype=np.int64)
        energy = np.asarray(self.energy, dtype=np.float64)
        if routed.min(initial=0) < 0 or completed.min(initial=0) < 0:
            raise ParameterError("routed/completed token counts must be >= 0")
        if energy.min(initial=0.0) < 0.0:
            raise ParameterError("per-server energy must be >= 0")
        object.__setattr__(self, "routed", _freeze(routed))
        object.__setattr__(self, "completed", _freeze(completed))
        object.__setattr__(self, "energy", _freeze(energy))


@dataclass(frozen=True)
class SlotRecord:
    """One trace row group: everything recorded for one slot.

    ``token_backlog``/``energy_backlog`` are the post-update (end-of-slot)
    queue values, so replaying the recorded flows through the queue updates
    reproduces the stored trajectory exactly.
    """

    slot: int
    batch_size: int
    routed: np.ndarray
    completed: np.ndarray
    energy: np.ndarray
    frequencies: np.ndarray
    token_backlog: np.ndarray
    energy_backlog: np.ndarray
    objective_value: float
    gating_consistency: float


@dataclass
class Trace:
    """Per-slot history of a run plus derived aggregate metrics."""

    slots: list[SlotRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.slots)

    def __iter__(self) -> Iterator[SlotRecord]:
        return iter(self.slots)

    def append(self, record: SlotRecord) -> None:
        self.slots.append(record)

    def completed_matrix(self) -> np.ndarray:
        """(slots x servers) completed-token counts."""
        return np.array([r.completed for r in self.slots], dtype=np.int64)

    def cumulative_throughput(self) -> int:
        """Total completed token copies over the whole trace (non-decreasing in t)."""
        return int(self.completed_matrix().sum()) if self.slots else 0

    def cumulative_throughput_series(self) -> np.ndarray:
        if not self.slots:
            return np.zeros(0, dtype=np.int64)
        return np.cumsum(self.completed_matrix().sum(axis=1))

    def completed_time_average(self) -> np.ndarray:
        """Per-server time average of completed tokens."""
        return self.completed_matrix().mean(axis=0)

    def utility(self) -> float:
        """Sum over servers of log(1 + average completed tokens); natural log."""
        return float(np.log1p(self.completed_time_average()).sum())

    def mean_consistency(self) -> float:
        if not self.slots:
            return 0.0
        return float(np.mean([r.gating_consistency for r in self.slots]))

    def token_backlog_matrix(self) -> np.ndarray:
        return np.array([r.token_backlog for r in self.slots], dtype=np.int64)

    def energy_backlog_matrix(self) -> np.ndarray:
        return np.array([r.energy_backlog for r in self.slots], dtype=np.float64)


# --- config file round trip -------------------------------------------------

_PARAM_FIELDS = tuple(f.name for f in fields(SystemParams))
_VECTOR_FIELDS = ("switched_capacitance", "energy_cap", "energy_budget")
_INT_FIELDS = ("num_servers", "top_k", "horizon", "rng_seed")


def params_to_dict(p: SystemParams) -> dict:
    out = {}
    for name in _PARAM_FIELDS:
        value = getattr(p, name)
        out[name] = list(value) if isinstance(value, tuple) else value
    return out


def params_from_dict(data: dict) -> SystemParams:
    unknown = sorted(set(data) - set(_PARAM_FIELDS))
    if unknown:
        raise ParameterError(f"unknown parameter keys: {', '.join(unknown)}")
    missing = sorted(set(_PARAM_FIELDS) - set(data))
    if missing:
        raise ParameterError(f"missing parameter keys: {', '.join(missing)}")
    kwargs = {}
    for name in _PARAM_FIELDS:
        value = data[name]
        if name in _VECTOR_FIELDS:
            if not isinstance(value, (list, tuple)):
                raise ParameterError(f"{name} must be a list of per-server values")
            kwargs[name] = tuple(float(x) for x in value)
        elif name in _INT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ParameterError(f"{name} must be an integer, got {value!r}")
            kwargs[name] = value
        else:
            kwargs[name] = float(value)
    return SystemParams(**kwargs)


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temp file in the destination directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=False)
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_params(p: SystemParams, path: str) -> None:
    atomic_write_text(path, json.dumps(params_to_dict(p), indent=2, sort_keys=True) + "\n")


def load_params(path: str) -> SystemParams:
    with open(path) as handle:
        data = json.load(handle)
    if not isinstance(data, dict):
        raise ParameterError("parameter file must hold a JSON object")
    return params_from_dict(data)
