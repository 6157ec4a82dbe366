"""Render figures from stable-moe trace CSVs and summary/sweep JSON files.

Consumes only the simulator's documented file formats:

  trace CSV   columns t,strategy,j,batch_size,d_rou,d_com,E_com,Q,Z,f
  sweep JSON  list of per-value summaries with tradeoff_v

Three figure kinds: per-server queue evolution with global-mean overlays
(``queues``), cumulative completed tokens per strategy (``throughput``),
and the trade-off sweep (``v-sweep``).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

TRACE_COLUMNS = ("t", "strategy", "j", "batch_size", "d_rou", "d_com", "E_com", "Q", "Z", "f")

FIGURE_KINDS = ("queues", "throughput", "v-sweep")


class RenderError(ValueError):
    """Schema mismatch, empty input, or an unusable figure request."""


@dataclass(frozen=True)
class FigureSpec:
    """One figure request: input files, kind, output path, optional
    half-open slot range (start, stop)."""

    inputs: tuple[str, ...]
    kind: str
    output: str
    slot_range: tuple[int | None, int | None] = (None, None)

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise RenderError(f"unknown figure kind {self.kind!r}, expected one of {FIGURE_KINDS}")
        if not self.inputs:
            raise RenderError("at least one input file is required")


@dataclass
class TraceData:
    """Per-strategy arrays from one or more trace CSVs."""

    slots: dict[str, np.ndarray] = field(default_factory=dict)
    completed: dict[str, np.ndarray] = field(default_factory=dict)  # (slots, servers)
    token_backlog: dict[str, np.ndarray] = field(default_factory=dict)
    energy_backlog: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class RenderResult:
    """Where the image landed plus the data series that were drawn."""

    output: str
    final_cumulative_throughput: dict[str, float]


def read_traces(paths, slot_range=(None, None)) -> TraceData:
    rows: dict[str, dict[int, dict[int, tuple[float, float, float]]]] = {}
    for path in paths:
        with open(path, newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header is None or tuple(header) != TRACE_COLUMNS:
                raise RenderError(
                    f"{path}: trace schema mismatch, expected columns {','.join(TRACE_COLUMNS)}"
                )
            for row in reader:
                if len(row) != len(TRACE_COLUMNS):
                    raise RenderError(f"{path}: malformed row {row!r}")
                t = int(row[0])
                strategy = row[1]
                server = int(row[2])
                d_com = float(row[5])
                backlog = float(row[7])
                energy_backlog = float(row[8])
                rows.setdefault(strategy, {}).setdefault(t, {})[server] = (
                    d_com, backlog, energy_backlog,
                )
    if not rows:
        raise RenderError("no data rows found in the trace inputs")

    lo, hi = slot_range
    data = TraceData()
    for strategy, per_slot in rows.items():
        slots = sorted(per_slot)
        if lo is not None:
            slots = [t for t in slots if t >= lo]
        if hi is not None:
            slots = [t for t in slots if t < hi]
        if not slots:
            raise RenderError(f"slot range excludes every row for strategy {strategy!r}")
        servers = sorted(per_slot[slots[0]])
        completed = np.array([[per_slot[t][j][0] for j in servers] for t in slots])
        backlog = np.array([[per_slot[t][j][1] for j in servers] for t in slots])
        energy = np.array([[per_slot[t][j][2] for j in servers] for t in slots])
        data.slots[strategy] = np.array(slots)
        data.completed[strategy] = completed
        data.token_backlog[strategy] = backlog
        data.energy_backlog[strategy] = energy
    return data


def _render_queues(data: TraceData, output: str) -> RenderResult:
    if len(data.slots) != 1:
        raise RenderError(
            f"queue figures need a single-strategy trace, found {sorted(data.slots)}"
        )
    (strategy,) = data.slots
    slots = data.slots[strategy]
    fig, axes = plt.subplots(2, 1, figsize=(8, 7), sharex=True)
    panels = (
        (axes[0], data.token_backlog[strategy], "token queue backlog [tokens]"),
        (axes[1], data.energy_backlog[strategy], "energy queue backlog [J]"),
    )
    for ax, series, label in panels:
        for j in range(series.shape[1]):
            ax.plot(slots, series[:, j], color="tab:blue", alpha=0.45, lw=0.8)
        mean = float(series.mean())
        ax.axhline(mean, color="red", ls="--", lw=1.4, label=f"global mean {mean:.2f}")
        ax.set_ylabel(label)
        ax.legend(loc="upper right")
    axes[1].set_xlabel("slot")
    axes[0].set_title(f"per-server queue backlogs, strategy {strategy}")
    fig.tight_layout()
    fig.savefig(output, dpi=130)
    plt.close(fig)
    finals = {strategy: float(data.completed[strategy].sum())}
    return RenderResult(output, finals)


def _render_throughput(data: TraceData, output: str) -> RenderResult:
    fig, ax = plt.subplots(figsize=(8, 5))
    finals: dict[str, float] = {}
    order = sorted(data.slots, key=lambda s: (s != "stable-moe", s))
    for strategy in order:
        series = np.cumsum(data.completed[strategy].sum(axis=1))
        ax.plot(data.slots[strategy], series, lw=1.6, label=strategy)
        finals[strategy] = float(series[-1])
    ax.set_xlabel("slot")
    ax.set_ylabel("cumulative completed tokens")
    ax.set_title("cumulative throughput by routing strategy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(output, dpi=130)
    plt.close(fig)
    return RenderResult(output, finals)


def _render_sweep(paths, output: str) -> RenderResult:
    entries = []
    for path in paths:
        with open(path) as handle:
            payload = json.load(handle)
        if not isinstance(payload, list):
            raise RenderError(f"{path}: sweep input must be a JSON list")
        entries.extend(payload)
    if not entries:
        raise RenderError("sweep input is empty")
    for entry in entries:
        if "tradeoff_v" not in entry or "mean_total_token_backlog" not in entry:
            raise RenderError("sweep entries need tradeoff_v and mean_total_token_backlog")
    entries.sort(key=lambda e: e["tradeoff_v"])
    values = [e["tradeoff_v"] for e in entries]
    utility = [e.get("utility", 0.0) for e in entries]
    backlog = [e["mean_total_token_backlog"] for e in entries]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].plot(values, utility, marker="o")
    axes[0].set_xscale("log")
    axes[0].set_xlabel("trade-off weight")
    axes[0].set_ylabel("log-throughput utility")
    axes[1].plot(values, backlog, marker="o", color="tab:orange")
    axes[1].set_xscale("log")
    axes[1].set_xlabel("trade-off weight")
    axes[1].set_ylabel("mean total token backlog")
    fig.tight_layout()
    fig.savefig(output, dpi=130)
    plt.close(fig)
    finals = {f"v={v:g}": float(b) for v, b in zip(values, backlog)}
    return RenderResult(output, finals)


def render(spec: FigureSpec) -> RenderResult:
    """Write the requested figure; returns the drawn final values so callers
    can cross-check them against the summary artifacts."""
    if spec.kind == "v-sweep":
        return _render_sweep(spec.inputs, spec.output)
    data = read_traces(spec.inputs, spec.slot_range)
    if spec.kind == "queues":
        return _render_queues(data, spec.output)
    return _render_throughput(data, spec.output)
