"""Command-line entry point.

Subcommands: run, compare, sweep-v, oracle-check. Configuration is a single
JSON object whose keys mirror the SystemParams field names (all optional,
unknown keys rejected) plus a few extras:

    solver_kind         "flow" (default) or "branch-and-bound"
    gating_clusters     synthetic gating model cluster count
    gating_feature_dim  synthetic gating model feature dimension
    gating_temperature  softmax temperature
    scores_csv          replay gating scores from a CSV (slot,token,j,g)

Exit codes: 0 ok, 1 invalid configuration, 2 I/O failure, 3 solver
infeasibility, 4 oracle mismatch. stdout carries machine-readable key=value
lines; diagnostics go to stderr (STABLE_MOE_LOG=debug|info|warning|quiet).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__, sim, solver
from .gating import GatingConfig, GatingModel, load_score_table
from .model import (
    FeasibilityError,
    ParameterError,
    SystemParams,
    TokenBatch,
    atomic_write_text,
    default_params,
    params_from_dict,
    params_to_dict,
)

log = logging.getLogger("stable_moe.cli")

_PARAM_KEYS = tuple(params_to_dict(default_params()).keys())
_EXTRA_KEYS = ("solver_kind", "gating_clusters", "gating_feature_dim",
               "gating_temperature", "scores_csv")


class OracleMismatch(RuntimeError):
    pass


@dataclass
class RunConfig:
    params: SystemParams
    solver_kind: str
    gating: GatingConfig
    scores_csv: str | None

    def resolved(self) -> dict:
        out = params_to_dict(self.params)
        out["solver_kind"] = self.solver_kind
        out["gating_clusters"] = self.gating.num_clusters
        out["gating_feature_dim"] = self.gating.feature_dim
        out["gating_temperature"] = self.gating.temperature
        out["scores_csv"] = self.scores_csv
        return out


def load_config(path: str | None, seed: int | None = None,
                t_max: int | None = None) -> RunConfig:
    """Read and resolve a config file (or the built-in defaults).

    A manifest written by a previous run is accepted in place of a config;
    its resolved config block is used, which reproduces the original run
    byte for byte.
    """
    data: dict = {}
    if path is not None:
        with open(path) as handle:
            data = json.load(handle)
        if not isinstance(data, dict):
            raise ParameterError("config must be a JSON object")
        if "config" in data and "tool" in data:  # manifest replay
            data = dict(data["config"])
    unknown = sorted(set(data) - set(_PARAM_KEYS) - set(_EXTRA_KEYS))
    if unknown:
        raise ParameterError(f"unknown config keys: {', '.join(unknown)}")

    solver_kind = data.pop("solver_kind", "flow")
    if solver_kind not in ("flow", "branch-and-bound"):
        raise ParameterError(f"solver_kind must be 'flow' or 'branch-and-bound', got {solver_kind!r}")
    gating = GatingConfig(
        num_clusters=data.pop("gating_clusters", GatingConfig.num_clusters),
        feature_dim=data.pop("gating_feature_dim", GatingConfig.feature_dim),
        temperature=data.pop("gating_temperature", GatingConfig.temperature),
    )
    scores_csv = data.pop("scores_csv", None)

    if seed is not None:
        data["rng_seed"] = seed
        # a seed override resamples the energy profile unless the config pins it
        if "energy_cap" not in data:
            data.pop("energy_budget", None)
    if t_max is not None:
        data["horizon"] = t_max
    if set(data) == set(_PARAM_KEYS):
        params = params_from_dict(data)
    else:
        params = default_params(**data)
    return RunConfig(params=params, solver_kind=solver_kind, gating=gating, scores_csv=scores_csv)


def _manifest(cfg: RunConfig, strategies: list[str], out_dir: str) -> dict:
    resolved = cfg.resolved()
    digest = hashlib.sha256(json.dumps(resolved, sort_keys=True).encode()).hexdigest()
    return {
        "tool": "stable-moe",
        "version": __version__,
        "config_sha256": digest,
        "config": resolved,
        "strategies": strategies,
        "out_dir": os.path.abspath(out_dir),
    }


def _write_outputs(cfg: RunConfig, results, out_dir: str, extra: dict | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    trace_path = os.path.join(out_dir, "trace.csv")
    summary_path = os.path.join(out_dir, "summary.json")
    manifest_path = os.path.join(out_dir, "manifest.json")
    sim.write_trace_csv(results, trace_path)
    sim.write_summary_json(results, summary_path)
    manifest = _manifest(cfg, [r.strategy for r in results], out_dir)
    atomic_write_text(manifest_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"trace={trace_path}")
    print(f"summary={summary_path}")
    print(f"manifest={manifest_path}")
    if extra:
        for name, payload in extra.items():
            path = os.path.join(out_dir, name)
            atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
            print(f"{os.path.splitext(name)[0]}={path}")


def _run_kwargs(cfg: RunConfig) -> dict:
    kwargs: dict = {"solver_kind": cfg.solver_kind}
    if cfg.scores_csv is not None:
        kwargs["score_table"] = load_score_table(cfg.scores_csv, cfg.params.num_servers)
    else:
        kwargs["gating_model"] = GatingModel(cfg.params.rng_seed, cfg.params.num_servers, cfg.gating)
    return kwargs


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.seed, args.t_max)
    result = sim.run(args.strategy, cfg.params, **_run_kwargs(cfg))
    _write_outputs(cfg, [result], args.out)
    log.info("strategy=%s throughput=%d wall=%.2fs", result.strategy,
             result.summary.cumulative_throughput, result.summary.wall_time_s)
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config, args.seed, args.t_max)
    baselines = [s.strip() for s in args.strategies.split(",") if s.strip()]
    for name in baselines:
        if name not in solver.BASELINE_KINDS:
            raise ParameterError(f"unknown baseline {name!r}, expected subset of {solver.BASELINE_KINDS}")
    names = ["stable-moe"] + baselines
    results = sim.compare(names, cfg.params, **_run_kwargs(cfg))
    ratios = sim.throughput_ratios(results)
    payload = {
        "totals": {r.strategy: r.summary.cumulative_throughput for r in results},
        "ratios": ratios,
        "convention": "0/0 -> 1.0",
    }
    _write_outputs(cfg, results, args.out, extra={"ratios.json": payload})
    return 0


def cmd_sweep_v(args) -> int:
    cfg = load_config(args.config, args.seed, args.t_max)
    try:
        values = [float(v) for v in args.v_list.split(",") if v.strip()]
    except ValueError as exc:
        raise ParameterError(f"bad --v-list: {exc}") from exc
    if not values:
        raise ParameterError("--v-list must name at least one value")
    results = sim.sweep_v(values, cfg.params, **_run_kwargs(cfg))
    os.makedirs(args.out, exist_ok=True)
    sweep = []
    for i, (v, result) in enumerate(zip(values, results)):
        trace_path = os.path.join(args.out, f"trace_v{i}.csv")
        sim.write_trace_csv([result], trace_path)
        print(f"trace_v{i}={trace_path}")
        entry = sim.summary_dict(result)
        entry["tradeoff_v"] = v
        sweep.append(entry)
    sweep_path = os.path.join(args.out, "sweep.json")
    atomic_write_text(sweep_path, json.dumps(sweep, indent=2, sort_keys=True) + "\n")
    manifest_path = os.path.join(args.out, "manifest.json")
    atomic_write_text(manifest_path, json.dumps(
        _manifest(cfg, ["stable-moe"], args.out) | {"v_list": values},
        indent=2, sort_keys=True) + "\n")
    print(f"sweep={sweep_path}")
    print(f"manifest={manifest_path}")
    return 0


def _random_instance(rng: np.random.Generator):
    """Small random instance within the exhaustive-search bounds."""
    num_servers = int(rng.integers(2, 5))
    top_k = int(rng.integers(1, min(2, num_servers) + 1))
    batch_size = int(rng.integers(0, 6))
    caps, budgets = [], []
    for _ in range(num_servers):
        cap = float(rng.uniform(0.5, 15.0))
        caps.append(cap)
        budgets.append(float(rng.uniform(0.1, cap)))
    p = SystemParams(
        num_servers=num_servers,
        top_k=top_k,
        slot_duration=1.0,
        arrival_rate=float(batch_size),
        cycles_per_token=1e7,
        max_frequency=3e9,
        switched_capacitance=tuple([2e-27] * num_servers),
        energy_cap=tuple(caps),
        energy_budget=tuple(budgets),
        tradeoff_v=float(rng.choice([0.1, 1.0, 10.0])),
        consistency_weight=float(rng.choice([0.0, 1.0, 5.0])),
        horizon=1,
        rng_seed=0,
    )
    batch = TokenBatch(0, rng.uniform(0.0, 1.0, size=(batch_size, num_servers)))
    from .model import ServerState

    states = tuple(
        ServerState(int(rng.integers(0, 21)), float(rng.uniform(0.0, 10.0)))
        for _ in range(num_servers)
    )
    return p, batch, states


def cmd_oracle_check(args) -> int:
    cfg = load_config(args.config, args.seed, None)
    if args.instances == 0:
        log.warning("oracle check with 0 instances is vacuous")
        print("instances=0 max_gap=0")
        return 0
    rng = np.random.Generator(np.random.Philox(
        key=np.array([cfg.params.rng_seed & ((1 << 64) - 1), 0xFACE], dtype=np.uint64)))
    original_build = solver._build_slim
    if args.corrupt:
        def corrupted(j, state, n_max, p):
            prof = original_build(j, state, n_max, p)
            prof.best_capped = max(prof.best_capped - 1, 0)
            prof.marginals = [0.5 * m for m in prof.marginals]
            return prof
        solver._build_slim = corrupted
    max_gap = 0.0
    try:
        for i in range(args.instances):
            p, batch, states = _random_instance(rng)
            flow = solver.solve_per_slot(batch, states, p)
            oracle = solver.brute_force_oracle(batch, states, p)
            gap = abs(flow.objective_value - oracle.objective_value)
            max_gap = max(max_gap, gap)
            if gap > 1e-9:
                payload = {
                    "instance": i,
                    "params": params_to_dict(p),
                    "scores": batch.scores.tolist(),
                    "token_backlog": [s.token_backlog for s in states],
                    "energy_backlog": [s.energy_backlog for s in states],
                    "flow_objective": flow.objective_value,
                    "oracle_objective": oracle.objective_value,
                }
                print(f"mismatch={json.dumps(payload, sort_keys=True)}")
                raise OracleMismatch(f"instance {i}: gap {gap}")
    finally:
        solver._build_slim = original_build
    print(f"instances={args.instances} max_gap={max_gap:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stable-moe",
        description="Queue-stable token routing simulator for heterogeneous edge servers",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", default=None, help="JSON config (defaults used when omitted)")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--t-max", type=int, default=None, help="override the horizon")
        if out:
            sp.add_argument("--out", default="out", help="output directory")

    sp_run = sub.add_parser("run", help="simulate one strategy")
    common(sp_run)
    sp_run.add_argument("--strategy", default="stable-moe", choices=sim.STRATEGIES)
    sp_run.set_defaults(func=cmd_run)

    sp_cmp = sub.add_parser("compare", help="paired comparison against the reference strategies")
    common(sp_cmp)
    sp_cmp.add_argument("--strategies", default="A,B,C,D",
                        help="comma-separated subset of the reference strategies")
    sp_cmp.set_defaults(func=cmd_compare)

    sp_sweep = sub.add_parser("sweep-v", help="sweep the stability/utility trade-off weight")
    common(sp_sweep)
    sp_sweep.add_argument("--v-list", required=True, help="comma-separated trade-off values")
    sp_sweep.set_defaults(func=cmd_sweep_v)

    sp_oracle = sub.add_parser("oracle-check", help="verify the flow solver against brute force")
    common(sp_oracle, out=False)
    sp_oracle.add_argument("--instances", type=int, default=200)
    sp_oracle.add_argument("--corrupt", action="store_true",
                           help="perturb solver profiles to force a mismatch (failure-path testing)")
    sp_oracle.set_defaults(func=cmd_oracle_check)
    return parser


def _configure_logging() -> None:
    level = os.environ.get("STABLE_MOE_LOG", "warning").lower()
    levels = {"debug": logging.DEBUG, "info": logging.INFO,
              "warning": logging.WARNING, "quiet": logging.CRITICAL}
    logging.basicConfig(stream=sys.stderr, level=levels.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FeasibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OracleMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
