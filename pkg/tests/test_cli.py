from __future__ import annotations

import json
import os

import pytest

import stable_moe as sm
from stable_moe import cli
from stable_moe.model import FeasibilityError, params_to_dict


def write_config(tmp_path, **overrides):
    data = dict(horizon=25, arrival_rate=40.0, rng_seed=11)
    data.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return str(path)


def test_run_writes_three_artifacts(tmp_path, capsys):
    config = write_config(tmp_path)
    out = str(tmp_path / "out")
    assert cli.main(["run", "--config", config, "--out", out, "--strategy", "stable-moe"]) == 0
    for name in ("trace.csv", "summary.json", "manifest.json"):
        assert os.path.exists(os.path.join(out, name))
    stdout = capsys.readouterr().out
    assert "trace=" in stdout and "manifest=" in stdout
    with open(os.path.join(out, "trace.csv")) as handle:
        header = handle.readline().strip()
    assert header == "t,strategy,j,batch_size,d_rou,d_com,E_com,Q,Z,f"


def test_invalid_top_k_exits_1(tmp_path, capsys):
    config = write_config(tmp_path, top_k=11)
    code = cli.main(["run", "--config", config, "--out", str(tmp_path / "o")])
    assert code == 1
    assert "top_k" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path):
    code = cli.main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")])
    assert code == 2


def test_unknown_config_key_exits_1(tmp_path, capsys):
    config = write_config(tmp_path, lambda_rate=1.0)
    assert cli.main(["run", "--config", config, "--out", str(tmp_path / "o")]) == 1
    assert "unknown config keys" in capsys.readouterr().err


def test_solver_failure_exits_3(tmp_path, monkeypatch):
    config = write_config(tmp_path)

    def boom(*args, **kwargs):
        raise FeasibilityError("synthetic failure")

    monkeypatch.setattr(cli.sim, "run", boom)
    assert cli.main(["run", "--config", config, "--out", str(tmp_path / "o")]) == 3


def test_repeated_runs_are_byte_identical(tmp_path):
    config = write_config(tmp_path, horizon=50)
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert cli.main(["run", "--config", config, "--out", out1]) == 0
    assert cli.main(["run", "--config", config, "--out", out2]) == 0
    with open(os.path.join(out1, "trace.csv"), "rb") as f1, \
            open(os.path.join(out2, "trace.csv"), "rb") as f2:
        assert f1.read() == f2.read()


def test_manifest_replay_reproduces_trace(tmp_path):
    config = write_config(tmp_path)
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert cli.main(["run", "--config", config, "--out", out1]) == 0
    manifest = os.path.join(out1, "manifest.json")
    assert cli.main(["run", "--config", manifest, "--out", out2]) == 0
    with open(os.path.join(out1, "trace.csv"), "rb") as f1, \
            open(os.path.join(out2, "trace.csv"), "rb") as f2:
        assert f1.read() == f2.read()


def test_seed_override_changes_the_energy_profile(tmp_path):
    config = write_config(tmp_path)
    cfg_a = cli.load_config(config, seed=1)
    cfg_b = cli.load_config(config, seed=2)
    assert cfg_a.params.energy_cap != cfg_b.params.energy_cap
    pinned = write_config(tmp_path, energy_cap=[5.0] * 10, energy_budget=[2.0] * 10,
                          switched_capacitance=[2e-27] * 10)
    cfg_c = cli.load_config(pinned, seed=3)
    assert cfg_c.params.energy_cap == tuple([5.0] * 10)


def test_compare_writes_ratios(tmp_path):
    config = write_config(tmp_path)
    out = str(tmp_path / "out")
    assert cli.main(["compare", "--config", config, "--out", out]) == 0
    with open(os.path.join(out, "ratios.json")) as handle:
        payload = json.load(handle)
    assert set(payload["ratios"]) == {"A", "B", "C", "D"}
    assert set(payload["totals"]) == {"stable-moe", "A", "B", "C", "D"}


def test_compare_with_baseline_subset(tmp_path):
    config = write_config(tmp_path)
    out = str(tmp_path / "out")
    assert cli.main(["compare", "--config", config, "--out", out, "--strategies", "A"]) == 0
    with open(os.path.join(out, "ratios.json")) as handle:
        payload = json.load(handle)
    assert set(payload["ratios"]) == {"A"}


def test_compare_degenerate_workload_reports_unit_ratios(tmp_path):
    config = write_config(tmp_path, arrival_rate=0.0, horizon=10)
    out = str(tmp_path / "out")
    assert cli.main(["compare", "--config", config, "--out", out]) == 0
    with open(os.path.join(out, "ratios.json")) as handle:
        payload = json.load(handle)
    assert all(r == 1.0 for r in payload["ratios"].values())


def test_sweep_v_writes_per_value_traces(tmp_path):
    config = write_config(tmp_path, horizon=15)
    out = str(tmp_path / "out")
    assert cli.main(["sweep-v", "--config", config, "--out", out, "--v-list", "1,10"]) == 0
    assert os.path.exists(os.path.join(out, "trace_v0.csv"))
    assert os.path.exists(os.path.join(out, "trace_v1.csv"))
    with open(os.path.join(out, "sweep.json")) as handle:
        sweep = json.load(handle)
    assert [entry["tradeoff_v"] for entry in sweep] == [1.0, 10.0]


def test_sweep_v_rejects_bad_list(tmp_path):
    config = write_config(tmp_path)
    assert cli.main(["sweep-v", "--config", config, "--out", str(tmp_path / "o"),
                     "--v-list", "1,banana"]) == 1


def test_t_max_overrides_horizon(tmp_path):
    config = write_config(tmp_path, horizon=100)
    out = str(tmp_path / "out")
    assert cli.main(["run", "--config", config, "--out", out, "--t-max", "5"]) == 0
    with open(os.path.join(out, "summary.json")) as handle:
        summary = json.load(handle)
    assert summary[0]["horizon"] == 5


def test_oracle_check_passes(capsys):
    assert cli.main(["oracle-check", "--instances", "25", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "instances=25" in out and "max_gap=" in out


def test_oracle_check_zero_instances_is_vacuous(capsys):
    assert cli.main(["oracle-check", "--instances", "0"]) == 0
    assert "instances=0" in capsys.readouterr().out


def test_oracle_check_detects_corruption(capsys):
    assert cli.main(["oracle-check", "--instances", "40", "--seed", "3", "--corrupt"]) == 4
    assert "mismatch=" in capsys.readouterr().out
