from __future__ import annotations

import json

import numpy as np
import pytest

from stable_moe_plots import FigureSpec, RenderError, render
from stable_moe_plots.cli import main
from stable_moe_plots.figures import read_traces

HEADER = "t,strategy,j,batch_size,d_rou,d_com,E_com,Q,Z,f"


def write_trace(path, strategies=("stable-moe",), slots=6, servers=2):
    lines = [HEADER]
    for name in strategies:
        for t in range(slots):
            for j in range(servers):
                d_com = (t + 1) * (j + 1)
                lines.append(f"{t},{name},{j},10,{d_com + 1},{d_com},0.5,{t % 3},0.25,1e9")
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def test_schema_mismatch_is_an_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,strategy,j\n0,x,0\n")
    with pytest.raises(RenderError, match="schema"):
        read_traces([str(bad)])


def test_empty_trace_is_an_error_and_writes_nothing(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text(HEADER + "\n")
    out = tmp_path / "fig.png"
    with pytest.raises(RenderError, match="no data rows"):
        render(FigureSpec(inputs=(str(empty),), kind="throughput", output=str(out)))
    assert not out.exists()


def test_unknown_kind_rejected(tmp_path):
    with pytest.raises(RenderError, match="kind"):
        FigureSpec(inputs=("x.csv",), kind="pie", output="y.png")


def test_queue_figure_requires_single_strategy(tmp_path):
    trace = write_trace(tmp_path / "trace.csv", strategies=("stable-moe", "A"))
    with pytest.raises(RenderError, match="single-strategy"):
        render(FigureSpec(inputs=(trace,), kind="queues", output=str(tmp_path / "q.png")))


def test_queue_figure_smoke(tmp_path):
    trace = write_trace(tmp_path / "trace.csv")
    out = tmp_path / "queues.png"
    result = render(FigureSpec(inputs=(trace,), kind="queues", output=str(out)))
    assert out.exists() and out.stat().st_size > 0
    assert result.final_cumulative_throughput["stable-moe"] == sum(
        (t + 1) * (j + 1) for t in range(6) for j in range(2)
    )


def test_throughput_final_values(tmp_path):
    trace = write_trace(tmp_path / "trace.csv", strategies=("stable-moe", "A", "B"))
    out = tmp_path / "thr.png"
    result = render(FigureSpec(inputs=(trace,), kind="throughput", output=str(out)))
    assert out.exists()
    expected = float(sum((t + 1) * (j + 1) for t in range(6) for j in range(2)))
    assert result.final_cumulative_throughput == {
        "stable-moe": expected, "A": expected, "B": expected,
    }


def test_slot_range_filters_rows(tmp_path):
    trace = write_trace(tmp_path / "trace.csv")
    data = read_traces([trace], slot_range=(2, 5))
    np.testing.assert_array_equal(data.slots["stable-moe"], [2, 3, 4])
    with pytest.raises(RenderError, match="slot range"):
        read_traces([trace], slot_range=(90, 99))


def test_sweep_figure(tmp_path):
    sweep = tmp_path / "sweep.json"
    sweep.write_text(json.dumps([
        {"tradeoff_v": 1.0, "utility": 40.0, "mean_total_token_backlog": 2.0},
        {"tradeoff_v": 10.0, "utility": 45.0, "mean_total_token_backlog": 5.0},
    ]))
    out = tmp_path / "sweep.png"
    result = render(FigureSpec(inputs=(str(sweep),), kind="v-sweep", output=str(out)))
    assert out.exists()
    assert result.final_cumulative_throughput == {"v=1": 2.0, "v=10": 5.0}


def test_sweep_rejects_malformed_entries(tmp_path):
    sweep = tmp_path / "sweep.json"
    sweep.write_text(json.dumps([{"utility": 1.0}]))
    with pytest.raises(RenderError, match="tradeoff_v"):
        render(FigureSpec(inputs=(str(sweep),), kind="v-sweep", output=str(tmp_path / "s.png")))


def test_cli_success_and_failure(tmp_path, capsys):
    trace = write_trace(tmp_path / "trace.csv")
    out = tmp_path / "fig.png"
    assert main(["--kind", "throughput", "--in", trace, "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "figure=" in stdout and "final[stable-moe]=" in stdout

    bad = tmp_path / "bad.csv"
    bad.write_text("nope\n")
    assert main(["--kind", "throughput", "--in", str(bad), "--out", str(out)]) == 1
    assert "error:" in capsys.readouterr().err


def test_cli_bad_range(tmp_path, capsys):
    trace = write_trace(tmp_path / "trace.csv")
    assert main(["--kind", "throughput", "--in", trace, "--out",
                 str(tmp_path / "f.png"), "--t-range", "zz"]) == 1
