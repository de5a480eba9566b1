import json

import pytest

from sketchdecomp.cli import EXIT_INVALID, EXIT_NONCONVERGED, EXIT_OK, main
from sketchdecomp.scenario import desk_scenario, zero_traffic_scenario


@pytest.fixture
def desk_cfg(tmp_path):
    p = tmp_path / "desk.json"
    p.write_text(json.dumps(desk_scenario(4, n=14, flows=6)))
    return p


def test_run_writes_everything(tmp_path, desk_cfg):
    out = tmp_path / "run"
    assert main(["run", "--config", str(desk_cfg), "--out", str(out), "--emit-plot-data", "--checkpoint"]) == EXIT_OK
    for name in ("trace.ndjson", "ground_truth.json", "delay_hist.csv", "series.json", "stack.json",
                 "residuals.csv", "report.json", "checkpoint.json", "metrics.csv", "loss_plot.csv"):
        assert (out / name).stat().st_size > 0, name
    last = (out / "residuals.csv").read_text().splitlines()[-1].split(",")
    assert max(float(v) for v in last[1:7]) <= 1e-4


def test_simulate_is_deterministic(tmp_path, desk_cfg):
    for tag in "ab":
        assert main(["simulate", "--config", str(desk_cfg), "--out", str(tmp_path / tag)]) == EXIT_OK
    assert (tmp_path / "a/trace.ndjson").read_bytes() == (tmp_path / "b/trace.ndjson").read_bytes()


def test_jitter_violation_exits_2(tmp_path, capsys):
    obj = desk_scenario(0, n=10)
    obj["simulator"]["delay"]["jitter_ms"] = 35.0
    p = tmp_path / "c.json"
    p.write_text(json.dumps(obj))
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert "jitter" in capsys.readouterr().err


def test_corrupted_trace_exits_2(tmp_path, desk_cfg, capsys):
    bad = tmp_path / "t.ndjson"
    bad.write_text('{"flow":"x","send_ns":1,"arrival_ns":null}\n{"flow":\n')
    assert main(["detect", "--trace", str(bad), "--config", str(desk_cfg), "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert "line 2" in capsys.readouterr().err


def test_max_iter_one_exits_3_with_report(tmp_path, desk_cfg):
    out = tmp_path / "o"
    assert main(["run", "--config", str(desk_cfg), "--out", str(out), "--max-iter", "1"]) == EXIT_NONCONVERGED
    rep = json.loads((out / "report.json").read_text())
    assert rep["solver"]["converged"] is False
    assert (out / "metrics.csv").exists()


def test_zero_traffic(tmp_path):
    p = tmp_path / "z.json"
    p.write_text(json.dumps(zero_traffic_scenario()))
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(p), "--out", str(out)]) == EXIT_OK
    assert main(["detect", "--trace", str(out / "trace.ndjson"), "--config", str(p), "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["estimates"] == [] and rep["flows"] == []


@pytest.fixture
def evaluated(tmp_path, desk_cfg):
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(desk_cfg), "--out", str(out)]) == EXIT_OK
    gt = json.loads((out / "ground_truth.json").read_text())
    horizon = len(gt["loss_count"]) - 2
    est = [
        {"flow": f, "window": k + 1, "estimated_loss": gt["loss_count"][k][j], "sent_estimate": gt["sent_count"][k][j]}
        for j, f in enumerate(gt["flows"])
        for k in range(horizon)
    ]
    return out, gt, {"windows": horizon, "flows": gt["flows"], "estimates": est}


def test_evaluate_perfect_fixture(tmp_path, evaluated):
    out, gt, rep = evaluated
    (out / "perfect.json").write_text(json.dumps(rep))
    rc = main(["evaluate", "--report", str(out / "perfect.json"), "--ground-truth", str(out / "ground_truth.json"),
               "--out", str(out / "m.csv")])
    assert rc == EXIT_OK
    ratio = (out / "m.csv").read_text().splitlines()[-1].split(",")
    assert ratio[0] == "ratio" and all(float(v) == 0 for v in ratio[1:])


def test_evaluate_mismatched_flows(tmp_path, evaluated):
    out, gt, rep = evaluated
    drop = gt["flows"][0]
    rep["estimates"] = [e for e in rep["estimates"] if e["flow"] != drop]
    (out / "short.json").write_text(json.dumps(rep))
    rc = main(["evaluate", "--report", str(out / "short.json"), "--ground-truth", str(out / "ground_truth.json"),
               "--out", str(out / "m.csv")])
    assert rc == EXIT_INVALID


def test_evaluate_missing_ground_truth(tmp_path, evaluated):
    out, gt, rep = evaluated
    (out / "r.json").write_text(json.dumps(rep))
    rc = main(["evaluate", "--report", str(out / "r.json"), "--ground-truth", str(out / "missing.json"),
               "--out", str(out / "m.csv")])
    assert rc == EXIT_INVALID


def test_scenario_command(tmp_path):
    p = tmp_path / "s.json"
    assert main(["scenario", "severity", "--out", str(p), "--n", "20"]) == EXIT_OK
    assert json.loads(p.read_text())["windowing"]["n"] == 20
