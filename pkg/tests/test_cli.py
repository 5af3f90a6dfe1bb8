import json
import os
from pathlib import Path

import pytest

from twistorlines.cli import EXIT_OK, EXIT_PARSE, EXIT_PIPELINE, EXIT_SOLVER, EXIT_STABILITY, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_check_benchmark_ok(capsys):
    assert main(["check", str(CONFIGS / "benchmark.yaml")]) == EXIT_OK
    out = capsys.readouterr().out
    report = json.loads(out[out.index("{\n"):])
    assert report["ok"] and report["stable"]


def test_check_equal_weights_reports_witness(capsys):
    assert main(["check", str(CONFIGS / "nongeneric.yaml")]) == EXIT_STABILITY
    out = capsys.readouterr().out
    report = json.loads(out[out.index("{\n"):])
    assert report["weight_witness"] == [1, 2] and "{1, 2}" in out


@pytest.mark.parametrize("name,witness", [("parallel.yaml", [1, 2, 3, 4]), ("zero_leg.yaml", [3])])
def test_check_unstable_legs(name, witness, capsys):
    assert main(["check", str(CONFIGS / name)]) == EXIT_STABILITY
    out = capsys.readouterr().out
    assert json.loads(out[out.index("{\n"):])["stability_witness"] == witness


def test_check_malformed(capsys):
    assert main(["check", str(CONFIGS / "malformed.yaml")]) == EXIT_PARSE
    assert "line 3" in capsys.readouterr().err


def test_bad_override_is_parse_error(tmp_path):
    assert main(["check", str(CONFIGS / "benchmark.yaml"), "--t-list", "0.2,0.1"]) == EXIT_PARSE


def test_solve_trivial_manifest(tmp_path):
    cfg = write(tmp_path, "c.yaml", f"solver: {{t_list: [0]}}\noutput: {{dir: {tmp_path / 'run'}}}\n")
    assert main(["solve", str(cfg)]) == EXIT_OK
    m = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert m["status"] == "converged" and m["converged_t"] == [0.0] and m["certificate"] is None
    st = json.loads((tmp_path / "run" / m["states"][0]).read_text())
    assert st["iterations"] == 0 and not any(st["x"])


def test_solve_huge_t_partial(tmp_path):
    cfg = write(tmp_path, "c.yaml", f"solver: {{t_list: [1e-3, 10]}}\noutput: {{dir: {tmp_path / 'run'}}}\n")
    assert main(["solve", str(cfg)]) == EXIT_SOLVER
    m = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert m["status"] == "partial" and m["failed_at"] == 10 and len(m["states"]) == 1


def test_solve_refuses_unstable(tmp_path):
    assert main(["solve", str(CONFIGS / "parallel.yaml"), "--out", str(tmp_path)]) == EXIT_STABILITY


def test_metrics_guards(tmp_path):
    cfg = write(tmp_path, "c.yaml", f"solver: {{t_list: [1e-3]}}\noutput: {{dir: {tmp_path / 'run'}}}\n")
    assert main(["metrics", str(cfg)]) == EXIT_PIPELINE            # no run yet
    assert main(["solve", str(cfg)]) == EXIT_OK
    assert main(["metrics", str(cfg)]) == EXIT_PIPELINE            # single t


def test_solve_and_metrics_end_to_end(tmp_path, capsys):
    cfg = write(tmp_path, "c.yaml", f"solver: {{t_list: [1e-3, 2e-3, 4e-3, 8e-3]}}\n"
                                    f"output: {{dir: {tmp_path / 'run'}}}\n")
    assert main(["solve", str(cfg)]) == EXIT_OK
    m = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert all(max(e["residuals"].values()) <= 1e-10 for e in m["log"])
    assert max(m["certificate"]["sum_P"]) <= 1e-8
    capsys.readouterr()
    assert main(["metrics", str(cfg)]) == EXIT_OK
    out = capsys.readouterr().out
    slope = float(out.split("deviation slope")[1].split()[0])
    assert 0.8 <= slope <= 1.2
    first = (tmp_path / "run" / "metrics.csv").read_bytes()
    assert main(["metrics", str(cfg)]) == EXIT_OK
    assert (tmp_path / "run" / "metrics.csv").read_bytes() == first
    report = json.loads((tmp_path / "run" / "metrics.json").read_text())
    assert 0.8 <= report["slope"] <= 1.2


def test_tolerance_flags_override(tmp_path):
    out = tmp_path / "run"
    assert main(["solve", str(CONFIGS / "benchmark.yaml"), "--t-list", "0", "--N", "4",
                 "--ode-tol", "1e-10", "--out", str(out)]) == EXIT_OK
    m = json.loads((out / "manifest.json").read_text())
    assert m["config"]["solver"]["N"] == 4 and m["config"]["solver"]["ode_tol"] == 1e-10
    assert m["config"]["output"]["dir"] == str(out)


def test_sweep_uses_thread_env(tmp_path, capsys, monkeypatch):
    good = write(tmp_path, "a.yaml", f"solver: {{t_list: [0]}}\noutput: {{dir: {tmp_path / 'a'}}}\n")
    monkeypatch.setenv("TWISTORLINES_THREADS", "2")
    code = main(["sweep", str(good), str(CONFIGS / "nongeneric.yaml"), str(CONFIGS / "malformed.yaml")])
    assert code == EXIT_PARSE
    runs = json.loads(capsys.readouterr().out)["runs"]
    assert [r["exit"] for r in runs] == [EXIT_OK, EXIT_STABILITY, EXIT_PARSE]
