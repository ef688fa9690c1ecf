from __future__ import annotations

import json
from pathlib import Path

import pytest

from perfbridge.cli import EXIT_ERROR, EXIT_OK, EXIT_REGRESSION, main

HIGH = "Catalog:Catalog.f3"


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory) -> Path:
    d = tmp_path_factory.mktemp("scenario")
    assert main(["generate", "--out-dir", str(d), "--inject", f"{HIGH}=2.5", "--seed", "1"]) == EXIT_OK
    return d


def files(d: Path, updated: str = "updated.csv") -> list[str]:
    return [
        "--baseline", str(d / "baseline.csv"),
        "--updated", str(d / updated),
        "--local-traces", str(d / "local_traces.csv"),
        "--system-traces", str(d / "system_traces.csv"),
        "--model", str(d / "model.json"),
    ]


def run_json(capsys, argv) -> tuple[int, dict]:
    code = main(argv + ["--format", "json"])
    return code, json.loads(capsys.readouterr().out)


def test_analyze_identical_files(fixture_dir, capsys):
    b = str(fixture_dir / "baseline.csv")
    code, doc = run_json(capsys, ["analyze-local", "--baseline", b, "--updated", b])
    assert code == EXIT_OK
    assert doc["deviations"] == {}
    assert len(doc["reports"]) == 18


def test_analyze_slowed_component(fixture_dir, capsys):
    code, doc = run_json(capsys, ["analyze-local", *files(fixture_dir)[:4]])
    assert code == EXIT_OK
    assert list(doc["deviations"]) == [HIGH]
    assert doc["deviations"][HIGH]["md_ms"] > 0


def test_analyze_missing_updated_is_usage_error(fixture_dir, capsys):
    assert main(["analyze-local", "--baseline", str(fixture_dir / "baseline.csv")]) == EXIT_ERROR
    assert "--updated" in capsys.readouterr().err


def test_missing_file(fixture_dir, capsys):
    code = main(["analyze-local", "--baseline", str(fixture_dir / "nope.csv"), "--updated", str(fixture_dir / "baseline.csv")])
    assert code == EXIT_ERROR
    assert "not found" in capsys.readouterr().err


def test_parse_error(fixture_dir, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("subsystem,component,version,iteration,duration_ms\nA,x,v,0,abc\n")
    assert main(["analyze-local", "--baseline", str(bad), "--updated", str(bad)]) == EXIT_ERROR
    assert "bad.csv" in capsys.readouterr().err


def test_bad_alpha(fixture_dir):
    argv = ["analyze-local", *files(fixture_dir)[:4], "--alpha", "1.5"]
    assert main(argv) == EXIT_ERROR


def test_propagate(fixture_dir, capsys):
    code, doc = run_json(capsys, ["propagate", *files(fixture_dir)[:8]])
    assert code == EXIT_OK
    [dev] = doc["subsystem_deviations"]
    assert dev["subsystem"] == "Catalog" and dev["relative_delta"] > 0


def test_predict_with_deviations(fixture_dir, tmp_path, capsys):
    dev = tmp_path / "dev.json"
    assert main(["propagate", *files(fixture_dir)[:8], "--format", "json", "--out", str(dev)]) == EXIT_OK
    model = str(fixture_dir / "model.json")
    _, base = run_json(capsys, ["predict", "--model", model, "--duration", "600"])
    _, upd = run_json(capsys, ["predict", "--model", model, "--duration", "600", "--deviations", str(dev)])
    assert upd["utilization"]["cpu_Catalog"] > base["utilization"]["cpu_Catalog"]


def test_detect_noop_exits_zero(fixture_dir, capsys):
    assert main(["detect", *files(fixture_dir, "baseline.csv")]) == EXIT_OK
    assert "regression: false" in capsys.readouterr().out


def test_detect_regression_exits_one(fixture_dir, capsys):
    assert main(["detect", *files(fixture_dir)]) == EXIT_REGRESSION
    assert "regression: true" in capsys.readouterr().out


def test_detect_malformed_model_exits_two(fixture_dir, tmp_path):
    bad = tmp_path / "model.json"
    bad.write_text('{"places": [')
    argv = files(fixture_dir)
    argv[argv.index("--model") + 1] = str(bad)
    assert main(["detect", *argv]) == EXIT_ERROR


def test_seed_gives_identical_reports(fixture_dir, capsys, monkeypatch):
    argv = ["detect", *files(fixture_dir), "--format", "json", "--duration", "800"]
    main(argv + ["--seed", "7"])
    first = capsys.readouterr().out
    main(argv + ["--seed", "7"])
    assert capsys.readouterr().out == first
    monkeypatch.setenv("PERF_BRIDGE_SEED", "7")
    main(argv)
    assert capsys.readouterr().out == first
    main(argv + ["--seed", "8"])
    assert capsys.readouterr().out != first


def test_config_file_and_flag_precedence(fixture_dir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "baseline": str(fixture_dir / "baseline.csv"),
        "updated": str(fixture_dir / "baseline.csv"),
        "alpha": 0.5,
        "format": "json",
    }))
    code = main(["analyze-local", "--config", str(cfg)])
    assert code == EXIT_OK
    assert json.loads(capsys.readouterr().out)["alpha"] == 0.5
    code = main(["analyze-local", "--config", str(cfg), "--alpha", "0.01"])
    assert json.loads(capsys.readouterr().out)["alpha"] == 0.01
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["analyze-local", "--config", str(cfg)]) == EXIT_ERROR


def test_evaluate_table_shape(tmp_path):
    out = tmp_path / "eval.json"
    assert main(["evaluate", "--format", "json", "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert len(doc["fixed_workload"]) == 9
    assert len(doc["various_workload"]) == 12
    for cell in doc["various_workload"]:
        assert set(cell["cpu_abs_delta"]) == {"cpu_Frontend", "cpu_Catalog", "cpu_Orders"}
    text_out = tmp_path / "eval.txt"
    assert main(["evaluate", "--out", str(text_out)]) == EXIT_OK
    text = text_out.read_text()
    assert "Outcome" in text and "Fixed workload" in text


def test_evaluate_zero_intensities_all_tn(capsys):
    code, doc = run_json(capsys, ["evaluate", "--intensities", "0,0,0"])
    assert code == EXIT_OK
    assert {c["outcome"] for c in doc["fixed_workload"] + doc["various_workload"]} == {"TN"}


def test_unknown_command():
    assert main(["frobnicate"]) == EXIT_ERROR


def test_help_exits_zero(capsys):
    assert main(["--help"]) == EXIT_OK
