import csv
import json
import subprocess
import sys

import pytest

from uqscore.cli import build_parser, main
from uqscore.harness import GridConfig

SUBCOMMANDS = ("generate", "train", "score", "metrics", "risk-curve", "calibrate", "experiment", "report")


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    paths = {k: str(d / v) for k, v in dict(data="data.csv", spec="spec.json", model="model.json",
                                            pred="pred.ndjson").items()}
    assert main(["generate", "--seed", "3", "-o", paths["data"], "--spec-out", paths["spec"]]) == 0
    assert main(["train", "--data", paths["data"], "--hidden", "32,16", "--dropout", "0.2", "--seed", "1",
                 "-o", paths["model"]]) == 0
    assert main(["score", "--model", paths["model"], "--data", paths["data"], "--mc", "20", "--seed", "2",
                 "--scoring", "mutual_information", "-o", paths["pred"]]) == 0
    return paths


def test_generate_example(tmp_path):
    out = tmp_path / "d.csv"
    assert main(["generate", "--seed", "7", "--n", "1000", "--tau", "1", "--sigma", "1", "--p", "0.5",
                 "-o", str(out)]) == 0
    rows = _rows(out)
    assert len(rows) == 1000
    assert sum(r["y"] == "1" for r in rows) == 500
    assert list(rows[0]) == ["id", "x1", "x2", "y", "split"]


def test_generate_is_reproducible(tmp_path, capsys):
    main(["generate", "--seed", "4", "--n", "50", "--train-size", "30"])
    first = capsys.readouterr().out
    main(["generate", "--seed", "4", "--n", "50", "--train-size", "30"])
    assert capsys.readouterr().out == first


def test_env_seed_fallback(monkeypatch, capsys):
    main(["generate", "--seed", "9", "--n", "20", "--train-size", "10"])
    explicit = capsys.readouterr().out
    monkeypatch.setenv("UQSCORE_SEED", "9")
    main(["generate", "--n", "20", "--train-size", "10"])
    assert capsys.readouterr().out == explicit
    main(["generate", "--seed", "8", "--n", "20", "--train-size", "10"])
    assert capsys.readouterr().out != explicit


def test_metrics_with_oracle(pipeline, capsys):
    assert main(["metrics", "--predictions", pipeline["pred"], "--spec", pipeline["spec"],
                 "--data", pipeline["data"]]) == 0
    report = json.loads(capsys.readouterr().out)
    assert 0 <= report["uq_auc"] <= 1 and "kendall_phi" in report and "kendall_varphi" in report
    assert report["n"] == 400


def test_metrics_recomputes_scoring(pipeline, capsys):
    main(["metrics", "--predictions", pipeline["pred"]])
    stored = json.loads(capsys.readouterr().out)
    main(["metrics", "--predictions", pipeline["pred"], "--scoring", "mutual_information"])
    assert json.loads(capsys.readouterr().out)["uq_auc"] == stored["uq_auc"]


def test_risk_curve_and_calibrate(pipeline, capsys):
    assert main(["risk-curve", "--predictions", pipeline["pred"]]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "beta,risk,coverage,n_covered" and len(lines) > 2
    assert main(["calibrate", "--predictions", pipeline["pred"], "--gamma", "1.0"]) == 0
    gate = json.loads(capsys.readouterr().out)
    assert gate["coverage"] == 1.0


def test_calibrate_infeasible_exits_2(pipeline, capsys):
    assert main(["calibrate", "--predictions", pipeline["pred"], "--gamma", "-1"]) == 2
    assert capsys.readouterr().err.startswith("invalid-parameter:")


def test_metrics_all_correct_exits_2(tmp_path, capsys):
    path = tmp_path / "p.ndjson"
    path.write_text("".join(json.dumps({"id": f"a{i}", "y_true": i % 2, "probs": [[0.2, 0.8] if i % 2 else [0.9, 0.1]],
                                        "score": i / 10}) + "\n" for i in range(6)))
    assert main(["metrics", "--predictions", str(path)]) == 2
    err = capsys.readouterr().err.strip()
    assert err == "metric-undefined: uq_auc"


def test_schema_error_names_line(tmp_path, capsys):
    path = tmp_path / "p.ndjson"
    path.write_text('{"id": "a", "y_true": 0, "probs": [[0.5, 0.5]], "score": 1}\n'
                    '{"id": "b", "y_true": 1, "probs": [[0.7, 0.2]], "score": 2}\n')
    assert main(["metrics", "--predictions", str(path)]) == 2
    err = capsys.readouterr().err
    assert err.startswith("schema-error: line 2:") and err.count("\n") == 1


def test_missing_file_exits_2(tmp_path, capsys):
    assert main(["metrics", "--predictions", str(tmp_path / "nope")]) == 2
    assert len(capsys.readouterr().err.splitlines()) == 1


def test_usage_error_exits_1(capsys):
    assert main(["generate", "--n", "abc"]) == 1
    assert main(["no-such-command"]) == 1


def test_help_lists_defaults():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.__class__.__name__ == "_SubParsersAction")
    assert set(sub.choices) == set(SUBCOMMANDS)
    for name, p in sub.choices.items():
        text = p.format_help()
        for action in p._actions:
            if action.option_strings and action.dest != "help":
                assert action.option_strings[-1] in text
                if action.default not in (None, False) and not action.required:
                    assert "(default:" in text, name


def test_help_via_entry_point():
    out = subprocess.run([sys.executable, "-m", "uqscore", "experiment", "--help"], capture_output=True,
                         text=True, check=True).stdout
    assert "--workers" in out and "default: 1" in out


def test_experiment_and_report(tmp_path):
    grid = tmp_path / "grid.json"
    cfg = GridConfig(backbones=("softmax", "deep_ensemble"), learning_rates=(0.025,), hidden_layouts=((32, 16),),
                     ensemble_sizes=(2,), epochs=5)
    grid.write_text(cfg.to_json())
    a, b = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
    assert main(["experiment", "--grid", str(grid), "-o", str(a)]) == 0
    assert main(["experiment", "--grid", str(grid), "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == cfg.n_runs() == 8
    out_dir = tmp_path / "rep"
    assert main(["report", "--runs", str(a), "--out-dir", str(out_dir), "-o", str(tmp_path / "t.json")]) == 0
    names = sorted(p.name for p in out_dir.iterdir())
    assert "table.json" in names and len(names) == 5
