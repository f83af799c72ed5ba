import csv
import json

import pytest

from cascade_sdr.cli import main


@pytest.fixture
def traces_file(tmp_path):
    out = tmp_path / "gen"
    assert main(["generate", "--bundled", "three_class", "--seed", "3", "--out", str(out),
                 "--n-per-class", "20", "--horizon", "30"]) == 0
    return out / "traces.jsonl"


def test_generate_is_byte_identical(tmp_path, traces_file):
    again = tmp_path / "gen2"
    main(["generate", "--bundled", "three_class", "--seed", "3", "--out", str(again),
          "--n-per-class", "20", "--horizon", "30"])
    assert (again / "traces.jsonl").read_bytes() == traces_file.read_bytes()
    manifest = json.loads((again / "manifest.json").read_text())
    assert manifest["outputs"] == ["traces.jsonl"]
    assert len(manifest["config_hash"]) == 64 and "numpy" in manifest["versions"]


def test_generate_horizon_zero(tmp_path, capsys):
    code = main(["generate", "--bundled", "three_class", "--seed", "1", "--out", str(tmp_path / "x"),
                 "--horizon", "0"])
    assert code == 2
    assert "horizon must be ≥ 1" in capsys.readouterr().err


def test_seed_required(tmp_path, capsys):
    assert main(["generate", "--bundled", "three_class", "--out", str(tmp_path / "x")]) == 2
    assert "seed" in capsys.readouterr().err


def test_exactly_one_model_source(tmp_path, capsys):
    assert main(["generate", "--seed", "1", "--out", str(tmp_path / "x")]) == 2
    assert "exactly one model source" in capsys.readouterr().err


def test_missing_file_named(tmp_path, capsys):
    code = main(["run", "--bundled", "three_class", "--traces", str(tmp_path / "nope.jsonl"),
                 "--seed", "0", "--out", str(tmp_path / "r")])
    assert code == 2
    assert "nope.jsonl" in capsys.readouterr().err


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bundled": "ab_pair", "seed": 4, "n_per_class": 3, "horizon": 5}))
    out = tmp_path / "o"
    assert main(["generate", "--config", str(cfg), "--out", str(out), "--horizon", "7"]) == 0
    lines = (out / "traces.jsonl").read_text().splitlines()
    assert len(lines) == 1 + 6
    assert len(json.loads(lines[1])["events"]) == 7
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["generate", "--config", str(cfg), "--out", str(out), "--seed", "1"]) == 2


def _decisions(path):
    return [r["decision"] for r in csv.DictReader(open(path))]


def test_run_gnn_oracle_matches_msprt(tmp_path, traces_file):
    for rule, extra in (("msprt", []), ("gnn", ["--scorer", "oracle"])):
        assert main(["run", "--bundled", "three_class", "--traces", str(traces_file), "--rule", rule,
                     "--seed", "0", "--out", str(tmp_path / rule), *extra]) == 0
    assert _decisions(tmp_path / "msprt" / "outcomes.csv") == _decisions(tmp_path / "gnn" / "outcomes.csv")


def test_fit_then_sweep(tmp_path, traces_file):
    assert main(["fit", "--traces", str(traces_file), "--seed", "0", "--out", str(tmp_path / "fit")]) == 0
    assert (tmp_path / "fit" / "model.json").exists() and (tmp_path / "fit" / "fit.json").exists()
    assert main(["sweep", "--model", str(tmp_path / "fit" / "model.json"), "--traces", str(traces_file),
                 "--a-grid", "0.1,0.01", "--deadlines", "1,10,30", "--seed", "0",
                 "--out", str(tmp_path / "sw")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "sw" / "a_sweep.csv")))
    assert [r["a"] for r in rows] == ["0.1", "0.01"]
    auc = json.loads((tmp_path / "sw" / "accuracy_curve.json").read_text())["auc"]
    assert 0 < auc <= 1


def test_verify_error_bounds_pass(tmp_path, capsys):
    out = tmp_path / "v"
    code = main(["verify", "--bundled", "three_class", "--theorem", "error-bounds", "--trials", "1000",
                 "--seed", "0", "--out", str(out)])
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["passed"] and rep["bound_total"] == pytest.approx(0.1)
    assert "PASS" in capsys.readouterr().out


def test_verify_failure_exit_code(tmp_path):
    # at a = 0.5 every run stops after the first edge, far from the asymptotic ratio
    code = main(["verify", "--bundled", "ab_pair", "--theorem", "asymptotic", "--a-grid", "0.5",
                 "--trials", "200", "--seed", "0", "--out", str(tmp_path / "v")])
    assert code == 3
    rep = json.loads((tmp_path / "v" / "report.json").read_text())
    assert rep["mean_stop"] == [1.0] and not rep["passed"]


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for cmd in ("generate", "fit", "run", "sweep", "verify"):
        assert cmd in out
