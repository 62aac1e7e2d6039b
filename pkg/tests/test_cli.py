"""End-to-end checks of the command line front end."""

import csv
import hashlib
import json
import os

import numpy as np
import pytest

from spillover.cli import build_profile, main, parse_profile_spec
from spillover.envelope import concavify, sample_value
from spillover.scenarios import ScenarioFormatError, builtin_scenarios


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_list_examples(capsys):
    assert main(["list-examples"]) == 0
    out = capsys.readouterr().out.splitlines()
    names = [line.split()[0] for line in out]
    assert names == sorted(builtin_scenarios())
    assert all(len(line.split(None, 1)) == 2 for line in out)


def test_parse_profile_spec_forms():
    assert parse_profile_spec("nr_upper") == ("nr_upper", {})
    assert parse_profile_spec("jcl:w=0.75,n=10") == (
        "jcl", {"w": "0.75", "n": "10"})
    assert parse_profile_spec("standard_pair component=a") == (
        "standard_pair", {"component": "a"})
    with pytest.raises(ScenarioFormatError, match="key=value"):
        parse_profile_spec("jcl:w")
    with pytest.raises(ScenarioFormatError, match="empty"):
        parse_profile_spec("  ")


def test_build_profile_rejects_unknown():
    sc = builtin_scenarios()["example1"]
    with pytest.raises(ScenarioFormatError, match="unknown profile"):
        build_profile(sc, "mystery")
    with pytest.raises(ScenarioFormatError,
                       match="unknown standard_pair parameters"):
        build_profile(sc, "standard_pair:foo=1")
    with pytest.raises(ScenarioFormatError, match="needs w="):
        build_profile(sc, "jcl")


def test_analyze_example1_bundle(tmp_path, capsys):
    code = main(["analyze", "example1", "--grid-res", "0.005",
                 "--out-dir", str(tmp_path), "--format", "json-lines"])
    assert code == 0
    out = capsys.readouterr().out
    assert "payoff interval I(p0): [1.1875, 1.25]" in out

    for name in ("example1_values_a.csv", "example1_values_b.csv",
                 "example1_values_a.gp", "example1_values_b.gp",
                 "example1_analysis.txt", "example1_analysis.jsonl"):
        assert (tmp_path / name).exists()

    # the values CSV must re-parse into the grid actually used
    env_b = concavify(sample_value(builtin_scenarios()["example1"].family_b,
                                   resolution=0.005))
    header, rows = read_csv(tmp_path / "example1_values_b.csv")
    assert header[-2:] == ["value", "cav_value"]
    assert len(rows) == env_b.grid.n_points
    parsed = np.array([[float(x) for x in row] for row in rows])
    assert np.allclose(parsed[:, -2], env_b.grid.values,
                       rtol=1e-12, atol=1e-12)
    assert np.allclose(parsed[:, -1], env_b.eval_batch(env_b.grid.points),
                       rtol=1e-12, atol=1e-12)

    with open(tmp_path / "example1_analysis.jsonl") as fh:
        records = [json.loads(line) for line in fh]
    kinds = {r["kind"] for r in records}
    assert {"scenario", "values", "interval"} <= kinds
    interval = next(r for r in records if r["kind"] == "interval")
    assert abs(interval["lower"] - 19.0 / 16.0) < 1e-4
    assert abs(interval["upper"] - 1.25) < 1e-4


def test_analyze_respects_env_out_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SPILLOVER_OUT_DIR", str(tmp_path / "bundle"))
    assert main(["analyze", "attainable", "--grid-res", "0.01"]) == 0
    capsys.readouterr()
    assert (tmp_path / "bundle" / "attainable_analysis.txt").exists()


def test_analyze_rejects_malformed_file(tmp_path, capsys):
    data = json.loads(
        __import__("spillover.scenarios", fromlist=["dumps_scenario"])
        .dumps_scenario(builtin_scenarios()["example1"]))
    data["prior"] = [[0.5, 0.0], [0.0, -0.5]]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    code = main(["analyze", str(bad), "--out-dir", str(tmp_path)])
    err = capsys.readouterr().err
    assert code == 2
    assert "$.prior[1][1]" in err


def test_unknown_scenario_name(capsys):
    assert main(["analyze", "no_such_example"]) == 2
    assert "built-ins" in capsys.readouterr().err


def test_simulate_nonattainable_is_inconclusive(tmp_path, capsys):
    code = main(["simulate", "nonattainable", "--profile", "nr_upper",
                 "--horizon", "50", "--n-seeds", "2",
                 "--out-dir", str(tmp_path)])
    assert code == 3
    assert "NR payoff set of family A is empty" in capsys.readouterr().out


def bundle_digest(root):
    digest = {}
    for name in sorted(os.listdir(root)):
        with open(os.path.join(root, name), "rb") as fh:
            digest[name] = hashlib.sha256(fh.read()).hexdigest()
    return digest


def test_simulate_bundle_is_deterministic(tmp_path, capsys):
    args = ["simulate", "example1", "--profile", "nr_upper",
            "--horizon", "200", "--n-seeds", "3", "--seed", "11",
            "--grid-res", "0.01", "--format", "json-lines"]
    d1, d2 = tmp_path / "run1", tmp_path / "run2"
    assert main(args + ["--out-dir", str(d1)]) == 0
    assert main(args + ["--out-dir", str(d2)]) == 0
    capsys.readouterr()
    h1, h2 = bundle_digest(d1), bundle_digest(d2)
    assert h1 == h2
    assert any(name.endswith("_ensemble.csv") for name in h1)
    assert any(name.endswith("_epsilon.csv") for name in h1)
    assert any(name.endswith("_report.jsonl") for name in h1)


def test_simulate_report_contents(tmp_path, capsys):
    code = main(["simulate", "example1", "--profile", "standard_pair",
                 "--horizon", "400", "--n-seeds", "4", "--seed", "5",
                 "--grid-res", "0.01", "--out-dir", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "declared ex-ante payoff: 1.1875" in out
    assert "deviation battery" in out
    header, rows = read_csv(tmp_path / "example1_standard_pair_ensemble.csv")
    assert header == ["seed", "state_a", "state_b", "avg_payoff_a",
                      "avg_payoff_b", "avg_total"]
    assert len(rows) == 4
    seeds = [int(r[0]) for r in rows]
    assert seeds == [5, 6, 7, 8]


def test_reproduce_attainable(tmp_path, capsys):
    code = main(["reproduce", "attainable", "--out-dir", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "reproduction checklist: attainable" in out
    assert "PASS" in out and "FAIL" not in out
    assert (tmp_path / "attainable_reproduce.txt").exists()
