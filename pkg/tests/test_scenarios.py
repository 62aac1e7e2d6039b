"""Scenario JSON round-trips and validation error paths."""

import io
import json

import numpy as np
import pytest

from spillover.scenarios import (
    ScenarioFormatError,
    builtin_scenarios,
    dumps_scenario,
    load_scenario,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
)

BUILTIN_NAMES = ["example1", "attainable", "nonattainable", "section4",
                 "remark_eps"]


def ex1_dict():
    """A fresh, mutable dict form of the example1 scenario."""
    return json.loads(dumps_scenario(builtin_scenarios()["example1"]))


def set_path(data, keys, value):
    node = data
    for k in keys[:-1]:
        node = node[k]
    node[keys[-1]] = value


def test_builtin_catalog():
    cat = builtin_scenarios()
    assert sorted(cat) == sorted(BUILTIN_NAMES)
    for name, sc in cat.items():
        assert sc.name == name
        assert sc.description != ""
        assert np.isclose(sc.prior.sum(), 1.0)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_roundtrip_is_idempotent(name):
    sc = builtin_scenarios()[name]
    text = dumps_scenario(sc)
    again = load_scenario(io.StringIO(text))
    assert dumps_scenario(again) == text
    assert np.array_equal(again.prior, sc.prior)
    assert again.family_b.cols == sc.family_b.cols


def test_roundtrip_through_file(tmp_path):
    sc = builtin_scenarios()["section4"]
    path = tmp_path / "section4.json"
    save_scenario(sc, path)
    again = load_scenario(path)
    assert dumps_scenario(again) == dumps_scenario(sc)


def test_load_accepts_dict():
    sc = load_scenario(ex1_dict())
    assert sc.name == "example1"
    assert sc.family_a.n_states == 2


def test_options_roundtrip():
    data = ex1_dict()
    data["options"] = {"grid_res": 0.002, "tol": 1e-7,
                       "t_list": [100, 1000], "seeds": [3, 5]}
    sc = scenario_from_dict(data)
    assert sc.options["grid_res"] == 0.002
    assert sc.options["t_list"] == [100, 1000]
    assert sc.options["seeds"] == [3, 5]
    text = dumps_scenario(sc)
    assert dumps_scenario(load_scenario(io.StringIO(text))) == text


def test_scalar_seed_option():
    data = ex1_dict()
    data["options"] = {"seeds": 17}
    sc = scenario_from_dict(data)
    assert sc.options["seeds"] == 17


def test_empty_options_not_serialized():
    data = scenario_to_dict(builtin_scenarios()["example1"])
    assert "options" not in data
    data2 = ex1_dict()
    data2["options"] = {}
    assert "options" not in scenario_to_dict(scenario_from_dict(data2))


def checked(mutate, path, message):
    return pytest.param(mutate, path, message, id=path)


BAD_CASES = [
    checked(lambda d: d.pop("family_a"),
            "$.family_a", "missing field"),
    checked(lambda d: d.pop("name"),
            "$.name", "missing field"),
    checked(lambda d: set_path(d, ["name"], ""),
            "$.name", "must be a nonempty string"),
    checked(lambda d: d["family_b"].pop("matrices"),
            "$.family_b.matrices", "missing field"),
    checked(lambda d: set_path(d, ["family_a", "states"], ["1", "1"]),
            "$.family_a.states", "labels must be distinct"),
    checked(lambda d: set_path(d, ["family_a", "rows", 0], ""),
            "$.family_a.rows[0]", "labels must be nonempty strings"),
    checked(lambda d: set_path(d, ["family_a", "matrices"],
                               d["family_a"]["matrices"][:1]),
            "$.family_a.matrices", "expected 2 state matrices, got 1"),
    checked(lambda d: set_path(d, ["family_b", "matrices", 1, 1, 1], "big"),
            "$.family_b.matrices[1][1][1]", "entries must be numbers"),
    checked(lambda d: set_path(d, ["family_b", "matrices", 0, 0, 2],
                               float("inf")),
            "$.family_b.matrices[0][0][2]", "entries must be finite"),
    checked(lambda d: set_path(d, ["family_a", "matrices", 0, 0, 0], True),
            "$.family_a.matrices[0][0][0]", "entries must be numbers"),
    checked(lambda d: set_path(d, ["prior"], [[0.5, 0.5]]),
            "$.prior", "expected 2 rows"),
    checked(lambda d: set_path(d, ["prior", 0], [0.5]),
            "$.prior[0]", "expected 2 entries"),
    checked(lambda d: set_path(d, ["prior", 0, 1], "half"),
            "$.prior[0][1]", "entries must be finite numbers"),
    checked(lambda d: set_path(d, ["prior", 0, 0], float("nan")),
            "$.prior[0][0]", "entries must be finite numbers"),
    checked(lambda d: set_path(d, ["prior"], [[0.7, 0.0], [0.0, -0.2]]),
            "$.prior[1][1]", "probabilities must be nonnegative"),
    checked(lambda d: set_path(d, ["prior"], [[0.5, 0.0], [0.0, 0.4]]),
            "$.prior", "entries sum to"),
    checked(lambda d: set_path(d, ["options"], {"grid_res": 0}),
            "$.options.grid_res", "must be a positive number"),
    checked(lambda d: set_path(d, ["options"], {"tol": "tight"}),
            "$.options.tol", "must be a positive number"),
    checked(lambda d: set_path(d, ["options"], {"t_list": []}),
            "$.options.t_list", "must be a nonempty list"),
    checked(lambda d: set_path(d, ["options"], {"t_list": [100, 0]}),
            "$.options.t_list[1]", "horizons must be positive integers"),
    checked(lambda d: set_path(d, ["options"], {"seeds": "abc"}),
            "$.options.seeds", "must be an integer or list of integers"),
    checked(lambda d: set_path(d, ["options"], {"mystery": 1}),
            "$.options.mystery", "unknown option"),
]


@pytest.mark.parametrize("mutate,path,message", BAD_CASES)
def test_validation_errors(mutate, path, message):
    data = ex1_dict()
    mutate(data)
    with pytest.raises(ScenarioFormatError) as exc:
        scenario_from_dict(data)
    text = str(exc.value)
    assert text.startswith(path + ":")
    assert message in text


def test_prior_renormalization_warns():
    data = ex1_dict()
    set_path(data, ["prior"], [[0.5, 0.0], [0.0, 0.5 + 4e-10]])
    with pytest.warns(UserWarning, match="renormalizing"):
        sc = scenario_from_dict(data)
    assert abs(sc.prior.sum() - 1.0) < 1e-15


def test_invalid_json_stream():
    with pytest.raises(ScenarioFormatError, match="not valid JSON"):
        load_scenario(io.StringIO("{oops"))


def test_non_object_payload():
    with pytest.raises(ScenarioFormatError, match="expected a JSON object"):
        load_scenario(io.StringIO("[1, 2, 3]"))
