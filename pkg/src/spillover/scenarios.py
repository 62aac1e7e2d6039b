"""Scenario files and the built-in example catalogue.

A scenario file is one self-describing JSON document holding both
families and the joint prior.  Serialization is canonical (sorted keys,
two-space indent, trailing newline) so saving a loaded file reproduces
it byte for byte.
"""

from __future__ import annotations

import json
import math
import warnings

import numpy as np

from .games import GameError, GameFamily
from .analysis import JointScenario


class ScenarioFormatError(GameError):
    pass


_PRIOR_RENORM_TOL = 1e-9


def _require(cond, path, message):
    if not cond:
        raise ScenarioFormatError(f"{path}: {message}")


def _check_labels(value, path):
    _require(isinstance(value, (list, tuple)), path, "expected a list")
    _require(len(value) > 0, path, "must not be empty")
    for i, s in enumerate(value):
        _require(isinstance(s, str) and s != "", f"{path}[{i}]",
                 "labels must be nonempty strings")
    _require(len(set(value)) == len(value), path, "labels must be distinct")
    return tuple(value)


def _check_matrices(value, n_states, n_rows, n_cols, path):
    _require(isinstance(value, (list, tuple)), path, "expected a list")
    _require(len(value) == n_states, path,
             f"expected {n_states} state matrices, got {len(value)}")
    out = np.empty((n_states, n_rows, n_cols))
    for k, mat in enumerate(value):
        _require(isinstance(mat, (list, tuple)) and len(mat) == n_rows,
                 f"{path}[{k}]", f"expected {n_rows} rows")
        for i, row in enumerate(mat):
            _require(isinstance(row, (list, tuple)) and len(row) == n_cols,
                     f"{path}[{k}][{i}]", f"expected {n_cols} entries")
            for j, x in enumerate(row):
                _require(isinstance(x, (int, float))
                         and not isinstance(x, bool),
                         f"{path}[{k}][{i}][{j}]", "entries must be numbers")
                _require(math.isfinite(x), f"{path}[{k}][{i}][{j}]",
                         "entries must be finite")
                out[k, i, j] = float(x)
    return out


def _family_from_dict(data, path):
    _require(isinstance(data, dict), path, "expected an object")
    for key in ("states", "rows", "cols", "matrices"):
        _require(key in data, f"{path}.{key}", "missing field")
    states = _check_labels(data["states"], f"{path}.states")
    rows = _check_labels(data["rows"], f"{path}.rows")
    cols = _check_labels(data["cols"], f"{path}.cols")
    matrices = _check_matrices(data["matrices"], len(states), len(rows),
                               len(cols), f"{path}.matrices")
    return GameFamily(states=states, rows=rows, cols=cols, matrices=matrices)


def scenario_from_dict(data):
    _require(isinstance(data, dict), "$", "expected a JSON object")
    for key in ("name", "family_a", "family_b", "prior"):
        _require(key in data, f"$.{key}", "missing field")
    _require(isinstance(data["name"], str) and data["name"] != "",
             "$.name", "must be a nonempty string")
    fam_a = _family_from_dict(data["family_a"], "$.family_a")
    fam_b = _family_from_dict(data["family_b"], "$.family_b")
    prior_raw = data["prior"]
    ka, kb = fam_a.n_states, fam_b.n_states
    _require(isinstance(prior_raw, (list, tuple)) and len(prior_raw) == ka,
             "$.prior", f"expected {ka} rows")
    prior = np.empty((ka, kb))
    for i, row in enumerate(prior_raw):
        _require(isinstance(row, (list, tuple)) and len(row) == kb,
                 f"$.prior[{i}]", f"expected {kb} entries")
        for j, x in enumerate(row):
            _require(isinstance(x, (int, float)) and not isinstance(x, bool)
                     and math.isfinite(x), f"$.prior[{i}][{j}]",
                     "entries must be finite numbers")
            _require(x >= 0.0, f"$.prior[{i}][{j}]",
                     "probabilities must be nonnegative")
            prior[i, j] = float(x)
    total = prior.sum()
    if abs(total - 1.0) > _PRIOR_RENORM_TOL:
        raise ScenarioFormatError(
            f"$.prior: entries sum to {total!r}, not 1")
    if total != 1.0:
        warnings.warn(f"prior sum {total!r} off by {total - 1.0:.3e}, "
                      "renormalizing", stacklevel=2)
        prior = prior / total
    description = data.get("description", "")
    _require(isinstance(description, str), "$.description",
             "must be a string")
    options = _check_options(data.get("options", {}))
    return JointScenario(name=data["name"], family_a=fam_a, family_b=fam_b,
                         prior=prior, description=description,
                         options=options)


def _check_options(value):
    _require(isinstance(value, dict), "$.options", "expected an object")
    out = {}
    for key, val in value.items():
        path = f"$.options.{key}"
        if key in ("grid_res", "tol"):
            _require(isinstance(val, (int, float))
                     and not isinstance(val, bool) and math.isfinite(val)
                     and val > 0, path, "must be a positive number")
            out[key] = float(val)
        elif key == "t_list":
            _require(isinstance(val, (list, tuple)) and len(val) > 0,
                     path, "must be a nonempty list")
            for i, t in enumerate(val):
                _require(isinstance(t, int) and not isinstance(t, bool)
                         and t > 0, f"{path}[{i}]",
                         "horizons must be positive integers")
            out[key] = [int(t) for t in val]
        elif key == "seeds":
            ok = isinstance(val, int) and not isinstance(val, bool)
            if isinstance(val, (list, tuple)):
                ok = len(val) > 0 and all(
                    isinstance(s, int) and not isinstance(s, bool)
                    for s in val)
            _require(ok, path, "must be an integer or list of integers")
            out[key] = val if isinstance(val, int) else [int(s) for s in val]
        else:
            raise ScenarioFormatError(f"{path}: unknown option")
    return out


def scenario_to_dict(scenario):
    def fam(f):
        return {
            "states": list(f.states),
            "rows": list(f.rows),
            "cols": list(f.cols),
            "matrices": [[[float(x) for x in row] for row in mat]
                         for mat in f.matrices],
        }

    out = {
        "name": scenario.name,
        "description": scenario.description,
        "family_a": fam(scenario.family_a),
        "family_b": fam(scenario.family_b),
        "prior": [[float(x) for x in row] for row in scenario.prior],
    }
    if scenario.options:
        out["options"] = scenario.options
    return out


def dumps_scenario(scenario):
    return json.dumps(scenario_to_dict(scenario), sort_keys=True,
                      indent=2) + "\n"


def save_scenario(scenario, path):
    with open(path, "w") as f:
        f.write(dumps_scenario(scenario))


def load_scenario(source):
    """Load a scenario from a path, an open handle, or a dict."""
    if isinstance(source, dict):
        return scenario_from_dict(source)
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source) as f:
            text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"not valid JSON: {exc}") from exc
    return scenario_from_dict(data)


def _trivial_family():
    return GameFamily(states=("0",), rows=("*",), cols=("*",),
                      matrices=[[[0.0]]])


def builtin_scenarios():
    """The worked examples shipped with the package, keyed by name."""
    ex1 = JointScenario(
        name="example1",
        description="Both component games locally non-revealing at 1/2; "
                    "the interval is [19/16, 5/4].",
        family_a=GameFamily(
            states=("1", "2"), rows=("T", "B"), cols=("L", "R"),
            matrices=[[[1.0, 0.0], [0.0, 0.0]],
                      [[0.0, 0.0], [0.0, 1.0]]]),
        family_b=GameFamily(
            states=("1", "2"), rows=("T", "B"), cols=("l", "m", "r"),
            matrices=[[[4.0, 0.0, 2.0], [4.0, 0.0, -2.0]],
                      [[0.0, 4.0, -2.0], [0.0, 4.0, 2.0]]]),
        prior=np.diag([0.5, 0.5]),
    )
    attainable = JointScenario(
        name="attainable",
        description="Convex non-revealing value; the certificate lives at "
                    "a vertex even though no local split exists at 1/2.",
        family_a=GameFamily(
            states=("1", "2"), rows=("T", "B"), cols=("L", "R"),
            matrices=[[[0.0, 0.0], [0.0, -1.0]],
                      [[-1.0, 0.0], [0.0, 0.0]]]),
        family_b=_trivial_family(),
        prior=np.array([[0.5], [0.5]]),
    )
    nonattainable = JointScenario(
        name="nonattainable",
        description="Fully revealing value function; no non-revealing "
                    "payoff vector exists at the half-half prior.",
        family_a=GameFamily(
            states=("1", "2"), rows=("T", "B"), cols=("L", "R"),
            matrices=[[[1.0, 1.0], [-1.0, -1.0]],
                      [[-1.0, -1.0], [1.0, 1.0]]]),
        family_b=_trivial_family(),
        prior=np.array([[0.5], [0.5]]),
    )
    section4 = JointScenario(
        name="section4",
        description="Spillover constrains the A-game: only the lower end "
                    "of the interval is an equilibrium payoff.",
        family_a=GameFamily(
            states=("1", "2"), rows=("T", "B"), cols=("L", "R"),
            matrices=[[[1.0, 1.0], [-1.0, -1.0]],
                      [[-1.0, -1.0], [1.0, 1.0]]]),
        family_b=GameFamily(
            states=("1", "2"), rows=("T", "B"), cols=("L", "R"),
            matrices=[[[1.0, 0.0], [0.0, 0.0]],
                      [[0.0, 0.0], [0.0, 1.0]]]),
        prior=np.diag([0.5, 0.5]),
    )
    remark_eps = JointScenario(
        name="remark_eps",
        description="Small-stakes B-family whose non-revealing payoffs "
                    "tilt the joint feasibility at an asymmetric prior.",
        family_a=GameFamily(
            states=("1", "2"), rows=("T", "B"), cols=("L", "R"),
            matrices=[[[1.0, 0.0], [0.0, 0.0]],
                      [[0.0, 0.0], [0.0, 1.0]]]),
        family_b=GameFamily(
            states=("1", "2"), rows=("T", "B"), cols=("L", "R"),
            matrices=[[[-0.05, -0.05], [0.05, 0.05]],
                      [[0.05, 0.05], [-0.05, -0.05]]]),
        prior=np.diag([0.2, 0.8]),
    )
    return {s.name: s for s in
            (ex1, attainable, nonattainable, section4, remark_eps)}
