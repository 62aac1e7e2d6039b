import numpy as np
import pytest

from spillover.envelope import concavify, sample_value
from spillover.scenarios import builtin_scenarios


@pytest.fixture(scope="session")
def examples():
    return builtin_scenarios()


@pytest.fixture(scope="session")
def ex1(examples):
    return examples["example1"]


@pytest.fixture(scope="session")
def ex1_envelopes(ex1):
    env_a = concavify(sample_value(ex1.family_a))
    env_b = concavify(sample_value(ex1.family_b))
    return env_a, env_b


def random_family(rng, n_states=2, shape=(2, 2), lo=-2.0, hi=2.0):
    mats = rng.uniform(lo, hi, size=(n_states,) + shape)
    states = tuple(str(k + 1) for k in range(n_states))
    rows = tuple(f"r{i}" for i in range(shape[0]))
    cols = tuple(f"c{j}" for j in range(shape[1]))
    from spillover.games import GameFamily
    return GameFamily(states=states, rows=rows, cols=cols, matrices=mats)
