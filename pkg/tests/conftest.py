import copy
import os
import sys

import pytest

# Add src to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.config import DEFAULT_SCENARIO, load_config, parse_config


def scenario_dict(**sections):
    """paper-default as a dict with whole sections (or keys inside them) replaced."""
    data = copy.deepcopy(DEFAULT_SCENARIO)
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key].update(value)
        else:
            data[key] = value
    return data


def small_config(particles=300, steps=8, runs=2, **sections):
    """A fast variant of the default scenario for end-to-end tests."""
    sections.setdefault("smc", {})
    sections["smc"] = dict(sections["smc"], particles=particles)
    sections.setdefault("truth", {})
    sections["truth"] = dict(sections["truth"], steps=steps)
    sections.setdefault("runs", {})
    sections["runs"] = dict(sections["runs"], n_runs=runs)
    return parse_config(scenario_dict(**sections))


@pytest.fixture(scope="module")
def default_config():
    return load_config("paper-default")


@pytest.fixture
def smoke_config():
    """No clutter, certain detection, birth centred on the true initial state."""
    x1 = DEFAULT_SCENARIO["truth"]["x1"]
    sensors = [
        {"sigma": 2.5, "lambda": 0.0, "d0": 0.4, "d1": 1.0, "beta_true": 1e12}
        for _ in DEFAULT_SCENARIO["geometry"]["receivers"]
    ]
    birth = {
        "mean": list(x1),
        "covariance": [
            [200.0 ** 2, 0.0, 0.0, 0.0],
            [0.0, 5.0 ** 2, 0.0, 0.0],
            [0.0, 0.0, 200.0 ** 2, 0.0],
            [0.0, 0.0, 0.0, 5.0 ** 2],
        ],
    }
    return small_config(particles=2000, steps=20, runs=1, sensors=sensors, birth=birth)
