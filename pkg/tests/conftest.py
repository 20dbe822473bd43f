"""Shared scenario builders for the test suite."""

from __future__ import annotations

import copy

import numpy as np
import pytest

from hinfdetect.io import scenario_from_dict
from hinfdetect.model import validate_scenario

I2 = [[1.0, 0.0], [0.0, 1.0]]


def ring3_dict(
    *,
    attack: bool = True,
    noise_seed: int | None = None,
    noise_amp: float = 0.2,
    horizon: float = 40.0,
    step: float = 0.01,
    gamma: float = 5.0,
    D: float = 0.1,
) -> dict:
    """Three observers on the ring 1 -> 2 -> 3 -> 1 watching a time-varying oscillator.

    Node 1 carries a bias attack of size 1 from t = 5 s when ``attack`` is set.
    With ``noise_seed`` every disturbance channel is windowed noise.
    """

    def noise(k):
        if noise_seed is None:
            return {"kind": "zero"}
        return {"kind": "windowed_noise", "amplitude": noise_amp, "window": 10.0, "seed": 1000 * noise_seed + k}

    def node(C, xi, k):
        return {
            "C": C,
            "D": D,
            "tracker": {"beta": 1.0, "g": 1.0, "F": [[1.0], [0.0]]},
            "weights": {"R": 1.5, "R_check": 1.1},
            "xi": xi,
            "v": noise(k),
        }

    nodes = [
        node(I2, [0.5, -0.5], 1),
        node([[0.0, 1.0], [1.0, 1.0]], [-0.5, 0.3], 2),
        node([[1.0, 1.0]], [0.2, 0.4], 3),
    ]
    if attack:
        nodes[0]["attack"] = {"kind": "bias_step", "amplitude": 1.0, "onset": 5.0, "decay": 2.0}
    edges = [
        {"from": a, "to": b, "W": I2, "H": [[0.1, 0.0], [0.0, 0.1]], "Z": 100.0, "v": noise(10 + k)}
        for k, (a, b) in enumerate([(1, 2), (2, 3), (3, 1)])
    ]
    return {
        "plant": {
            "n": 2,
            "m": 1,
            "A": [[0.0, 1.0], [{"sin": {"c0": -1.0, "terms": [{"a": 0.2, "w": 0.5, "phi": 0.0}]}}, -0.5]],
            "B": [[0.0], [1.0]],
            "x0": [1.0, 0.0],
            "w": noise(0),
        },
        "nodes": nodes,
        "edges": edges,
        "design": {"gamma": gamma},
        "sim": {"horizon": horizon, "step": step, "seed": 1},
    }


def scalar_dict(**sim) -> dict:
    """One node observing ``x' = w`` directly: the scalar Riccati oracle case."""
    return {
        "plant": {"n": 1, "m": 1, "A": [[0.0]], "B": [[1.0]], "x0": [1.0]},
        "nodes": [
            {
                "C": [[1.0]],
                "D": [[1.0]],
                "tracker": {"beta": 1.0, "g": 1.0, "F": [[1.0]]},
                "weights": {"R": 0.5, "R_check": 2.0},
            }
        ],
        "design": {"gamma": 1.0},
        "sim": {"horizon": 10.0, "step": 0.01, **sim},
    }


def random_network_dict(rng: np.random.Generator, N: int = 3, n: int = 2, horizon: float = 2.0) -> dict:
    """Random small feasible network with seeded noise on every channel."""
    A = rng.normal(size=(n, n)) * 0.5 - np.eye(n)
    edges = []
    for i in range(N):
        for j in range(N):
            if i != j and rng.random() < 0.6:
                edges.append(
                    {
                        "from": j + 1,
                        "to": i + 1,
                        "W": np.eye(n).tolist(),
                        "H": (0.1 * np.eye(n)).tolist(),
                        "Z": 50.0,
                        "v": {"kind": "windowed_noise", "amplitude": 0.1, "window": 1.0, "seed": int(rng.integers(1 << 30))},
                    }
                )
    nodes = []
    for i in range(N):
        nodes.append(
            {
                "C": (np.eye(n) + 0.3 * rng.normal(size=(n, n))).tolist(),
                "D": 0.3,
                "tracker": {"beta": 1.0, "g": 1.0, "F": np.eye(n)[:, :1].tolist()},
                "weights": {"R": 1.2, "R_check": 1.2},
                "xi": rng.normal(size=n).tolist(),
                "v": {"kind": "windowed_noise", "amplitude": 0.1, "window": 1.0, "seed": int(rng.integers(1 << 30))},
            }
        )
    nodes[0]["attack"] = {"kind": "bias_step", "amplitude": 0.5, "onset": 0.5, "decay": 3.0}
    return {
        "plant": {
            "n": n,
            "m": 1,
            "A": A.tolist(),
            "B": rng.normal(size=(n, 1)).tolist(),
            "x0": rng.normal(size=n).tolist(),
            "w": {"kind": "windowed_noise", "amplitude": 0.2, "window": 1.0, "seed": int(rng.integers(1 << 30))},
        },
        "nodes": nodes,
        "edges": edges,
        "design": {"gamma": 2.0},
        "sim": {"horizon": horizon, "step": 0.01, "seed": 3},
    }


def build(d: dict):
    return validate_scenario(scenario_from_dict(copy.deepcopy(d)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
