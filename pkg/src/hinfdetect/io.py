"""Scenario files, gain and trajectory CSVs.

Scenario files are YAML (JSON is accepted as a subset).  Matrices are
row-major lists of rows; an entry is a number or one of the tagged forms
``{const: c}``, ``{sin: {c0, terms: [{a, w, phi}]}}`` and
``{pwc: {breaks, values}}``.  Weight matrices may also be given as a single
number ``c`` meaning ``c * I``.  Node and edge references are 1-based.
"""

from __future__ import annotations

import csv
import json
from collections.abc import Callable
from dataclasses import fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import ConfigError, ParameterError, ScenarioSyntaxError, SchemaError
from .model import (
    BaselineGains,
    DesignSettings,
    DesignWeights,
    LinkModel,
    NodeConfig,
    PlantModel,
    ScenarioConfig,
    SensorModel,
    SimSettings,
    TimeMatrix,
    build_tracker,
)
from .runtime import SimResult
from .signals import SignalSpec
from .synthesis import GainSchedule

_REQUIRED = object()


class _Section:
    """Mapping reader that tracks its key path and rejects unknown keys."""

    def __init__(self, data: Any, path: str) -> None:
        if not isinstance(data, dict):
            raise SchemaError(path or "<root>", f"expected a mapping, got {type(data).__name__}")
        self.data = dict(data)
        self.path = path

    def sub(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else str(key)

    def take(self, key: str, conv: Callable[[Any, str], Any], default: Any = _REQUIRED) -> Any:
        if key not in self.data:
            if default is _REQUIRED:
                raise SchemaError(self.sub(key), "missing required key")
            return default
        value = self.data.pop(key)
        if value is None and default is not _REQUIRED:
            return default
        return conv(value, self.sub(key))

    def done(self) -> None:
        if self.data:
            key = sorted(map(str, self.data))[0]
            raise SchemaError(self.sub(key), "unknown key")


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(path, f"expected a number, got {value!r}")
    return float(value)


def _int(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(path, f"expected an integer, got {value!r}")
    return int(value)


def _str(value: Any, path: str) -> str:
    if not isinstance(value, str):
        raise SchemaError(path, f"expected a string, got {value!r}")
    return value


def _vector(value: Any, path: str) -> np.ndarray:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, list):
        raise SchemaError(path, "expected a list of numbers")
    return np.array([_number(v, f"{path}[{k}]") for k, v in enumerate(value)], dtype=float)


def _rows(value: Any, path: str) -> list[list]:
    if not isinstance(value, list) or not value:
        raise SchemaError(path, "expected a non-empty list of rows")
    rows = []
    for r, row in enumerate(value):
        if not isinstance(row, list) or not row:
            raise SchemaError(f"{path}[{r}]", "expected a non-empty row list")
        rows.append(row)
    width = len(rows[0])
    for r, row in enumerate(rows):
        if len(row) != width:
            raise SchemaError(path, f"row {r} has {len(row)} entries, row 0 has {width}")
    return rows


def _matrix(value: Any, path: str) -> np.ndarray:
    rows = _rows(value, path)
    return np.array([[_number(v, f"{path}[{r}][{c}]") for c, v in enumerate(row)] for r, row in enumerate(rows)])


def _square_or_scalar(dim: int) -> Callable[[Any, str], np.ndarray]:
    def conv(value: Any, path: str) -> np.ndarray:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value) * np.eye(dim)
        return _matrix(value, path)

    return conv


def _entry(value: Any, path: str) -> tuple:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return ("const", float(value))
    if not isinstance(value, dict) or len(value) != 1:
        raise SchemaError(path, "entry must be a number or one of {const|sin|pwc: ...}")
    (tag, body), = value.items()
    if tag == "const":
        return ("const", _number(body, f"{path}.const"))
    if tag == "sin":
        sec = _Section(body, f"{path}.sin")
        c0 = sec.take("c0", _number, 0.0)
        terms_raw = sec.take("terms", lambda v, p: v if isinstance(v, list) else _fail(p, "expected a list"), [])
        sec.done()
        terms = []
        for k, t in enumerate(terms_raw):
            ts = _Section(t, f"{path}.sin.terms[{k}]")
            terms.append((ts.take("a", _number), ts.take("w", _number), ts.take("phi", _number, 0.0)))
            ts.done()
        return ("sin", c0, tuple(terms))
    if tag == "pwc":
        sec = _Section(body, f"{path}.pwc")
        breaks = tuple(sec.take("breaks", _vector).tolist())
        values = tuple(sec.take("values", _vector).tolist())
        sec.done()
        if len(values) != len(breaks) + 1:
            raise SchemaError(path, "pwc needs len(values) == len(breaks) + 1")
        if any(b1 <= b0 for b0, b1 in zip(breaks, breaks[1:])):
            raise SchemaError(path, "pwc breaks must be strictly increasing")
        return ("pwc", breaks, values)
    raise SchemaError(path, f"unknown entry tag {tag!r}")


def _fail(path: str, msg: str):
    raise SchemaError(path, msg)


def _time_matrix(value: Any, path: str) -> TimeMatrix:
    rows = _rows(value, path)
    return TimeMatrix([[_entry(v, f"{path}[{r}][{c}]") for c, v in enumerate(row)] for r, row in enumerate(rows)])


def _scalar_or_time_matrix(dim: int) -> Callable[[Any, str], TimeMatrix]:
    """A bare number ``c`` stands for ``c * I`` of size ``dim``."""

    def conv(value: Any, path: str) -> TimeMatrix:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return TimeMatrix.constant(float(value) * np.eye(dim))
        return _time_matrix(value, path)

    return conv


def _signal(dim: int) -> Callable[[Any, str], SignalSpec]:
    def conv(value: Any, path: str) -> SignalSpec:
        sec = _Section(value, path)
        kw: dict[str, Any] = {"dim": dim, "kind": sec.take("kind", _str)}
        amp = sec.take("amplitude", _vector, None)
        if amp is not None:
            kw["amplitude"] = tuple(amp.tolist())
        for key in ("frequency", "onset", "phase", "bucket"):
            val = sec.take(key, _number, None)
            if val is not None:
                kw[key] = val
        for key in ("decay", "window"):
            kw[key] = sec.take(key, _number, None)
        kw["seed"] = sec.take("seed", _int, None)
        sec.done()
        try:
            return SignalSpec(**kw)
        except ConfigError as exc:
            raise SchemaError(path, str(exc)) from exc

    return conv


def _node_ref(N: int) -> Callable[[Any, str], int]:
    def conv(value: Any, path: str) -> int:
        k = _int(value, path)
        if not 1 <= k <= N:
            raise SchemaError(path, f"node {k} out of range 1..{N}")
        return k - 1

    return conv


def scenario_from_dict(data: Any) -> ScenarioConfig:
    """Build a ``ScenarioConfig`` from parsed file content, applying defaults."""
    root = _Section(data, "")
    psec = _Section(root.take("plant", lambda v, p: v), "plant")
    n = psec.take("n", _int)
    m = psec.take("m", _int)
    if n < 1 or m < 1:
        raise SchemaError("plant", "n and m must be positive")
    A = psec.take("A", _time_matrix)
    B = psec.take("B", _time_matrix)
    x0 = psec.take("x0", _vector, np.zeros(n))
    w = psec.take("w", _signal(m), SignalSpec(dim=m))
    psec.done()

    simsec = _Section(root.take("sim", lambda v, p: v, {}), "sim")
    sim = SimSettings(
        horizon=simsec.take("horizon", _number, SimSettings.horizon),
        step=simsec.take("step", _number, SimSettings.step),
        seed=simsec.take("seed", _int, SimSettings.seed),
        gain_mode=simsec.take("gain_mode", _str, SimSettings.gain_mode),
        threshold=simsec.take("threshold", _number, None),
        dwell=simsec.take("dwell", _number, SimSettings.dwell),
        min_threshold=simsec.take("min_threshold", _number, SimSettings.min_threshold),
    )
    simsec.done()

    dsec = _Section(root.take("design", lambda v, p: v, {}), "design")
    design = DesignSettings(
        gamma=dsec.take("gamma", _number, DesignSettings.gamma),
        riccati_step=dsec.take("riccati_step", _number, None),
        alpha_min=dsec.take("alpha_min", _number, DesignSettings.alpha_min),
        alpha_max=dsec.take("alpha_max", _number, DesignSettings.alpha_max),
    )
    dsec.done()

    raw_nodes = root.take("nodes", lambda v, p: v if isinstance(v, list) and v else _fail(p, "expected a non-empty list"))
    N = len(raw_nodes)
    raw_edges = root.take("edges", lambda v, p: v if isinstance(v, list) else _fail(p, "expected a list"), [])
    root.done()

    edges = []
    for k, raw in enumerate(raw_edges):
        path = f"edges[{k}]"
        es = _Section(raw, path)
        src = es.take("from", _node_ref(N))
        dst = es.take("to", _node_ref(N))
        W = es.take("W", _matrix)
        p = W.shape[0]
        H = es.take("H", _matrix, np.zeros((p, 1)))
        Z = es.take("Z", _square_or_scalar(p), np.eye(p))
        v = es.take("v", _signal(H.shape[1]), SignalSpec(dim=H.shape[1]))
        es.done()
        edges.append(LinkModel(src, dst, W, H, Z, v))

    nodes = []
    for i, raw in enumerate(raw_nodes):
        path = f"nodes[{i}]"
        ns = _Section(raw, path)
        C = ns.take("C", _time_matrix)
        D = ns.take("D", _scalar_or_time_matrix(C.shape[0]))
        ts = _Section(ns.take("tracker", lambda v, p: v), f"{path}.tracker")
        n_f = ts.take("n_f", _int, 1)
        beta = ts.take("beta", _number)
        g = ts.take("g", _number)
        F = ts.take("F", _matrix)
        ts.done()
        try:
            tracker = build_tracker(beta, g, n_f, F)
        except ParameterError as exc:
            raise SchemaError(f"{path}.tracker", str(exc)) from exc
        dflt = DesignWeights.default(n, n_f)
        ws = _Section(ns.take("weights", lambda v, p: v, {}), f"{path}.weights")
        weights = DesignWeights(
            R=ws.take("R", _square_or_scalar(n), dflt.R),
            R_check=ws.take("R_check", _square_or_scalar(2 * n_f), dflt.R_check),
            X=ws.take("X", _square_or_scalar(n), dflt.X),
            X_check=ws.take("X_check", _square_or_scalar(2 * n_f), dflt.X_check),
        )
        ws.done()
        xi = ns.take("xi", _vector, np.zeros(n))
        v = ns.take("v", _signal(D.shape[1]), SignalSpec(dim=D.shape[1]))
        attack = ns.take("attack", _signal(n_f), None)
        gains = ns.take("gains", _gains(N), None)
        ns.done()
        nodes.append(NodeConfig(SensorModel(C, D), tracker, weights, xi, v, attack, gains))

    plant = PlantModel(n=n, m=m, A=A, B=B, horizon=sim.horizon, x0=x0, w=w)
    return ScenarioConfig(plant=plant, nodes=tuple(nodes), edges=tuple(edges), design=design, sim=sim)


def _gains(N: int) -> Callable[[Any, str], BaselineGains]:
    def conv(value: Any, path: str) -> BaselineGains:
        sec = _Section(value, path)
        L = sec.take("L", _matrix)
        raw_K = sec.take("K", lambda v, p: v if isinstance(v, dict) else _fail(p, "expected a mapping"), {})
        sec.done()
        K = {}
        for key, mat in raw_K.items():
            try:
                j = int(key)
            except (TypeError, ValueError):
                raise SchemaError(f"{path}.K.{key}", "keys must be node numbers") from None
            K[_node_ref(N)(j, f"{path}.K.{key}")] = _matrix(mat, f"{path}.K.{key}")
        return BaselineGains(L, K)

    return conv


def parse_scenario(path) -> ScenarioConfig:
    """Read a scenario file.

    Raises ``ScenarioSyntaxError`` (with line number) for malformed text and
    ``SchemaError`` (with key path) for structural problems.
    """
    text = Path(path).read_text(encoding="utf-8")
    return parse_scenario_text(text)


def parse_scenario_text(text: str) -> ScenarioConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ScenarioSyntaxError(str(exc.problem or exc), mark.line + 1 if mark else None) from None
    except yaml.YAMLError as exc:
        raise ScenarioSyntaxError(str(exc)) from None
    return scenario_from_dict(data)


# ---------------------------------------------------------------- serialise


def _entry_to_literal(entry: tuple) -> Any:
    if entry[0] == "const":
        return float(entry[1])
    if entry[0] == "sin":
        return {"sin": {"c0": float(entry[1]), "terms": [{"a": a, "w": w, "phi": phi} for a, w, phi in entry[2]]}}
    return {"pwc": {"breaks": list(entry[1]), "values": list(entry[2])}}


def _tm_to_literal(tm: TimeMatrix) -> list:
    return [[_entry_to_literal(e) for e in row] for row in tm.entries]


def _mat(m: np.ndarray) -> list:
    return [[float(v) for v in row] for row in np.atleast_2d(m)]


def _signal_to_dict(spec: SignalSpec) -> dict:
    out: dict[str, Any] = {"kind": spec.kind, "amplitude": [float(a) for a in spec.amplitude]}
    defaults = SignalSpec()
    for f in fields(SignalSpec):
        if f.name in ("kind", "amplitude", "dim"):
            continue
        val = getattr(spec, f.name)
        if val != getattr(defaults, f.name):
            out[f.name] = val
    return out


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    """Canonical plain-data form; ``scenario_from_dict`` inverts it exactly."""
    pl = cfg.plant
    nodes = []
    for nd in cfg.nodes:
        tr = nd.tracker
        entry: dict[str, Any] = {
            "C": _tm_to_literal(nd.sensor.C),
            "D": _tm_to_literal(nd.sensor.D),
            "tracker": {"beta": tr.beta, "g": tr.g, "n_f": tr.n_f, "F": _mat(tr.F)},
            "weights": {
                "R": _mat(nd.weights.R),
                "R_check": _mat(nd.weights.R_check),
                "X": _mat(nd.weights.X),
                "X_check": _mat(nd.weights.X_check),
            },
            "xi": [float(v) for v in nd.xi],
            "v": _signal_to_dict(nd.v),
        }
        if nd.attack is not None:
            entry["attack"] = _signal_to_dict(nd.attack)
        if nd.gains is not None:
            entry["gains"] = {"L": _mat(nd.gains.L), "K": {j + 1: _mat(K) for j, K in sorted(nd.gains.K.items())}}
        nodes.append(entry)
    edges = [
        {
            "from": e.source + 1,
            "to": e.target + 1,
            "W": _mat(e.W),
            "H": _mat(e.H),
            "Z": _mat(e.Z),
            "v": _signal_to_dict(e.v),
        }
        for e in cfg.edges
    ]
    design = {"gamma": cfg.design.gamma, "alpha_min": cfg.design.alpha_min, "alpha_max": cfg.design.alpha_max}
    if cfg.design.riccati_step is not None:
        design["riccati_step"] = cfg.design.riccati_step
    sim = {
        "horizon": cfg.sim.horizon,
        "step": cfg.sim.step,
        "seed": cfg.sim.seed,
        "gain_mode": cfg.sim.gain_mode,
        "dwell": cfg.sim.dwell,
        "min_threshold": cfg.sim.min_threshold,
    }
    if cfg.sim.threshold is not None:
        sim["threshold"] = cfg.sim.threshold
    return {
        "plant": {
            "n": pl.n,
            "m": pl.m,
            "A": _tm_to_literal(pl.A),
            "B": _tm_to_literal(pl.B),
            "x0": [float(v) for v in pl.x0],
            "w": _signal_to_dict(pl.w),
        },
        "nodes": nodes,
        "edges": edges,
        "design": design,
        "sim": sim,
    }


def dump_scenario(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(scenario_to_dict(cfg), sort_keys=False, default_flow_style=None)


def write_scenario(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(dump_scenario(cfg), encoding="utf-8")


# ---------------------------------------------------------------- CSV / JSON


def _fmt(x: float) -> str:
    return repr(float(x))


def gain_columns(schedule: GainSchedule) -> list[str]:
    rows, cols = schedule.L.shape[1:]
    return ["t"] + [f"L[{r},{c}]" for r in range(rows) for c in range(cols)]


def write_gain_csv(schedule: GainSchedule, path) -> None:
    """One row per grid time: ``t`` then the stacked gain entries row-major."""
    flat = schedule.L.reshape(schedule.L.shape[0], -1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(gain_columns(schedule))
        for t, row in zip(schedule.times, flat):
            w.writerow([_fmt(t), *map(_fmt, row)])


def read_gain_csv(path, *, n: int, n_eps: int, col_sizes, sources) -> GainSchedule:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    rows, cols = n + n_eps, int(sum(col_sizes))
    if data.shape[1] != 1 + rows * cols:
        raise ConfigError(f"{path}: expected {1 + rows * cols} columns, found {data.shape[1]}")
    return GainSchedule(
        times=data[:, 0].copy(),
        L=data[:, 1:].reshape(-1, rows, cols).copy(),
        n=n,
        n_eps=n_eps,
        col_sizes=tuple(col_sizes),
        sources=tuple(sources),
    )


def _vec_cols(prefix: str, arr: np.ndarray) -> list[tuple[str, np.ndarray]]:
    return [(f"{prefix}[{k}]", arr[:, k]) for k in range(arr.shape[1])]


def trajectory_table(result: SimResult) -> list[tuple[str, np.ndarray]]:
    cols: list[tuple[str, np.ndarray]] = [("t", result.times)]
    cols += _vec_cols("plant.x", result.x)
    cols += _vec_cols("plant.w", result.w)
    e = result.e
    for i in range(result.N):
        p = f"node{i + 1}"
        cols += _vec_cols(f"{p}.xhat", result.xhat[i])
        cols += _vec_cols(f"{p}.e", e[i])
        cols += _vec_cols(f"{p}.e_hat", result.e_hat[i])
        cols += _vec_cols(f"{p}.eps_hat", result.eps_hat[i])
        cols += _vec_cols(f"{p}.phi", result.phi[i])
        cols += _vec_cols(f"{p}.f", result.f[i])
        cols += _vec_cols(f"{p}.zeta", result.zeta[i])
        cols += _vec_cols(f"{p}.v", result.v[i])
        for j in sorted(result.zeta_links[i]):
            cols += _vec_cols(f"{p}.zeta_from{j + 1}", result.zeta_links[i][j])
            cols += _vec_cols(f"{p}.v_from{j + 1}", result.v_links[i][j])
    return cols


def write_trajectories_csv(result: SimResult, path) -> None:
    cols = trajectory_table(result)
    names = [c for c, _ in cols]
    data = np.column_stack([v for _, v in cols])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in data:
            w.writerow([_fmt(x) for x in row])


def read_trajectories_csv(path, scenario) -> SimResult:
    """Inverse of :func:`write_trajectories_csv` for the given scenario structure."""
    with open(path, encoding="utf-8") as fh:
        header = next(csv.reader(fh))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    index = {name: k for k, name in enumerate(header)}

    def block(prefix: str, dim: int) -> np.ndarray:
        try:
            return data[:, [index[f"{prefix}[{k}]"] for k in range(dim)]]
        except KeyError as exc:
            raise ConfigError(f"{path}: missing column {exc.args[0]}") from None

    n, m = scenario.plant.n, scenario.plant.m
    t = data[:, index["t"]]
    res = SimResult(
        times=t,
        step=float(t[1] - t[0]) if t.size > 1 else 0.0,
        x=block("plant.x", n),
        w=block("plant.w", m),
        xhat=[], e_hat=[], eps_hat=[], phi=[], f=[], v=[], v_links=[], zeta=[], zeta_links=[],
        hijacked=[nd.hijacked for nd in scenario.nodes],
    )
    for i, nd in enumerate(scenario.nodes):
        p = f"node{i + 1}"
        res.xhat.append(block(f"{p}.xhat", n))
        res.e_hat.append(block(f"{p}.e_hat", n))
        res.eps_hat.append(block(f"{p}.eps_hat", nd.tracker.dim))
        res.phi.append(block(f"{p}.phi", nd.tracker.n_f))
        res.f.append(block(f"{p}.f", nd.tracker.n_f))
        res.zeta.append(block(f"{p}.zeta", nd.sensor.p))
        res.v.append(block(f"{p}.v", nd.sensor.noise_dim))
        zl, vl = {}, {}
        for e in scenario.topology.in_edges(i):
            zl[e.source] = block(f"{p}.zeta_from{e.source + 1}", e.p)
            vl[e.source] = block(f"{p}.v_from{e.source + 1}", e.noise_dim)
        res.zeta_links.append(zl)
        res.v_links.append(vl)
    return res


def write_json(payload: Any, path) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")
