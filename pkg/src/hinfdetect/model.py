"""Plant, sensor, link and tracker descriptions plus scenario validation.

Time-varying matrices are declarative: each entry is a constant, a finite
sum of sinusoids ``c0 + sum_k a_k sin(w_k t + phi_k)``, or a piecewise
constant schedule.  Nodes are indexed from 0 internally; the file format and
all exported column names use 1-based labels.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, ParameterError, ScenarioValidationError, Violation
from .signals import SignalSpec

_TIME_TOL = 1e-9


class TimeMatrix:
    """Matrix whose entries are explicit functions of time.

    Entries are kept in canonical form so they can be written back to a
    scenario file unchanged:

    * ``("const", c)``
    * ``("sin", c0, ((a, w, phi), ...))``
    * ``("pwc", breaks, values)`` with ``len(values) == len(breaks) + 1``;
      the value switches to ``values[k]`` at ``t >= breaks[k-1]``.
    """

    def __init__(self, entries: Sequence[Sequence[tuple]]) -> None:
        rows = [tuple(r) for r in entries]
        if not rows or not rows[0]:
            raise ParameterError("TimeMatrix needs at least one entry")
        ncols = len(rows[0])
        if any(len(r) != ncols for r in rows):
            raise ParameterError("ragged TimeMatrix rows")
        self._entries = tuple(rows)
        self.shape = (len(rows), ncols)

        const = np.zeros(self.shape)
        sin_terms: list[tuple[int, int, float, float, float]] = []
        pwc_terms: list[tuple[int, int, np.ndarray, np.ndarray]] = []
        for i, row in enumerate(rows):
            for j, entry in enumerate(row):
                tag = entry[0]
                if tag == "const":
                    const[i, j] = entry[1]
                elif tag == "sin":
                    const[i, j] = entry[1]
                    sin_terms.extend((i, j, a, w, phi) for a, w, phi in entry[2])
                elif tag == "pwc":
                    breaks = np.asarray(entry[1], dtype=float)
                    values = np.asarray(entry[2], dtype=float)
                    if values.size != breaks.size + 1:
                        raise ParameterError("pwc schedule needs len(values) == len(breaks) + 1")
                    if breaks.size and np.any(np.diff(breaks) <= 0):
                        raise ParameterError("pwc breakpoints must be strictly increasing")
                    pwc_terms.append((i, j, breaks, values))
                else:
                    raise ParameterError(f"unknown entry tag {tag!r}")
        const.setflags(write=False)
        self._const = const
        self._sin = sin_terms
        self._pwc = pwc_terms

    @classmethod
    def constant(cls, matrix) -> TimeMatrix:
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls([[("const", float(v)) for v in row] for row in m])

    @property
    def is_constant(self) -> bool:
        return not self._sin and not self._pwc

    @property
    def entries(self) -> tuple:
        return self._entries

    def __call__(self, t: float) -> np.ndarray:
        if self.is_constant:
            return self._const.copy()
        return self.evaluate(np.array([t], dtype=float))[0]

    def evaluate(self, times) -> np.ndarray:
        """Vectorised evaluation; returns an array of shape ``(len(times), rows, cols)``."""
        t = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.broadcast_to(self._const, (t.size, *self.shape)).copy()
        for i, j, a, w, phi in self._sin:
            out[:, i, j] += a * np.sin(w * t + phi)
        for i, j, breaks, values in self._pwc:
            out[:, i, j] = values[np.searchsorted(breaks, t, side="right")]
        return out

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TimeMatrix) and self._entries == other._entries

    def __hash__(self) -> int:
        return hash(self._entries)

    def __repr__(self) -> str:
        kind = "constant" if self.is_constant else "time-varying"
        return f"TimeMatrix({self.shape[0]}x{self.shape[1]}, {kind})"


@dataclass(frozen=True, eq=False)
class PlantModel:
    n: int
    m: int
    A: TimeMatrix
    B: TimeMatrix
    horizon: float
    x0: np.ndarray
    w: SignalSpec = field(default_factory=SignalSpec)


def eval_plant(model: PlantModel, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(A(t), B(t))``; raises ``DomainError`` outside ``[0, horizon]``."""
    if t < -_TIME_TOL or t > model.horizon + _TIME_TOL:
        raise DomainError(f"t={t} outside [0, {model.horizon}]")
    return model.A(t), model.B(t)


@dataclass(frozen=True, eq=False)
class SensorModel:
    C: TimeMatrix
    D: TimeMatrix

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def noise_dim(self) -> int:
        return self.D.shape[1]


@dataclass(frozen=True, eq=False)
class LinkModel:
    """Directed link ``source -> target`` carrying ``c = W xhat_source + H v``."""

    source: int
    target: int
    W: np.ndarray
    H: np.ndarray
    Z: np.ndarray
    v: SignalSpec = field(default_factory=SignalSpec)

    @property
    def p(self) -> int:
        return self.W.shape[0]

    @property
    def noise_dim(self) -> int:
        return self.H.shape[1]

    @property
    def label(self) -> str:
        return f"{self.source + 1}->{self.target + 1}"


class Topology:
    """Directed communication graph; ``neighbors(i)`` lists sources sending to ``i``."""

    def __init__(self, n_nodes: int, edges: Iterable[LinkModel]) -> None:
        self.N = int(n_nodes)
        self.edges = tuple(edges)
        incoming: list[list[LinkModel]] = [[] for _ in range(self.N)]
        for e in self.edges:
            if 0 <= e.target < self.N:
                incoming[e.target].append(e)
        self._incoming = tuple(tuple(sorted(lst, key=lambda e: e.source)) for lst in incoming)

    def in_edges(self, i: int) -> tuple[LinkModel, ...]:
        return self._incoming[i]

    def neighbors(self, i: int) -> list[int]:
        return [e.source for e in self._incoming[i]]

    def in_degree(self, i: int) -> int:
        return len(self._incoming[i])


@dataclass(frozen=True, eq=False)
class TrackerSpec:
    """Attack-tracking model ``eps' = Omega eps + Gamma nu``, ``fhat = Upsilon eps``."""

    n_f: int
    beta: float
    g: float
    Omega: np.ndarray
    Gamma: np.ndarray
    Upsilon: np.ndarray
    F: np.ndarray

    @property
    def dim(self) -> int:
        return 2 * self.n_f


def build_tracker(beta: float, g: float, n_f: int, F=None) -> TrackerSpec:
    """Realisation of the low-pass tracker ``G(s) = g / (s + 2 beta) I``.

    >>> tr = build_tracker(0.5, 1.0, 1)
    >>> tr.Omega.tolist(), tr.Gamma.ravel().tolist(), tr.Upsilon.tolist()
    ([[0.0, 1.0], [0.0, -1.0]], [0.0, -1.0], [[1.0, 0.0]])
    """
    if not beta > 0:
        raise ParameterError(f"beta must be positive, got {beta}")
    if not g > 0:
        raise ParameterError(f"g must be positive, got {g}")
    if int(n_f) != n_f or n_f < 1:
        raise ParameterError(f"n_f must be a positive integer, got {n_f}")
    n_f = int(n_f)
    eye = np.eye(n_f)
    zero = np.zeros((n_f, n_f))
    omega = np.block([[zero, eye], [zero, -2.0 * beta * eye]])
    gamma = np.vstack([zero, -g * eye])
    upsilon = np.hstack([eye, zero])
    if F is None:
        F = np.zeros((0, n_f))
    return TrackerSpec(n_f, float(beta), float(g), omega, gamma, upsilon, np.asarray(F, dtype=float))


@dataclass(frozen=True, eq=False)
class DesignWeights:
    R: np.ndarray
    R_check: np.ndarray
    X: np.ndarray
    X_check: np.ndarray

    @classmethod
    def default(cls, n: int, n_f: int) -> DesignWeights:
        return cls(np.eye(n), 2.0 * np.eye(2 * n_f), np.eye(n), np.eye(2 * n_f))

    @property
    def R_bold(self) -> np.ndarray:
        return _blkdiag(self.R, self.R_check)

    @property
    def X_bold(self) -> np.ndarray:
        return _blkdiag(self.X, self.X_check)


@dataclass(frozen=True, eq=False)
class BaselineGains:
    """User-supplied constant observer gains: ``L`` (n x p_i) and ``K[j]`` (n x p_ij)."""

    L: np.ndarray
    K: dict[int, np.ndarray]


@dataclass(frozen=True, eq=False)
class NodeConfig:
    sensor: SensorModel
    tracker: TrackerSpec
    weights: DesignWeights
    xi: np.ndarray
    v: SignalSpec = field(default_factory=SignalSpec)
    attack: SignalSpec | None = None
    gains: BaselineGains | None = None

    @property
    def hijacked(self) -> bool:
        return self.attack is not None


@dataclass(frozen=True)
class DesignSettings:
    gamma: float = 1.0
    riccati_step: float | None = None
    alpha_min: float = 1e-8
    alpha_max: float = 1e8


@dataclass(frozen=True)
class SimSettings:
    horizon: float = 10.0
    step: float = 0.01
    seed: int = 0
    gain_mode: str = "scheduled"
    threshold: float | None = None
    dwell: float = 0.5
    min_threshold: float = 0.05


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    plant: PlantModel
    nodes: tuple[NodeConfig, ...]
    edges: tuple[LinkModel, ...]
    design: DesignSettings = DesignSettings()
    sim: SimSettings = SimSettings()

    @property
    def N(self) -> int:
        return len(self.nodes)

    def with_overrides(self, *, gamma=None, horizon=None, step=None, seed=None) -> ScenarioConfig:
        design = self.design if gamma is None else replace(self.design, gamma=float(gamma))
        sim = self.sim
        if horizon is not None:
            sim = replace(sim, horizon=float(horizon))
        if step is not None:
            sim = replace(sim, step=float(step))
        if seed is not None:
            sim = replace(sim, seed=int(seed))
        plant = replace(self.plant, horizon=sim.horizon)
        return replace(self, plant=plant, design=design, sim=sim)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScenarioConfig):
            return NotImplemented
        from .io import scenario_to_dict

        return scenario_to_dict(self) == scenario_to_dict(other)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class Scenario:
    """A validated scenario: config plus derived topology and time grid."""

    config: ScenarioConfig
    topology: Topology
    grid: np.ndarray

    @property
    def plant(self) -> PlantModel:
        return self.config.plant

    @property
    def nodes(self) -> tuple[NodeConfig, ...]:
        return self.config.nodes

    @property
    def N(self) -> int:
        return self.config.N

    @property
    def n(self) -> int:
        return self.config.plant.n

    @property
    def gamma(self) -> float:
        return self.config.design.gamma


def time_grid(horizon: float, step: float) -> np.ndarray:
    """Uniform grid ``0, step, ..., horizon``; ``horizon`` must be a multiple of ``step``."""
    k = int(round(horizon / step))
    if k < 1 or abs(k * step - horizon) > 1e-9 * max(1.0, horizon):
        raise DomainError(f"horizon {horizon} is not a positive multiple of step {step}")
    return np.arange(k + 1) * step


def _blkdiag(*blocks: np.ndarray) -> np.ndarray:
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r : r + b.shape[0], c : c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


def min_sym_eig(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def is_spd(M: np.ndarray, tol: float = 0.0) -> bool:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.size == 0:
        return False
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(M).max())):
        return False
    return min_sym_eig(M) > tol


def validate_scenario(config: ScenarioConfig) -> Scenario:
    """Check dimensions, definiteness and graph structure.

    Collects every violation before raising ``ScenarioValidationError``.
    """
    bad: list[Violation] = []

    def need(cond: bool, where: str, check: str) -> bool:
        if not cond:
            bad.append(Violation(where, check))
        return cond

    pl = config.plant
    n, m = pl.n, pl.m
    need(n >= 1 and m >= 1, "plant", "n and m must be positive")
    need(pl.A.shape == (n, n), "plant.A", f"shape {pl.A.shape} != ({n}, {n})")
    need(pl.B.shape == (n, m), "plant.B", f"shape {pl.B.shape} != ({n}, {m})")
    need(np.shape(pl.x0) == (n,), "plant.x0", f"length must be {n}")
    need(pl.w.dim == m, "plant.w", f"disturbance dimension {pl.w.dim} != m={m}")
    need(pl.w.is_l2, "plant.w", "disturbance must be L2 (finite window or positive decay)")

    sim = config.sim
    grid = np.zeros(1)
    if need(sim.horizon > 0 and sim.step > 0, "sim", "horizon and step must be positive"):
        try:
            grid = time_grid(sim.horizon, sim.step)
        except DomainError as exc:
            need(False, "sim", str(exc))
    need(sim.gain_mode in ("scheduled", "frozen"), "sim.gain_mode", "must be 'scheduled' or 'frozen'")
    need(sim.dwell > 0, "sim.dwell", "must be positive")
    need(sim.threshold is None or sim.threshold > 0, "sim.threshold", "must be positive")
    need(abs(pl.horizon - sim.horizon) <= _TIME_TOL, "plant", "horizon must equal sim.horizon")

    ds = config.design
    need(ds.gamma > 0, "design.gamma", "must be positive")
    need(ds.riccati_step is None or ds.riccati_step > 0, "design.riccati_step", "must be positive")
    need(0 < ds.alpha_min < ds.alpha_max, "design", "need 0 < alpha_min < alpha_max")

    N = config.N
    need(N >= 1, "nodes", "at least one node required")

    seen: set[tuple[int, int]] = set()
    for e in config.edges:
        where = f"edge ({e.source + 1}->{e.target + 1})"
        if not (need(0 <= e.source < N, where, "source out of range") and need(0 <= e.target < N, where, "target out of range")):
            continue
        need(e.source != e.target, where, "self-loop")
        need((e.source, e.target) not in seen, where, "duplicate edge")
        seen.add((e.source, e.target))
        if need(e.W.ndim == 2 and e.W.shape[1] == n, where, f"W must have {n} columns"):
            need(bool(np.any(e.W != 0)), where, "W must be nonzero")
        need(e.H.ndim == 2 and e.H.shape[0] == e.W.shape[0], where, f"H has {e.H.shape[0] if e.H.ndim == 2 else '?'} rows but W has p_ij={e.W.shape[0]}")
        if need(e.Z.shape == (e.W.shape[0], e.W.shape[0]), where, "Z must be p_ij x p_ij"):
            need(is_spd(e.Z), where, "Z must be symmetric positive definite")
        if e.H.ndim == 2:
            need(e.v.dim == e.H.shape[1], where, f"noise dimension {e.v.dim} != columns of H")
        need(e.v.is_l2, where, "link noise must be L2")

    topo = Topology(N, config.edges)
    for i, node in enumerate(config.nodes):
        where = f"node {i + 1}"
        s = node.sensor
        need(s.C.shape[1] == n, f"{where}.C", f"must have {n} columns")
        need(s.D.shape[0] == s.C.shape[0], f"{where}.D", "row count must match C")
        need(node.v.dim == s.noise_dim, f"{where}.v", f"noise dimension {node.v.dim} != columns of D")
        need(node.v.is_l2, f"{where}.v", "measurement noise must be L2")
        tr = node.tracker
        need(tr.F.shape == (n, tr.n_f), f"{where}.tracker.F", f"shape {tr.F.shape} != ({n}, {tr.n_f})")
        w8 = node.weights
        for name, mat, dim in (("R", w8.R, n), ("R_check", w8.R_check, 2 * tr.n_f), ("X", w8.X, n), ("X_check", w8.X_check, 2 * tr.n_f)):
            if need(mat.shape == (dim, dim), f"{where}.weights.{name}", f"must be {dim}x{dim}"):
                need(is_spd(mat), f"{where}.weights.{name}", "must be symmetric positive definite")
        need(np.shape(node.xi) == (n,), f"{where}.xi", f"length must be {n}")
        if node.attack is not None:
            need(node.attack.dim == tr.n_f, f"{where}.attack", f"dimension {node.attack.dim} != n_f={tr.n_f}")
        if node.gains is not None:
            g = node.gains
            need(g.L.shape == (n, s.C.shape[0]), f"{where}.gains.L", f"must be {n}x{s.C.shape[0]}")
            nbrs = {e.source: e for e in topo.in_edges(i)}
            need(set(g.K) == set(nbrs), f"{where}.gains.K", "keys must be exactly the in-neighbours")
            for j, K in g.K.items():
                if j in nbrs:
                    need(K.shape == (n, nbrs[j].p), f"{where}.gains.K[{j + 1}]", f"must be {n}x{nbrs[j].p}")
        if s.D.shape[0] == s.C.shape[0] and s.D.shape[0] > 0 and grid.size > 1:
            D = s.D.evaluate(grid)
            eigs = np.linalg.eigvalsh(D @ np.swapaxes(D, 1, 2))[:, 0]
            k = int(np.argmin(eigs))
            need(eigs[k] > 0, where, f"E_i(t) not positive definite at t={grid[k]:.6g} (D_i D_i' min eig {eigs[k]:.3e})")

    if bad:
        raise ScenarioValidationError(bad)
    return Scenario(config=config, topology=topo, grid=grid)


__all__ = [
    "BaselineGains",
    "DesignSettings",
    "DesignWeights",
    "LinkModel",
    "NodeConfig",
    "PlantModel",
    "Scenario",
    "ScenarioConfig",
    "SensorModel",
    "SimSettings",
    "TimeMatrix",
    "Topology",
    "TrackerSpec",
    "build_tracker",
    "eval_plant",
    "is_spd",
    "time_grid",
    "validate_scenario",
]
