"""Two-step detector synthesis.

Step one is a single centralized check that only involves the communication
network (coupling matrix ``Phi`` and the global LMI).  Step two is per node:
assemble the augmented error system, integrate the differential Riccati
equation forward in time, and read off the stacked gain
``L_i(t) = Y_i(t) C_i(t)' E_i(t)^{-1}``.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import (
    AssumptionViolation,
    DomainError,
    InfeasibleError,
    ParameterError,
    RiccatiBoundError,
)
from .model import LinkModel, Scenario, TimeMatrix, Topology, TrackerSpec, _blkdiag

logger = logging.getLogger(__name__)

LMI_TOL = 1e-9
# Real-axis stability bound of classical RK4 (|1 + z + z^2/2 + z^3/6 + z^4/24| = 1).
ESCAPE_RATE = 0.5
_CHUNK_STEPS = 4096


# --------------------------------------------------------------------------
# Centralized setup
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CouplingData:
    U: dict[tuple[int, int], np.ndarray]
    Delta: tuple[np.ndarray, ...]
    Phi: np.ndarray
    n: int

    @property
    def Delta_full(self) -> np.ndarray:
        return _blkdiag(*self.Delta)

    def block(self, i: int, j: int) -> np.ndarray:
        n = self.n
        return self.Phi[i * n : (i + 1) * n, j * n : (j + 1) * n]


def build_coupling(topology: Topology, n: int) -> CouplingData:
    """Network coupling data ``U_ij``, ``Delta_i`` and the block matrix ``Phi``.

    ``Z_ij`` is read from each link.  Blocks are ``Phi_ii = Delta_i`` and
    ``Phi_ij = -W_ij' U_ij^{-1} W_ij`` for ``j`` in the neighbourhood of ``i``.
    """
    N = topology.N
    U: dict[tuple[int, int], np.ndarray] = {}
    Delta = [np.zeros((n, n)) for _ in range(N)]
    Phi = np.zeros((N * n, N * n))
    for i in range(N):
        for e in topology.in_edges(i):
            j = e.source
            Uij = e.H @ e.H.T + e.Z
            try:
                Uinv_W = np.linalg.solve(Uij, e.W)
            except np.linalg.LinAlgError as exc:
                raise AssumptionViolation(f"U_ij singular on edge {e.label}") from exc
            U[(i, j)] = Uij
            Delta[i] = Delta[i] + Uinv_W.T @ e.Z @ Uinv_W
            Phi[i * n : (i + 1) * n, j * n : (j + 1) * n] = -e.W.T @ Uinv_W
        Delta[i] = 0.5 * (Delta[i] + Delta[i].T)
        Phi[i * n : (i + 1) * n, i * n : (i + 1) * n] = Delta[i]
    return CouplingData(U=U, Delta=tuple(Delta), Phi=Phi, n=n)


@dataclass(frozen=True)
class LmiReport:
    min_eig: float
    feasible: bool
    gamma: float

    def as_dict(self) -> dict:
        return {
            "condition": "R + gamma^2 (Phi + Phi' - Delta) > I",
            "gamma": self.gamma,
            "min_eig": self.min_eig,
            "feasible": self.feasible,
        }


def global_lmi_matrix(R: np.ndarray, gamma: float, coupling: CouplingData) -> np.ndarray:
    Phi = coupling.Phi
    M = R + gamma**2 * (Phi + Phi.T - coupling.Delta_full) - np.eye(Phi.shape[0])
    return 0.5 * (M + M.T)


def check_lmi_global(R: np.ndarray, gamma: float, coupling: CouplingData) -> LmiReport:
    """Strict test of ``R + gamma^2 (Phi + Phi' - Delta) > I`` with margin ``LMI_TOL``."""
    R = np.asarray(R, dtype=float)
    if R.shape != coupling.Phi.shape:
        raise ParameterError(f"R has shape {R.shape}, Phi has shape {coupling.Phi.shape}")
    lam = float(np.linalg.eigvalsh(global_lmi_matrix(R, gamma, coupling))[0])
    return LmiReport(min_eig=lam, feasible=lam > LMI_TOL, gamma=float(gamma))


def local_lmi_margin(R_check: np.ndarray) -> float:
    R_check = np.atleast_2d(np.asarray(R_check, dtype=float))
    if R_check.shape[0] != R_check.shape[1]:
        raise ParameterError("R_check must be square")
    if not np.allclose(R_check, R_check.T, rtol=0, atol=1e-12 * max(1.0, np.abs(R_check).max())):
        raise ParameterError("R_check must be symmetric")
    return float(np.linalg.eigvalsh(R_check - np.eye(R_check.shape[0]))[0])


def check_lmi_local(R_check: np.ndarray) -> bool:
    """``True`` iff ``R_check > I`` with margin ``LMI_TOL``."""
    return local_lmi_margin(R_check) > LMI_TOL


def stacked_R(scenario: Scenario) -> np.ndarray:
    return _blkdiag(*(node.weights.R for node in scenario.nodes))


# --------------------------------------------------------------------------
# Per-node augmented system
# --------------------------------------------------------------------------


def sqrtm_psd(M: np.ndarray) -> np.ndarray:
    """Symmetric square root of a symmetric PSD matrix."""
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


@dataclass(frozen=True, eq=False)
class AugmentedNode:
    """Augmented matrices of one node frozen at time ``t``."""

    t: float
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    n: int
    n_eps: int
    col_sizes: tuple[int, ...]
    sources: tuple[int, ...]


class NodeSystem:
    """Time-varying filter model ``(A, B, C, D)`` the Riccati equation runs on.

    With a tracker, the state is ``(z, delta)`` and the matrices follow the
    augmented layout::

        A = [[A(t), -F Upsilon], [0, Omega]]      B = [[B(t), F], [0, Gamma]]
        C = [[C_i(t), 0], [W_ij1, 0], ...]        D = blkdiag(D_i, [H | Z^1/2])

    Without a tracker the epsilon block is dropped, which is the
    non-augmented system used for the baseline observer design.
    """

    def __init__(
        self,
        A: TimeMatrix,
        B: TimeMatrix,
        C: TimeMatrix,
        D: TimeMatrix,
        links: Sequence[LinkModel] = (),
        tracker: TrackerSpec | None = None,
    ) -> None:
        self.A_tm, self.B_tm, self.C_tm, self.D_tm = A, B, C, D
        self.links = tuple(links)
        self.tracker = tracker
        self.n = A.shape[0]
        self.m = B.shape[1]
        self.n_eps = tracker.dim if tracker is not None else 0
        self.n_f = tracker.n_f if tracker is not None else 0
        self.dim = self.n + self.n_eps
        self.col_sizes = (C.shape[0], *(e.p for e in self.links))
        self.sources = tuple(e.source for e in self.links)
        self.out_dim = sum(self.col_sizes)
        self._link_C = np.vstack([e.W for e in self.links]) if self.links else np.zeros((0, self.n))
        link_noise = sum(e.noise_dim for e in self.links)
        link_rows = sum(e.p for e in self.links)
        self._link_D = np.zeros((link_rows, link_noise + link_rows))
        r = c = 0
        for e in self.links:
            self._link_D[r : r + e.p, c : c + e.noise_dim] = e.H
            c += e.noise_dim
            r += e.p
        r = 0
        for e in self.links:
            self._link_D[r : r + e.p, c : c + e.p] = sqrtm_psd(e.Z)
            c += e.p
            r += e.p
        self.noise_dim = D.shape[1] + self._link_D.shape[1]

    @classmethod
    def from_matrices(cls, A, B, C, D) -> NodeSystem:
        def tm(x):
            return x if isinstance(x, TimeMatrix) else TimeMatrix.constant(x)

        return cls(tm(A), tm(B), tm(C), tm(D))

    @property
    def is_constant(self) -> bool:
        return all(m.is_constant for m in (self.A_tm, self.B_tm, self.C_tm, self.D_tm))

    def coefficients(self, times) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Stacked ``(A, B, C, D)`` at each of ``times``."""
        t = np.atleast_1d(np.asarray(times, dtype=float))
        K, n, m = t.size, self.n, self.m
        A = np.zeros((K, self.dim, self.dim))
        B = np.zeros((K, self.dim, m + self.n_f))
        A[:, :n, :n] = self.A_tm.evaluate(t)
        B[:, :n, :m] = self.B_tm.evaluate(t)
        if self.tracker is not None:
            tr = self.tracker
            A[:, :n, n:] = -tr.F @ tr.Upsilon
            A[:, n:, n:] = tr.Omega
            B[:, :n, m:] = tr.F
            B[:, n:, m:] = tr.Gamma
        p = self.C_tm.shape[0]
        C = np.zeros((K, self.out_dim, self.dim))
        C[:, :p, :n] = self.C_tm.evaluate(t)
        C[:, p:, :n] = self._link_C
        md = self.D_tm.shape[1]
        D = np.zeros((K, self.out_dim, self.noise_dim))
        D[:, :p, :md] = self.D_tm.evaluate(t)
        D[:, p:, md:] = self._link_D
        return A, B, C, D

    def at(self, t: float) -> AugmentedNode:
        A, B, C, D = (x[0] for x in self.coefficients([t]))
        return AugmentedNode(
            t=float(t), A=A, B=B, C=C, D=D, E=D @ D.T,
            n=self.n, n_eps=self.n_eps, col_sizes=self.col_sizes, sources=self.sources,
        )


def node_system(scenario: Scenario, i: int, augmented: bool = True) -> NodeSystem:
    node = scenario.nodes[i]
    return NodeSystem(
        scenario.plant.A,
        scenario.plant.B,
        node.sensor.C,
        node.sensor.D,
        scenario.topology.in_edges(i),
        node.tracker if augmented else None,
    )


def assemble_augmented(scenario: Scenario, i: int, t: float) -> AugmentedNode:
    """Augmented matrices of node ``i`` at time ``t``.

    Raises ``AssumptionViolation`` if ``E_i(t) = D_i(t) D_i(t)'`` is not
    positive definite.
    """
    if t < 0 or t > scenario.plant.horizon + 1e-9:
        raise DomainError(f"t={t} outside [0, {scenario.plant.horizon}]")
    aug = node_system(scenario, i).at(t)
    lam = float(np.linalg.eigvalsh(aug.E)[0]) if aug.E.size else 1.0
    if not lam > 0:
        raise AssumptionViolation(f"node {i + 1}: E_i not positive definite at t={t} (min eig {lam:.3e})")
    return aug


# --------------------------------------------------------------------------
# Differential Riccati equation
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    times: np.ndarray
    Y: np.ndarray
    h: float
    alpha1: float
    alpha2: float

    def bounds(self) -> dict:
        return {"alpha1": self.alpha1, "alpha2": self.alpha2}


def _riccati_weights(system: NodeSystem, times: np.ndarray, R_bold: np.ndarray, gamma: float):
    """Per-time ``A``, ``S = C'E^{-1}C - R/gamma^2`` and ``Q = B B'``."""
    A, B, C, D = system.coefficients(times)
    E = D @ np.swapaxes(D, 1, 2)
    if C.shape[1]:
        try:
            EinvC = np.linalg.solve(E, C)
        except np.linalg.LinAlgError as exc:
            raise AssumptionViolation("E_i(t) is singular") from exc
        S = np.swapaxes(C, 1, 2) @ EinvC
    else:
        S = np.zeros_like(A)
    S = S - R_bold / gamma**2
    S = 0.5 * (S + np.swapaxes(S, 1, 2))
    Q = B @ np.swapaxes(B, 1, 2)
    return A, S, Q


def riccati_rhs(system: NodeSystem, Y: np.ndarray, t: float, R_bold: np.ndarray, gamma: float) -> np.ndarray:
    """``A Y + Y A' - Y (C'E^{-1}C - R/gamma^2) Y + B B'`` at time ``t``."""
    A, S, Q = (x[0] for x in _riccati_weights(system, np.array([t]), np.asarray(R_bold, float), gamma))
    return A @ Y + Y @ A.T - Y @ S @ Y + Q


def default_riccati_step(spacing: float) -> float:
    return min(1e-3, spacing / 10.0)


def integrate_riccati(
    system: NodeSystem,
    R_bold,
    gamma: float,
    X_bold,
    grid,
    h: float | None = None,
    *,
    alpha_min: float = 1e-8,
    alpha_max: float = 1e8,
    node: int | None = None,
) -> RiccatiSolution:
    """Forward RK4 integration of the filter Riccati equation from ``Y(0) = X^{-1}``.

    The state is symmetrised after every step.  Integration stops with
    ``RiccatiBoundError`` when any entry exceeds ``alpha_max``, when the
    quadratic term grows faster than the step can resolve
    (``h * eig_max(-Y^{1/2} S Y^{1/2}) > 0.5`` with ``S = C'E^{-1}C - R/gamma^2``,
    which is how a finite escape time shows up), or when the minimum
    eigenvalue on the grid falls below ``alpha_min``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1:
        raise ParameterError("grid must be a non-empty 1-D array")
    R_bold = np.asarray(R_bold, dtype=float)
    X_bold = np.asarray(X_bold, dtype=float)
    d = system.dim
    if R_bold.shape != (d, d) or X_bold.shape != (d, d):
        raise ParameterError(f"weights must be {d}x{d}")
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    try:
        np.linalg.cholesky(X_bold)
    except np.linalg.LinAlgError as exc:
        raise ParameterError("X must be symmetric positive definite") from exc

    Y = np.linalg.inv(X_bold)
    Y = 0.5 * (Y + Y.T)
    out = np.empty((grid.size, d, d))
    out[0] = Y
    if grid.size > 1:
        spacing = float(grid[1] - grid[0])
        if spacing <= 0 or not np.allclose(np.diff(grid), spacing, rtol=1e-9, atol=1e-12):
            raise ParameterError("grid must be uniform and increasing")
        h = default_riccati_step(spacing) if h is None else float(h)
        if h <= 0:
            raise ParameterError("step must be positive")
        sub = max(1, int(round(spacing / h)))
        h = spacing / sub
        _rk4_riccati(system, R_bold, gamma, grid, sub, h, Y, out, alpha_max, node)
    else:
        h = float(h) if h else default_riccati_step(1.0)

    eigs = np.linalg.eigvalsh(out)
    lo, hi = eigs[:, 0], eigs[:, -1]
    bad = np.flatnonzero((lo <= alpha_min) | (hi >= alpha_max))
    if bad.size:
        k = int(bad[0])
        raise RiccatiBoundError(float(grid[k]), float(lo[k]), float(hi[k]), node)
    return RiccatiSolution(times=grid.copy(), Y=out, h=h, alpha1=float(lo.min()), alpha2=float(hi.max()))


@njit(cache=True)
def _riccati_f(Y, A, S, Q, sig, alpha_max, limit):
    """RK4 stage derivative; second value is 0 (ok), 1 (too large), 2 (escaping)."""
    d = Y.shape[0]
    tr = 0.0
    for a in range(d):
        tr += Y[a, a]
        for b in range(d):
            if not abs(Y[a, b]) < alpha_max:
                return Q, 1
    # tr(Y) * max(0, eig_max(-S)) bounds the growth rate of the quadratic term
    if tr * sig > limit:
        w, V = np.linalg.eigh(0.5 * (Y + Y.T))
        if w[0] <= 0.0:
            return Q, 1
        Yh = (V * np.sqrt(w)) @ V.T
        if np.linalg.eigvalsh(-(Yh @ S @ Yh))[-1] > limit:
            return Q, 2
    return (A - Y @ S) @ Y + Y @ A.T + Q, 0


@njit(cache=True)
def _rk4_chunk(Y, At, St, Qt, sig, const, h, sub, steps, out, out_offset, alpha_max, limit):
    """Advance ``steps`` RK4 steps; stage coefficients are ``At[2k], At[2k+1], At[2k+2]``.

    Returns ``(Y, status, failed_step, failed_stage_fraction)``.
    """
    half = 0.5 * h
    for k in range(steps):
        i0 = 0 if const else 2 * k
        i1 = 0 if const else 2 * k + 1
        i2 = 0 if const else 2 * k + 2
        k1, st = _riccati_f(Y, At[i0], St[i0], Qt[i0], sig[i0], alpha_max, limit)
        if st:
            return Y, st, k, 0.0
        k2, st = _riccati_f(Y + half * k1, At[i1], St[i1], Qt[i1], sig[i1], alpha_max, limit)
        if st:
            return Y + half * k1, st, k, 0.5
        k3, st = _riccati_f(Y + half * k2, At[i1], St[i1], Qt[i1], sig[i1], alpha_max, limit)
        if st:
            return Y + half * k2, st, k, 0.5
        k4, st = _riccati_f(Y + h * k3, At[i2], St[i2], Qt[i2], sig[i2], alpha_max, limit)
        if st:
            return Y + h * k3, st, k, 1.0
        Y = Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        Y = 0.5 * (Y + Y.T)
        if (k + 1) % sub == 0:
            out[out_offset + (k + 1) // sub] = Y
    return Y, 0, steps, 0.0


def _growth_bound(St: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, np.linalg.eigvalsh(-St)[:, -1])


def _rk4_riccati(system, R_bold, gamma, grid, sub, h, Y, out, alpha_max, node) -> None:
    limit = ESCAPE_RATE / h
    const = system.is_constant
    if const:
        At, St, Qt = _riccati_weights(system, grid[:1], R_bold, gamma)
        sig = _growth_bound(St)
    n_int = grid.size - 1
    per_chunk = max(1, _CHUNK_STEPS // sub)
    for c0 in range(0, n_int, per_chunk):
        c1 = min(n_int, c0 + per_chunk)
        steps = (c1 - c0) * sub
        t0 = grid[c0]
        if not const:
            stage_t = t0 + 0.5 * h * np.arange(2 * steps + 1)
            At, St, Qt = _riccati_weights(system, stage_t, R_bold, gamma)
            sig = _growth_bound(St)
        Y, status, k, frac = _rk4_chunk(
            Y, np.ascontiguousarray(At), np.ascontiguousarray(St), np.ascontiguousarray(Qt), sig,
            const, h, sub, steps, out, c0, alpha_max, limit,
        )
        if status:
            t_fail = t0 + (k + frac) * h
            if np.all(np.isfinite(Y)):
                w = np.linalg.eigvalsh(0.5 * (Y + Y.T))
                raise RiccatiBoundError(float(t_fail), float(w[0]), float(w[-1]), node)
            raise RiccatiBoundError(float(t_fail), float("nan"), float("inf"), node)


# --------------------------------------------------------------------------
# Gains
# --------------------------------------------------------------------------


def partition_gain(L: np.ndarray, n: int, col_sizes: Sequence[int], sources: Sequence[int]) -> dict:
    """Split a stacked gain (``..., n + n_eps, sum(col_sizes)``) into its blocks.

    Returns ``{"L_hat", "K_hat": {j: ...}, "L_check", "K_check": {j: ...}}``.
    """
    offs = np.concatenate([[0], np.cumsum(col_sizes)]).astype(int)
    top, bot = L[..., :n, :], L[..., n:, :]
    return {
        "L_hat": top[..., :, offs[0] : offs[1]],
        "K_hat": {j: top[..., :, offs[k + 1] : offs[k + 2]] for k, j in enumerate(sources)},
        "L_check": bot[..., :, offs[0] : offs[1]],
        "K_check": {j: bot[..., :, offs[k + 1] : offs[k + 2]] for k, j in enumerate(sources)},
    }


def reassemble_gain(blocks: dict, sources: Sequence[int]) -> np.ndarray:
    top = np.concatenate([blocks["L_hat"], *(blocks["K_hat"][j] for j in sources)], axis=-1)
    bot = np.concatenate([blocks["L_check"], *(blocks["K_check"][j] for j in sources)], axis=-1)
    return np.concatenate([top, bot], axis=-2)


@dataclass(frozen=True, eq=False)
class GainSchedule:
    """Time-sampled stacked gain of one node.

    ``L`` has shape ``(K, n + n_eps, p_i + sum_j p_ij)``; columns follow the
    in-neighbours in ``sources`` order.  Values between samples are linearly
    interpolated by :meth:`sample`.
    """

    times: np.ndarray
    L: np.ndarray
    n: int
    n_eps: int
    col_sizes: tuple[int, ...]
    sources: tuple[int, ...]

    @classmethod
    def constant(cls, L_i: np.ndarray, K: dict[int, np.ndarray], times) -> GainSchedule:
        sources = tuple(sorted(K))
        mat = np.hstack([L_i, *(K[j] for j in sources)])
        times = np.asarray(times, dtype=float)
        return cls(
            times=times,
            L=np.broadcast_to(mat, (times.size, *mat.shape)).copy(),
            n=mat.shape[0],
            n_eps=0,
            col_sizes=(L_i.shape[1], *(K[j].shape[1] for j in sources)),
            sources=sources,
        )

    def blocks(self) -> dict:
        return partition_gain(self.L, self.n, self.col_sizes, self.sources)

    def sample(self, times) -> GainSchedule:
        """Linear interpolation onto ``times`` (held constant beyond the ends)."""
        t = np.asarray(times, dtype=float)
        src = self.times
        if src.size == 1:
            L = np.broadcast_to(self.L[0], (t.size, *self.L.shape[1:])).copy()
        else:
            idx = np.clip(np.searchsorted(src, t, side="right") - 1, 0, src.size - 2)
            w = np.clip((t - src[idx]) / (src[idx + 1] - src[idx]), 0.0, 1.0)[:, None, None]
            exact = np.isclose(t, src[idx], rtol=0, atol=1e-12)
            L = (1.0 - w) * self.L[idx] + w * self.L[idx + 1]
            L[exact] = self.L[idx[exact]]
        return GainSchedule(t.copy(), L, self.n, self.n_eps, self.col_sizes, self.sources)

    def frozen(self, times=None) -> GainSchedule:
        """The final gain held constant over ``times`` (default: own grid)."""
        t = self.times if times is None else np.asarray(times, dtype=float)
        L = np.broadcast_to(self.L[-1], (t.size, *self.L.shape[1:])).copy()
        return GainSchedule(t.copy(), L, self.n, self.n_eps, self.col_sizes, self.sources)


def gains_from_solution(sol: RiccatiSolution, system: NodeSystem) -> GainSchedule:
    """``L(t_k) = Y(t_k) C(t_k)' E(t_k)^{-1}`` on the solution grid."""
    _, _, C, D = system.coefficients(sol.times)
    E = D @ np.swapaxes(D, 1, 2)
    if E.shape[1]:
        lam = np.linalg.eigvalsh(E)[:, 0]
        if np.any(lam <= 0):
            k = int(np.argmax(lam <= 0))
            raise AssumptionViolation(f"E_i singular at t={sol.times[k]:.6g}")
        L = np.swapaxes(np.linalg.solve(E, C @ sol.Y), 1, 2)
    else:
        L = np.zeros((sol.times.size, system.dim, 0))
    return GainSchedule(
        times=sol.times.copy(), L=L, n=system.n, n_eps=system.n_eps,
        col_sizes=system.col_sizes, sources=system.sources,
    )


def detector_only_gains(detector: GainSchedule, baseline: GainSchedule) -> dict:
    """Blocks of the detector with the baseline observer gains subtracted.

    Returns ``L_bar = L_hat - L``, ``K_bar[j] = K_hat[j] - K[j]`` together with
    the untouched ``L_check`` and ``K_check`` blocks, all on ``detector.times``.
    """
    base = baseline.sample(detector.times).blocks()
    blk = detector.blocks()
    return {
        "L_bar": blk["L_hat"] - base["L_hat"],
        "K_bar": {j: blk["K_hat"][j] - base["K_hat"][j] for j in detector.sources},
        "L_check": blk["L_check"],
        "K_check": blk["K_check"],
    }


# --------------------------------------------------------------------------
# Orchestration
# --------------------------------------------------------------------------


def _map(fn, items, max_workers):
    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _riccati_step(scenario: Scenario, h: float | None) -> float | None:
    return h if h is not None else scenario.config.design.riccati_step


def design_baseline_observer(
    scenario: Scenario, grid=None, h: float | None = None, max_workers: int | None = None
) -> list[GainSchedule]:
    """Baseline observer gains ``(L_i, K_ij)`` for every node.

    Constant gains given in the scenario are passed through; otherwise the
    Riccati machinery is run on the non-augmented node system with weights
    ``R_i`` and ``X_i``.
    """
    grid = scenario.grid if grid is None else np.asarray(grid, dtype=float)
    ds = scenario.config.design
    h = _riccati_step(scenario, h)

    def one(i: int) -> GainSchedule:
        node = scenario.nodes[i]
        if node.gains is not None:
            return GainSchedule.constant(node.gains.L, node.gains.K, grid)
        sys_i = node_system(scenario, i, augmented=False)
        sol = integrate_riccati(
            sys_i, node.weights.R, ds.gamma, node.weights.X, grid, h,
            alpha_min=ds.alpha_min, alpha_max=ds.alpha_max, node=i,
        )
        return gains_from_solution(sol, sys_i)

    return _map(one, range(scenario.N), max_workers)


def solve_node(scenario: Scenario, i: int, grid=None, h: float | None = None) -> tuple[RiccatiSolution, GainSchedule]:
    grid = scenario.grid if grid is None else np.asarray(grid, dtype=float)
    ds = scenario.config.design
    node = scenario.nodes[i]
    sys_i = node_system(scenario, i)
    sol = integrate_riccati(
        sys_i, node.weights.R_bold, ds.gamma, node.weights.X_bold, grid, _riccati_step(scenario, h),
        alpha_min=ds.alpha_min, alpha_max=ds.alpha_max, node=i,
    )
    return sol, gains_from_solution(sol, sys_i)


@dataclass(eq=False)
class Feasibility:
    global_lmi: LmiReport
    local_margins: list[float]
    riccati: list[dict] = field(default_factory=list)

    @property
    def local_ok(self) -> list[bool]:
        return [m > LMI_TOL for m in self.local_margins]

    @property
    def lmi_feasible(self) -> bool:
        return self.global_lmi.feasible and all(self.local_ok)

    @property
    def feasible(self) -> bool:
        return self.lmi_feasible and len(self.riccati) > 0 and all(r["bounded"] for r in self.riccati)

    def as_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "global_lmi": self.global_lmi.as_dict(),
            "local_lmi": [
                {"node": i + 1, "condition": "R_check > I", "min_eig": m, "feasible": ok}
                for i, (m, ok) in enumerate(zip(self.local_margins, self.local_ok))
            ],
            "riccati": self.riccati,
        }


@dataclass(eq=False)
class Design:
    scenario: Scenario
    coupling: CouplingData
    feasibility: Feasibility
    baseline: list[GainSchedule]
    detector: list[GainSchedule]
    solutions: list[RiccatiSolution]


def check_lmis(scenario: Scenario, gamma: float | None = None) -> tuple[CouplingData, Feasibility]:
    gamma = scenario.gamma if gamma is None else gamma
    coupling = build_coupling(scenario.topology, scenario.n)
    report = check_lmi_global(stacked_R(scenario), gamma, coupling)
    margins = [local_lmi_margin(node.weights.R_check) for node in scenario.nodes]
    return coupling, Feasibility(report, margins)


def synthesize(scenario: Scenario, h: float | None = None, max_workers: int | None = None) -> Design:
    """Run both design steps.

    Raises ``InfeasibleError`` (with ``.feasibility`` attached) when the LMIs
    fail and ``RiccatiBoundError`` when a node's Riccati solution is unbounded.
    """
    coupling, feas = check_lmis(scenario)
    if not feas.lmi_feasible:
        err = InfeasibleError(
            f"LMI conditions not satisfied: global min eig {feas.global_lmi.min_eig:.6g}, "
            f"local margins {[round(m, 9) for m in feas.local_margins]}"
        )
        err.feasibility = feas  # type: ignore[attr-defined]
        raise err

    def one(i):
        try:
            return solve_node(scenario, i, h=h)
        except RiccatiBoundError as exc:
            feas.riccati = [{"node": i + 1, "bounded": False, "error": str(exc)}]
            exc.feasibility = feas  # type: ignore[attr-defined]
            raise

    results = _map(one, range(scenario.N), max_workers)
    feas.riccati = [
        {"node": i + 1, "bounded": True, "alpha1": sol.alpha1, "alpha2": sol.alpha2}
        for i, (sol, _) in enumerate(results)
    ]
    baseline = design_baseline_observer(scenario, h=h, max_workers=max_workers)
    logger.info("synthesis done: global LMI min eig %.4g", feas.global_lmi.min_eig)
    return Design(
        scenario=scenario,
        coupling=coupling,
        feasibility=feas,
        baseline=baseline,
        detector=[g for _, g in results],
        solutions=[s for s, _ in results],
    )


@dataclass(frozen=True)
class SweepRow:
    gamma: float
    lmi_min_eig: float
    lmi_feasible: bool
    local_ok: bool
    riccati_bounded: tuple[bool, ...]

    @property
    def feasible(self) -> bool:
        return self.lmi_feasible and self.local_ok and all(self.riccati_bounded)


def sweep_gamma(scenario: Scenario, gammas: Sequence[float], h: float | None = None) -> list[SweepRow]:
    """Feasibility table over ``gammas``; failures are recorded, never raised."""
    rows: list[SweepRow] = []
    coupling = build_coupling(scenario.topology, scenario.n)
    R = stacked_R(scenario)
    local_ok = all(check_lmi_local(node.weights.R_check) for node in scenario.nodes)
    ds = scenario.config.design
    for gamma in gammas:
        rep = check_lmi_global(R, gamma, coupling)
        bounded = []
        for i, node in enumerate(scenario.nodes):
            try:
                integrate_riccati(
                    node_system(scenario, i), node.weights.R_bold, gamma, node.weights.X_bold,
                    scenario.grid, _riccati_step(scenario, h),
                    alpha_min=ds.alpha_min, alpha_max=ds.alpha_max, node=i,
                )
                bounded.append(True)
            except RiccatiBoundError:
                bounded.append(False)
        rows.append(SweepRow(float(gamma), rep.min_eig, rep.feasible, local_ok, tuple(bounded)))
    return rows
