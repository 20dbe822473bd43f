"""Post-processing of simulation results.

All integrals are trapezoidal over the recorded grid and cover the finite
horizon only; convergence is judged by the share of the integral that falls
in the last 10% of the horizon.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError, InsufficientDataError
from .model import Scenario, TrackerSpec
from .runtime import SimResult
from .signals import sample
from .synthesis import GainSchedule

TAIL_WINDOW = 0.10
SETTLE_WINDOW = 0.05
TAIL_PASS = 0.01
HINF_SLACK = 0.05
MIN_STEPS = 20


def _trapz_running(values: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(values, dtype=float)
    out[1:] = np.cumsum(0.5 * h * (values[1:] + values[:-1]))
    return out


def _sq(a: np.ndarray) -> np.ndarray:
    return np.sum(np.asarray(a, dtype=float).reshape(len(a), -1) ** 2, axis=1)


@dataclass
class TrackingReport:
    node: int
    integral: float
    tail_fraction: float
    settled: list[float]
    verdict: bool
    running: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("running")
        d["node"] = self.node + 1
        return d


def tracking_from_series(phi, f, h: float, node: int = 0) -> TrackingReport:
    phi = np.asarray(phi, dtype=float).reshape(len(phi), -1)
    f = np.asarray(f, dtype=float).reshape(len(f), -1)
    K = phi.shape[0]
    if K - 1 < MIN_STEPS:
        raise InsufficientDataError(f"need at least {MIN_STEPS} steps, got {K - 1}")
    sq = _sq(phi - f)
    running = _trapz_running(sq, h)
    total = float(running[-1])
    k_tail = int(np.floor((1.0 - TAIL_WINDOW) * (K - 1)))
    # integrate the window directly; differencing running totals loses small tails
    tail = float(np.trapezoid(sq[k_tail:], dx=h))
    frac = tail / total if total > 0 else 0.0
    n_settle = max(1, int(round(SETTLE_WINDOW * (K - 1))))
    settled = phi[-n_settle:].mean(axis=0)
    return TrackingReport(node, total, frac, [float(s) for s in settled], frac < TAIL_PASS, running)


def tracking_error(result: SimResult, i: int) -> TrackingReport:
    """Convergence of detector output ``phi_i`` to the injected attack ``f_i``."""
    return tracking_from_series(result.phi[i], result.f[i], result.step, node=i)


def reconstruct_tracker_state(tracker: TrackerSpec, times: np.ndarray, f: np.ndarray, f_mid: np.ndarray | None = None):
    """Integrate ``eps' = Omega eps + Gamma (Upsilon eps - f)``, ``eps(0) = 0``, by RK4.

    ``f_mid`` holds ``f`` at the step midpoints; when omitted it is linearly
    interpolated from ``f``.  Returns ``(eps, nu)`` with ``nu = Upsilon eps - f``.
    """
    f = np.asarray(f, dtype=float).reshape(len(times), -1)
    if f_mid is None:
        f_mid = 0.5 * (f[1:] + f[:-1])
    M = tracker.Omega + tracker.Gamma @ tracker.Upsilon
    G = -tracker.Gamma
    eps = np.zeros((len(times), tracker.dim))
    e = eps[0]
    for k in range(len(times) - 1):
        h = times[k + 1] - times[k]
        k1 = M @ e + G @ f[k]
        k2 = M @ (e + 0.5 * h * k1) + G @ f_mid[k]
        k3 = M @ (e + 0.5 * h * k2) + G @ f_mid[k]
        k4 = M @ (e + h * k3) + G @ f[k + 1]
        e = e + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        eps[k + 1] = e
    return eps, eps @ tracker.Upsilon.T - f


def tracker_errors(result: SimResult, scenario: Scenario, i: int):
    """``(eps_i, nu_i, delta_i)`` reconstructed along the recorded attack."""
    nd = scenario.nodes[i]
    t = result.times
    f_mid = None
    if nd.attack is not None:
        f_mid = sample(nd.attack, 0.5 * (t[1:] + t[:-1]))
    eps, nu = reconstruct_tracker_state(nd.tracker, t, result.f[i], f_mid)
    return eps, nu, eps - result.eps_hat[i]


@dataclass
class HinfReport:
    node: int
    lhs: float
    rhs: float
    ratio: float
    satisfied: bool
    initial_term: float
    nu_energy: float

    def as_dict(self) -> dict:
        d = asdict(self)
        d["node"] = self.node + 1
        return d


def hinf_ratio(result: SimResult, scenario: Scenario, i: int, slack: float = HINF_SLACK) -> HinfReport:
    """Local attenuation check for node ``i``.

    ``LHS = int z'R z + delta'R_check delta`` and
    ``RHS = gamma^2 (|x0 - xi|_X^2 + int |w|^2 + |nu|^2 + |v_i|^2
    + sum_j (|v_ij|^2 + |W_ij z_j|^2_{Z_ij^-1}))``.  The ``nu`` term vanishes
    for attack-free runs.
    """
    nd = scenario.nodes[i]
    h = result.step
    gamma = scenario.gamma
    z = result.z
    _, nu, delta = tracker_errors(result, scenario, i)
    R, Rc = nd.weights.R, nd.weights.R_check
    lhs_t = np.einsum("ki,ij,kj->k", z[i], R, z[i]) + np.einsum("ki,ij,kj->k", delta, Rc, delta)
    dist = _sq(result.w) + _sq(nu) + _sq(result.v[i])
    for e in scenario.topology.in_edges(i):
        j = e.source
        Wz = z[j] @ e.W.T
        dist = dist + _sq(result.v_links[i][j]) + np.einsum("ki,ij,kj->k", Wz, np.linalg.inv(e.Z), Wz)
    z0 = scenario.plant.x0 - nd.xi
    init = float(z0 @ nd.weights.X @ z0)
    lhs = float(np.trapezoid(lhs_t, dx=h))
    rhs = gamma**2 * (init + float(np.trapezoid(dist, dx=h)))
    if rhs == 0.0:
        ratio = 0.0 if lhs == 0.0 else float("inf")
    else:
        ratio = lhs / rhs
    return HinfReport(i, lhs, rhs, ratio, ratio <= 1.0 + slack, init, float(np.trapezoid(_sq(nu), dx=h)))


def decay_fit(series, times) -> tuple[float, float]:
    """Fit ``series ~ c * exp(-rate * t)`` on the second half of the horizon.

    Values are floored at ``1e-300``; if the series hits exactly zero, the fit
    uses the prefix before the first zero.
    """
    y = np.asarray(series, dtype=float)
    t = np.asarray(times, dtype=float)
    if y.size != t.size or y.size < 2:
        raise DomainError("series and times must have equal length >= 2")
    zeros = np.flatnonzero(y == 0.0)
    if zeros.size:
        stop = max(int(zeros[0]), 2)
        y, t = y[:stop], t[:stop]
    y = np.maximum(y, 1e-300)
    mid = t[0] + 0.5 * (t[-1] - t[0])
    sel = t >= mid
    if sel.sum() < 2:
        sel = np.ones_like(t, dtype=bool)
    slope, intercept = np.polyfit(t[sel], np.log(y[sel]), 1)
    return float(np.exp(intercept)), float(-slope)


@dataclass(frozen=True)
class DetectionEvent:
    onset: float
    confirmed: float
    end: float | None


def detect(series, times, threshold: float, dwell: float) -> list[DetectionEvent]:
    """Events where ``|phi(t)| > threshold`` holds continuously for ``dwell`` seconds."""
    if not threshold > 0 or not dwell > 0:
        raise DomainError("threshold and dwell must be positive")
    s = np.asarray(series, dtype=float)
    mag = np.abs(s) if s.ndim == 1 else np.linalg.norm(s.reshape(len(s), -1), axis=1)
    t = np.asarray(times, dtype=float)
    above = mag > threshold
    events = []
    k, K = 0, len(t)
    while k < K:
        if not above[k]:
            k += 1
            continue
        start = k
        while k < K and above[k]:
            k += 1
        last = k - 1
        if t[last] - t[start] >= dwell - 1e-12:
            confirm = int(np.searchsorted(t, t[start] + dwell - 1e-12))
            events.append(DetectionEvent(float(t[start]), float(t[confirm]), float(t[k]) if k < K else None))
    return events


def calibrate_threshold(phi_series, floor: float = 0.0) -> float:
    """Three times the 95th percentile of ``|phi|`` from an attack-free run."""
    s = np.asarray(phi_series, dtype=float)
    mag = np.abs(s) if s.ndim == 1 else np.linalg.norm(s.reshape(len(s), -1), axis=1)
    return max(3.0 * float(np.percentile(mag, 95)), floor)


def error_norms(result: SimResult, scenario: Scenario, i: int) -> np.ndarray:
    """``|(z_i(t), delta_i(t))|`` on the grid."""
    _, _, delta = tracker_errors(result, scenario, i)
    return np.sqrt(_sq(result.z[i]) + _sq(delta))


def error_dynamics(
    result: SimResult, scenario: Scenario, detector: GainSchedule, i: int
) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand side of the ``(z_i, delta_i)`` error equations on the grid.

    Built only from recorded signals and the stacked gain ``L_i``; returns
    ``(dz, ddelta)`` of shape ``(K, n)`` and ``(K, 2 n_f)``.
    """
    nd = scenario.nodes[i]
    t = result.times
    A = scenario.plant.A.evaluate(t)
    B = scenario.plant.B.evaluate(t)
    C = nd.sensor.C.evaluate(t)
    D = nd.sensor.D.evaluate(t)
    blk = detector.sample(t).blocks()
    Lh, Lc = blk["L_hat"], blk["L_check"]
    tr = nd.tracker
    z = result.z
    _, nu, delta = tracker_errors(result, scenario, i)
    zi = z[i]
    Dv = np.einsum("kij,kj->ki", D, result.v[i])
    Cz = np.einsum("kij,kj->ki", C, zi)
    dz = (
        np.einsum("kij,kj->ki", A, zi)
        - np.einsum("kij,kj->ki", Lh, Cz + Dv)
        - delta @ (tr.F @ tr.Upsilon).T
        + np.einsum("kij,kj->ki", B, result.w)
        + nu @ tr.F.T
    )
    dd = delta @ tr.Omega.T - np.einsum("kij,kj->ki", Lc, Cz + Dv) + nu @ tr.Gamma.T
    for e in scenario.topology.in_edges(i):
        j = e.source
        # zeta_ij - W (ehat_i - ehat_j) = W z_i - W z_j + H v_ij
        r = (zi - z[j]) @ e.W.T + result.v_links[i][j] @ e.H.T
        dz = dz - np.einsum("kij,kj->ki", blk["K_hat"][j], r)
        dd = dd - np.einsum("kij,kj->ki", blk["K_check"][j], r)
    return dz, dd


def error_dynamics_residual(result: SimResult, scenario: Scenario, detector: GainSchedule, i: int) -> float:
    """Relative mismatch between centred differences of ``(z_i, delta_i)`` and their RHS."""
    dz, dd = error_dynamics(result, scenario, detector, i)
    _, _, delta = tracker_errors(result, scenario, i)
    lam = np.hstack([result.z[i], delta])
    rhs = np.hstack([dz, dd])[1:-1]
    fd = (lam[2:] - lam[:-2]) / (2.0 * result.step)
    scale = np.linalg.norm(rhs)
    return float(np.linalg.norm(fd - rhs) / scale) if scale > 0 else float(np.linalg.norm(fd))


def node_report(result: SimResult, scenario: Scenario, i: int, threshold: float, dwell: float) -> dict:
    """Per-node JSON record ``{node, tracking, hinf, decay, detections}``."""
    tr = tracking_error(result, i)
    hi = hinf_ratio(result, scenario, i)
    c, rate = decay_fit(error_norms(result, scenario, i), result.times)
    events = detect(result.phi[i], result.times, threshold, dwell)
    return {
        "node": i + 1,
        "tracking": {k: v for k, v in tr.as_dict().items() if k != "node"},
        "hinf": {k: v for k, v in hi.as_dict().items() if k != "node"},
        "decay": {"c": c, "rate": rate},
        "detections": [{"onset": ev.onset, "confirmed": ev.confirmed, "end": ev.end} for ev in events],
        "threshold": threshold,
    }
