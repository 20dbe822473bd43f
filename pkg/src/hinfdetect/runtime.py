"""Closed-loop simulation of plant, observer network and detector network.

The network is simulated centrally: one stacked state
``(x, xhat_1..N, ehat_1..N, epshat_1..N)`` is advanced by fixed-step RK4 and
message passing is modelled by direct reads of ``W_ij xhat_j`` and
``W_ij ehat_j``.  Each detector realises the generic detector form with state
``mu_i = (ehat_i, epshat_i)`` and output map ``[0 Upsilon_i]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DivergenceError, ParameterError
from .model import Scenario, time_grid
from .signals import channel_seed, sample
from .synthesis import GainSchedule, detector_only_gains

DIVERGENCE_NORM = 1e12


@dataclass(frozen=True)
class Innovations:
    zeta: np.ndarray
    zeta_links: dict[int, np.ndarray]


def innovations(y_i, c_links: dict, xhat_i, C_i, W: dict) -> Innovations:
    """``zeta_i = y_i - C_i xhat_i`` and ``zeta_ij = c_ij - W_ij xhat_i``."""
    xhat_i = np.asarray(xhat_i, dtype=float)
    zeta = np.asarray(y_i, dtype=float) - np.asarray(C_i) @ xhat_i
    return Innovations(zeta, {j: np.asarray(c, dtype=float) - W[j] @ xhat_i for j, c in c_links.items()})


def observer_rhs(A, xhat_i, innov: Innovations, L_i, K: dict, F_i=None, f_i=None) -> np.ndarray:
    """Observer update; the injection ``F_i f_i`` is present only on hijacked nodes."""
    out = A @ xhat_i + L_i @ innov.zeta
    for j, zij in innov.zeta_links.items():
        out = out + K[j] @ zij
    if F_i is not None and f_i is not None:
        out = out + F_i @ f_i
    return out


def detector_rhs(
    A, C_i, ehat_i, epshat_i, innov: Innovations, W_ehat_nbrs: dict, W: dict,
    L_i, K: dict, L_bar, K_bar: dict, L_check, K_check: dict, F_i, Omega, Upsilon,
) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives ``(d ehat_i/dt, d epshat_i/dt)`` of one detector node.

    ``W_ehat_nbrs[j]`` is the message ``W_ij ehat_j`` received from neighbour
    ``j``; the drift ``(A - L C - sum K W) ehat_i + sum K W ehat_j`` is
    evaluated in vector form.
    """
    r = innov.zeta - C_i @ ehat_i
    de = A @ ehat_i - L_i @ (C_i @ ehat_i) - F_i @ (Upsilon @ epshat_i) + L_bar @ r
    deps = Omega @ epshat_i + L_check @ r
    for j, msg in W_ehat_nbrs.items():
        W_ehat_i = W[j] @ ehat_i
        de = de + K[j] @ (msg - W_ehat_i)
        r_ij = innov.zeta_links[j] - W_ehat_i + msg
        de = de + K_bar[j] @ r_ij
        deps = deps + K_check[j] @ r_ij
    return de, deps


@dataclass(eq=False)
class SimResult:
    """Trajectories on the simulation grid; per-node entries are lists indexed by node."""

    times: np.ndarray
    step: float
    x: np.ndarray
    w: np.ndarray
    xhat: list[np.ndarray]
    e_hat: list[np.ndarray]
    eps_hat: list[np.ndarray]
    phi: list[np.ndarray]
    f: list[np.ndarray]
    v: list[np.ndarray]
    v_links: list[dict[int, np.ndarray]]
    zeta: list[np.ndarray]
    zeta_links: list[dict[int, np.ndarray]]
    hijacked: list[bool]
    metadata: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.xhat)

    @property
    def e(self) -> list[np.ndarray]:
        return [self.x - xh for xh in self.xhat]

    @property
    def z(self) -> list[np.ndarray]:
        return [self.x - xh - eh for xh, eh in zip(self.xhat, self.e_hat)]


def without_attacks(scenario: Scenario) -> Scenario:
    """Same scenario with every node honest (used for threshold calibration)."""
    cfg = scenario.config
    nodes = tuple(replace(nd, attack=None) for nd in cfg.nodes)
    return replace(scenario, config=replace(cfg, nodes=nodes))


def _noise(spec, label: str, seed: int, times: np.ndarray) -> np.ndarray:
    return sample(spec, times, seed=channel_seed(seed, label))


@dataclass
class _NodeStage:
    """Everything node ``i`` needs at every RK4 stage time, indexed by stage."""

    C: np.ndarray
    D_v: np.ndarray
    f: np.ndarray
    L: np.ndarray
    K: dict
    L_bar: np.ndarray
    K_bar: dict
    L_check: np.ndarray
    K_check: dict
    Hv: dict
    W: dict
    F: np.ndarray
    Omega: np.ndarray
    Upsilon: np.ndarray
    hijacked: bool


def simulate(
    scenario: Scenario,
    baseline: list[GainSchedule],
    detector: list[GainSchedule],
    horizon: float | None = None,
    step: float | None = None,
    seed: int | None = None,
    gain_mode: str | None = None,
) -> SimResult:
    """Fixed-step RK4 simulation of the closed loop.

    Disturbances and attacks are sampled at the RK4 stage times; gains are
    linearly interpolated there.  Raises ``DivergenceError`` when the stacked
    state norm exceeds ``1e12``.
    """
    sim = scenario.config.sim
    horizon = sim.horizon if horizon is None else float(horizon)
    h = sim.step if step is None else float(step)
    seed = sim.seed if seed is None else int(seed)
    gain_mode = sim.gain_mode if gain_mode is None else gain_mode
    if h <= 0:
        raise ParameterError("step must be positive")
    if gain_mode not in ("scheduled", "frozen"):
        raise ParameterError(f"unknown gain mode {gain_mode!r}")
    grid = time_grid(horizon, h)
    K = grid.size
    stage_t = 0.5 * h * np.arange(2 * K - 1)

    pl = scenario.plant
    n, N = pl.n, scenario.N
    topo = scenario.topology
    A_t = pl.A.evaluate(stage_t)
    B_t = pl.B.evaluate(stage_t)
    Bw = np.einsum("sij,sj->si", B_t, _noise(pl.w, "w", seed, stage_t))

    nodes: list[_NodeStage] = []
    for i, nd in enumerate(scenario.nodes):
        edges = topo.in_edges(i)
        det = detector[i]
        base = baseline[i]
        if gain_mode == "frozen":
            det, base = det.frozen(stage_t), base.frozen(stage_t)
        else:
            det, base = det.sample(stage_t), base.sample(stage_t)
        if det.sources != tuple(e.source for e in edges) or base.sources != det.sources:
            raise ParameterError(f"gain schedule of node {i + 1} does not match its neighbourhood")
        split = detector_only_gains(det, base)
        bb = base.blocks()
        D_t = nd.sensor.D.evaluate(stage_t)
        v_i = _noise(nd.v, f"v{i + 1}", seed, stage_t)
        f_i = sample(nd.attack, stage_t) if nd.attack is not None else np.zeros((stage_t.size, nd.tracker.n_f))
        nodes.append(
            _NodeStage(
                C=nd.sensor.C.evaluate(stage_t),
                D_v=np.einsum("sij,sj->si", D_t, v_i),
                f=f_i,
                L=bb["L_hat"],
                K=bb["K_hat"],
                L_bar=split["L_bar"],
                K_bar=split["K_bar"],
                L_check=split["L_check"],
                K_check=split["K_check"],
                Hv={e.source: _noise(e.v, f"v{e.label}", seed, stage_t) @ e.H.T for e in edges},
                W={e.source: e.W for e in edges},
                F=nd.tracker.F,
                Omega=nd.tracker.Omega,
                Upsilon=nd.tracker.Upsilon,
                hijacked=nd.hijacked,
            )
        )

    # stacked layout
    sl_x = slice(0, n)
    sl_xh = [slice(n + i * n, n + (i + 1) * n) for i in range(N)]
    off = n + 2 * N * n
    sl_eh = [slice(n + (N + i) * n, n + (N + i + 1) * n) for i in range(N)]
    sl_ep = []
    for nd in scenario.nodes:
        sl_ep.append(slice(off, off + nd.tracker.dim))
        off += nd.tracker.dim
    dim = off

    def rhs(s: np.ndarray, k: int) -> np.ndarray:
        A = A_t[k]
        x = s[sl_x]
        ds = np.empty_like(s)
        ds[sl_x] = A @ x + Bw[k]
        xh = [s[sl] for sl in sl_xh]
        eh = [s[sl] for sl in sl_eh]
        for i, st in enumerate(nodes):
            C = st.C[k]
            y = C @ x + st.D_v[k]
            c_links = {j: st.W[j] @ xh[j] + st.Hv[j][k] for j in st.W}
            inn = innovations(y, c_links, xh[i], C, st.W)
            ds[sl_xh[i]] = observer_rhs(
                A, xh[i], inn, st.L[k], {j: g[k] for j, g in st.K.items()},
                st.F if st.hijacked else None, st.f[k] if st.hijacked else None,
            )
            de, dep = detector_rhs(
                A, C, eh[i], s[sl_ep[i]], inn, {j: st.W[j] @ eh[j] for j in st.W}, st.W,
                st.L[k], {j: g[k] for j, g in st.K.items()},
                st.L_bar[k], {j: g[k] for j, g in st.K_bar.items()},
                st.L_check[k], {j: g[k] for j, g in st.K_check.items()},
                st.F, st.Omega, st.Upsilon,
            )
            ds[sl_eh[i]] = de
            ds[sl_ep[i]] = dep
        return ds

    s = np.zeros(dim)
    s[sl_x] = pl.x0
    for i, nd in enumerate(scenario.nodes):
        s[sl_xh[i]] = nd.xi
    traj = np.empty((K, dim))
    traj[0] = s
    for k in range(K - 1):
        k1 = rhs(s, 2 * k)
        k2 = rhs(s + 0.5 * h * k1, 2 * k + 1)
        k3 = rhs(s + 0.5 * h * k2, 2 * k + 1)
        k4 = rhs(s + h * k3, 2 * k + 2)
        s = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        nrm = float(np.linalg.norm(s))
        if not nrm <= DIVERGENCE_NORM:
            raise DivergenceError(float(grid[k + 1]), nrm)
        traj[k + 1] = s

    g = slice(None, None, 2)
    x = traj[:, sl_x]
    xhat = [traj[:, sl] for sl in sl_xh]
    e_hat = [traj[:, sl] for sl in sl_eh]
    eps_hat = [traj[:, sl] for sl in sl_ep]
    zeta, zeta_links, v, v_links = [], [], [], []
    for i, (nd, st) in enumerate(zip(scenario.nodes, nodes)):
        zeta.append(np.einsum("kij,kj->ki", st.C[g], x - xhat[i]) + st.D_v[g])
        zeta_links.append({j: (xhat[j] - xhat[i]) @ st.W[j].T + st.Hv[j][g] for j in st.W})
        v.append(_noise(nd.v, f"v{i + 1}", seed, grid))
        v_links.append({e.source: _noise(e.v, f"v{e.label}", seed, grid) for e in topo.in_edges(i)})
    return SimResult(
        times=grid,
        step=h,
        x=x,
        w=_noise(pl.w, "w", seed, grid),
        xhat=xhat,
        e_hat=e_hat,
        eps_hat=eps_hat,
        phi=[eps @ nd.tracker.Upsilon.T for eps, nd in zip(eps_hat, scenario.nodes)],
        f=[st.f[g] for st in nodes],
        v=v,
        v_links=v_links,
        zeta=zeta,
        zeta_links=zeta_links,
        hijacked=[nd.hijacked for nd in scenario.nodes],
        metadata={"seed": seed, "gain_mode": gain_mode, "horizon": horizon},
    )
