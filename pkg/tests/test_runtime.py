import copy

import numpy as np
import pytest
from conftest import build, random_network_dict, ring3_dict, scalar_dict

from hinfdetect import metrics
from hinfdetect.errors import DivergenceError, ParameterError
from hinfdetect.runtime import (
    detector_rhs,
    innovations,
    observer_rhs,
    simulate,
    without_attacks,
)
from hinfdetect.synthesis import GainSchedule, synthesize


def smooth(k):
    return {"kind": "decaying_sinusoid", "amplitude": 0.5, "frequency": 2.0 + k, "decay": 0.3}


# -- local update laws ----------------------------------------------------------


def test_innovation_examples():
    inn = innovations([3.0], {}, [1.0, 2.0], np.array([[1.0, 0.0]]), {})
    assert inn.zeta.tolist() == [2.0]
    C = np.array([[1.0, 1.0], [0.0, 2.0]])
    x = np.array([0.3, -0.7])
    assert np.array_equal(innovations(C @ x, {}, x, C, {}).zeta, [0.0, 0.0])
    xh = np.array([1.0, -1.0])
    inn = innovations([0.0], {4: xh}, xh, np.array([[0.0, 0.0]]), {4: np.eye(2)})
    assert np.array_equal(inn.zeta_links[4], [0.0, 0.0])


def test_observer_update_examples():
    A = np.array([[0.0, 1.0], [-2.0, -0.3]])
    xh = np.array([0.4, 1.2])
    zero = innovations(np.zeros(1), {1: xh}, xh, np.zeros((1, 2)), {1: np.eye(2)})
    L, K = np.ones((2, 1)), {1: np.ones((2, 2))}
    assert np.array_equal(observer_rhs(A, xh, zero, L, K), A @ xh)
    F = np.array([[1.0], [0.0]])
    out = observer_rhs(A, np.zeros(2), innovations(np.zeros(1), {}, np.zeros(2), np.zeros((1, 2)), {}), L, {}, F, np.array([1.0]))
    assert np.array_equal(out, [1.0, 0.0])
    inn = innovations(np.array([0.7]), {1: np.array([0.1, 0.2])}, xh, np.array([[1.0, 0.5]]), {1: np.eye(2)})
    assert np.array_equal(observer_rhs(A, xh, inn, L, K), observer_rhs(A, xh, inn, L, K, F, np.zeros(1)))


def detector_args(n=2, n_f=1, q=1, seed=0):
    rng = np.random.default_rng(seed)
    from hinfdetect.model import build_tracker

    tr = build_tracker(0.7, 1.3, n_f, rng.normal(size=(n, n_f)))
    p = 1
    W = {j: rng.normal(size=(n, n)) for j in range(q)}
    return dict(
        A=rng.normal(size=(n, n)),
        C_i=rng.normal(size=(p, n)),
        W=W,
        L_i=rng.normal(size=(n, p)),
        K={j: rng.normal(size=(n, n)) for j in range(q)},
        L_bar=rng.normal(size=(n, p)),
        K_bar={j: rng.normal(size=(n, n)) for j in range(q)},
        L_check=rng.normal(size=(2 * n_f, p)),
        K_check={j: rng.normal(size=(2 * n_f, n)) for j in range(q)},
        F_i=tr.F,
        Omega=tr.Omega,
        Upsilon=tr.Upsilon,
    )


def test_detector_equilibrium_at_origin():
    a = detector_args()
    inn = innovations(np.zeros(1), {0: np.zeros(2)}, np.zeros(2), a["C_i"], a["W"])
    de, deps = detector_rhs(ehat_i=np.zeros(2), epshat_i=np.zeros(2), innov=inn, W_ehat_nbrs={0: np.zeros(2)}, **a)
    assert not de.any() and not deps.any()


def test_detector_without_neighbours_is_local():
    a = detector_args(q=0)
    rng = np.random.default_rng(3)
    e, eps, zeta = rng.normal(size=2), rng.normal(size=2), rng.normal(size=1)
    inn = innovations(zeta + a["C_i"] @ np.zeros(2), {}, np.zeros(2), a["C_i"], {})
    de, deps = detector_rhs(ehat_i=e, epshat_i=eps, innov=inn, W_ehat_nbrs={}, **a)
    r = zeta - a["C_i"] @ e
    np.testing.assert_allclose(de, a["A"] @ e - a["L_i"] @ a["C_i"] @ e - a["F_i"] @ a["Upsilon"] @ eps + a["L_bar"] @ r, atol=1e-14)
    np.testing.assert_allclose(deps, a["Omega"] @ eps + a["L_check"] @ r, atol=1e-14)


def test_scalar_detector_matches_dense_assembly():
    a, L, Lb, Lc1, Lc2, beta, c, F = -0.4, 0.9, 0.35, 0.6, -0.25, 0.7, 1.5, 0.8
    args = dict(
        A=np.array([[a]]), C_i=np.array([[c]]), W={}, L_i=np.array([[L]]), K={}, L_bar=np.array([[Lb]]), K_bar={},
        L_check=np.array([[Lc1], [Lc2]]), K_check={}, F_i=np.array([[F]]),
        Omega=np.array([[0.0, 1.0], [0.0, -2 * beta]]), Upsilon=np.array([[1.0, 0.0]]),
    )
    M = np.array(
        [
            [a - L * c - Lb * c, -F, 0.0],
            [-Lc1 * c, 0.0, 1.0],
            [-Lc2 * c, 0.0, -2 * beta],
        ]
    )
    G = np.array([Lb, Lc1, Lc2])
    s, zeta = np.array([0.3, -1.1, 0.45]), 0.8
    inn = innovations(np.array([zeta]), {}, np.zeros(1), args["C_i"], {})
    de, deps = detector_rhs(ehat_i=s[:1], epshat_i=s[1:], innov=inn, W_ehat_nbrs={}, **args)
    np.testing.assert_allclose(np.concatenate([de, deps]), M @ s + G * zeta, rtol=0, atol=1e-15)


# -- closed-loop simulation ----------------------------------------------------------


@pytest.fixture(scope="module")
def ring_design():
    sc = build(ring3_dict(horizon=4.0))
    return sc, synthesize(sc)


def test_exact_initialisation_keeps_errors_at_zero(ring_design):
    sc, des = ring_design
    d = ring3_dict(horizon=4.0, attack=False)
    for nd in d["nodes"]:
        nd["xi"] = d["plant"]["x0"]
    sc0 = build(d)
    res = simulate(sc0, des.baseline, des.detector)
    for i in range(sc0.N):
        assert np.abs(res.e[i]).max() < 1e-10
        assert np.abs(res.e_hat[i]).max() < 1e-10
        assert np.abs(res.phi[i]).max() < 1e-10


def test_honest_noise_free_errors_decay(ring_design):
    sc, des = ring_design
    sc0 = build(ring3_dict(horizon=4.0, attack=False))
    res = simulate(sc0, des.baseline, des.detector)
    for i in range(sc0.N):
        norms = metrics.error_norms(res, sc0, i)
        assert norms[-1] < 0.5 * norms[0]
        assert metrics.decay_fit(norms, res.times)[1] > 0.1


def test_linearity(ring_design):
    sc, des = ring_design
    d = ring3_dict(horizon=4.0, noise_seed=3)
    d2 = copy.deepcopy(d)
    d2["plant"]["x0"] = [2 * v for v in d["plant"]["x0"]]
    for nd in d2["nodes"]:
        nd["xi"] = [2 * v for v in nd["xi"]]
        nd["v"]["amplitude"] *= 2
    d2["nodes"][0]["attack"]["amplitude"] = 2.0
    d2["plant"]["w"]["amplitude"] *= 2
    for e in d2["edges"]:
        e["v"]["amplitude"] *= 2
    r1 = simulate(build(d), des.baseline, des.detector)
    r2 = simulate(build(d2), des.baseline, des.detector)
    for i in range(3):
        for a, b in ((r1.e[i], r2.e[i]), (r1.z[i], r2.z[i]), (r1.eps_hat[i], r2.eps_hat[i]), (r1.phi[i], r2.phi[i])):
            assert np.linalg.norm(b - 2 * a) <= 1e-9 * np.linalg.norm(2 * a)


def permute_dict(d, perm):
    """Relabel node ``k`` (0-based) as ``perm[k]``."""
    out = copy.deepcopy(d)
    out["nodes"] = [None] * len(d["nodes"])
    for k, nd in enumerate(d["nodes"]):
        out["nodes"][perm[k]] = copy.deepcopy(nd)
    for e in out["edges"]:
        e["from"] = perm[e["from"] - 1] + 1
        e["to"] = perm[e["to"] - 1] + 1
    return out


@pytest.mark.parametrize("seed", [0, 1])
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    d = random_network_dict(rng, N=3, horizon=1.0)
    perm = [2, 0, 1]
    sa, sb = build(d), build(permute_dict(d, perm))
    da, db = synthesize(sa), synthesize(sb)
    ra = simulate(sa, da.baseline, da.detector)
    rb = simulate(sb, db.baseline, db.detector)
    np.testing.assert_allclose(rb.x, ra.x, rtol=0, atol=1e-12)
    for k in range(3):
        for a, b in ((ra.xhat[k], rb.xhat[perm[k]]), (ra.e_hat[k], rb.e_hat[perm[k]]), (ra.phi[k], rb.phi[perm[k]])):
            assert np.linalg.norm(b - a) <= 1e-9 * max(np.linalg.norm(a), 1e-300)


def test_error_dynamics_consistency_and_sign():
    rng = np.random.default_rng(0)
    d = random_network_dict(rng, horizon=3.0)
    d["sim"]["step"] = 1e-3
    d["plant"]["w"] = smooth(0)
    for k, nd in enumerate(d["nodes"]):
        nd["v"] = smooth(k + 1)
    for k, e in enumerate(d["edges"]):
        e["v"] = smooth(k + 4)
    sc = build(d)
    des = synthesize(sc)
    res = simulate(sc, des.baseline, des.detector)
    coupled = [i for i in range(sc.N) if sc.topology.in_degree(i) > 0]
    assert coupled
    for i in range(sc.N):
        assert metrics.error_dynamics_residual(res, sc, des.detector[i], i) < 1e-3
    # flipping the sign of the neighbour term K_hat W z_j breaks the match
    i = coupled[0]
    dz, _ = metrics.error_dynamics(res, sc, des.detector[i], i)
    K_hat = des.detector[i].sample(res.times).blocks()["K_hat"]
    flipped = dz.copy()
    for e in sc.topology.in_edges(i):
        flipped -= 2 * np.einsum("kij,kj->ki", K_hat[e.source], res.z[e.source] @ e.W.T)
    fd = (res.z[i][2:] - res.z[i][:-2]) / (2 * res.step)
    assert np.linalg.norm(fd - flipped[1:-1]) > 1e-3 * np.linalg.norm(flipped[1:-1])


def test_frozen_gain_mode_runs_and_differs(ring_design):
    sc, des = ring_design
    sched = simulate(sc, des.baseline, des.detector, horizon=1.0)
    frozen = simulate(sc, des.baseline, des.detector, horizon=1.0, gain_mode="frozen")
    assert frozen.metadata["gain_mode"] == "frozen"
    assert not np.array_equal(sched.xhat[0], frozen.xhat[0])
    with pytest.raises(ParameterError):
        simulate(sc, des.baseline, des.detector, horizon=1.0, gain_mode="adaptive")


def test_divergence_is_reported():
    d = scalar_dict(horizon=10.0)
    d["plant"]["A"] = [[5.0]]
    sc = build(d)
    t = sc.grid
    base = GainSchedule(t, np.zeros((t.size, 1, 1)), 1, 0, (1,), ())
    det = GainSchedule(t, np.zeros((t.size, 3, 1)), 1, 2, (1,), ())
    with pytest.raises(DivergenceError) as info:
        simulate(sc, [base], [det])
    assert 0 < info.value.t < 10


def test_mismatched_gain_schedule_is_rejected(ring_design):
    sc, des = ring_design
    with pytest.raises(ParameterError):
        simulate(sc, des.baseline, des.detector[::-1], horizon=0.5)


def test_without_attacks_drops_only_attacks():
    sc = build(ring3_dict(horizon=1.0, noise_seed=1))
    honest = without_attacks(sc)
    assert all(nd.attack is None for nd in honest.nodes)
    assert honest.nodes[0].v == sc.nodes[0].v
    assert sc.nodes[0].attack is not None
