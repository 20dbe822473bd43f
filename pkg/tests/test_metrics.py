import copy

import numpy as np
import pytest
from conftest import build, ring3_dict
from hypothesis import given, settings
from hypothesis import strategies as st

from hinfdetect import metrics
from hinfdetect.errors import DomainError, InsufficientDataError
from hinfdetect.model import build_tracker
from hinfdetect.runtime import simulate, without_attacks
from hinfdetect.synthesis import synthesize

# -- tracking -------------------------------------------------------------------------


def test_perfect_tracking_is_zero():
    t = np.linspace(0, 10, 1001)
    f = np.where(t >= 5, 1 - np.exp(-2 * (t - 5)), 0.0)
    rep = metrics.tracking_from_series(f, f, 0.01)
    assert rep.integral == 0.0 and rep.tail_fraction == 0.0 and rep.verdict


def test_missed_constant_attack():
    h = 0.01
    t = np.arange(0, 10 + h / 2, h)
    rep = metrics.tracking_from_series(np.zeros_like(t), np.ones_like(t), h)
    assert rep.integral == pytest.approx(10.0, abs=1e-2)
    assert rep.tail_fraction == pytest.approx(0.1, abs=1e-3)
    assert not rep.verdict
    assert rep.settled == [0.0]


def test_tracking_needs_twenty_steps():
    with pytest.raises(InsufficientDataError):
        metrics.tracking_from_series(np.zeros(20), np.zeros(20), 0.1)
    metrics.tracking_from_series(np.zeros(21), np.zeros(21), 0.1)


@settings(max_examples=25, deadline=None)
@given(shift=st.floats(-5, 5), seed=st.integers(0, 2**20))
def test_tracking_invariant_to_common_shift(shift, seed):
    rng = np.random.default_rng(seed)
    phi, f = rng.normal(size=200), rng.normal(size=200)
    a = metrics.tracking_from_series(phi, f, 0.05)
    b = metrics.tracking_from_series(phi + shift, f + shift, 0.05)
    assert b.integral == pytest.approx(a.integral, rel=1e-9)
    assert b.tail_fraction == pytest.approx(a.tail_fraction, rel=1e-9)


def test_tracking_node_label_is_cosmetic():
    rng = np.random.default_rng(1)
    phi, f = rng.normal(size=100), rng.normal(size=100)
    a = metrics.tracking_from_series(phi, f, 0.1, node=0)
    b = metrics.tracking_from_series(phi, f, 0.1, node=4)
    assert a.integral == b.integral and a.as_dict()["node"] == 1 and b.as_dict()["node"] == 5


# -- decay fit ------------------------------------------------------------------------


def test_decay_fit_exact_exponential():
    t = np.linspace(0, 5, 501)
    c, rate = metrics.decay_fit(3.0 * np.exp(-2 * t), t)
    assert rate == pytest.approx(2.0, abs=1e-3)
    assert c == pytest.approx(3.0, rel=1e-6)


def test_decay_fit_constant_has_zero_rate():
    t = np.linspace(0, 5, 101)
    assert metrics.decay_fit(np.full_like(t, 0.7), t)[1] == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(lam=st.floats(0.1, 10.0), c=st.floats(0.01, 100.0))
def test_decay_fit_recovers_rate(lam, c):
    t = np.linspace(0, 10, 1001)
    assert metrics.decay_fit(c * np.exp(-lam * t), t)[1] == pytest.approx(lam, rel=1e-3)


def test_decay_fit_stops_at_exact_zero():
    t = np.linspace(0, 4, 401)
    y = np.exp(-t)
    y[300:] = 0.0
    assert metrics.decay_fit(y, t)[1] == pytest.approx(1.0, rel=1e-6)
    with pytest.raises(DomainError):
        metrics.decay_fit([1.0], [0.0])


# -- detection -------------------------------------------------------------------------


def test_quiet_output_raises_nothing():
    t = np.linspace(0, 10, 1001)
    assert metrics.detect(np.zeros_like(t), t, 0.5, 0.2) == []


def test_step_is_detected_at_onset():
    t = np.round(np.linspace(0, 10, 1001), 12)
    phi = np.where(t >= 5.0, 1.0, 0.0)
    (ev,) = metrics.detect(phi, t, 0.5, 0.2)
    assert ev.onset == pytest.approx(5.0)
    assert ev.confirmed == pytest.approx(5.2)
    assert ev.end is None


def test_short_spikes_are_ignored():
    t = np.round(np.linspace(0, 10, 1001), 12)
    phi = np.zeros_like(t)
    phi[100:110] = 1.0  # 0.09 s
    phi[500:700] = -2.0
    events = metrics.detect(phi, t, 0.5, 0.2)
    assert len(events) == 1
    assert events[0].onset == pytest.approx(5.0) and events[0].end == pytest.approx(7.0)


@pytest.mark.parametrize("threshold,dwell", [(0.0, 0.2), (0.5, 0.0), (-1.0, 1.0)])
def test_detect_rejects_non_positive_settings(threshold, dwell):
    with pytest.raises(DomainError):
        metrics.detect(np.zeros(10), np.arange(10.0), threshold, dwell)


def test_calibrated_threshold_has_floor():
    assert metrics.calibrate_threshold(np.zeros(50), floor=0.05) == 0.05
    assert metrics.calibrate_threshold(np.linspace(0, 1, 101)) == pytest.approx(3 * 0.95)


# -- tracker reconstruction --------------------------------------------------------------


def test_reconstructed_tracker_follows_bias_closed_loop():
    tr = build_tracker(1.0, 1.0, 1)
    h = 1e-3
    t = np.arange(0, 20 + h / 2, h)
    eps, nu = metrics.reconstruct_tracker_state(tr, t, np.ones_like(t))
    # eps'' + 2 eps' + eps = 1 from rest: eps = 1 - (1 + t) e^{-t}
    np.testing.assert_allclose(eps[:, 0], 1 - (1 + t) * np.exp(-t), atol=1e-10)
    assert abs(nu[-1, 0]) < 1e-6


# -- closed-loop metrics -----------------------------------------------------------------


@pytest.fixture(scope="module")
def ring():
    sc = build(ring3_dict(horizon=10.0, noise_seed=2))
    return sc, synthesize(sc)


def test_hinf_trivial_run(ring):
    sc, des = ring
    d = ring3_dict(horizon=10.0, attack=False)
    for nd in d["nodes"]:
        nd["xi"] = d["plant"]["x0"]
    sc0 = build(d)
    res = simulate(sc0, des.baseline, des.detector)
    for i in range(3):
        rep = metrics.hinf_ratio(res, sc0, i)
        assert rep.lhs == 0.0 and rep.rhs == 0.0 and rep.ratio == 0.0 and rep.satisfied


def test_hinf_scaling(ring):
    sc, des = ring
    d = ring3_dict(horizon=10.0, noise_seed=2)
    d2 = copy.deepcopy(d)
    d2["plant"]["x0"] = [2 * v for v in d["plant"]["x0"]]
    d2["plant"]["w"]["amplitude"] *= 2
    d2["nodes"][0]["attack"]["amplitude"] = 2.0
    for nd in d2["nodes"]:
        nd["xi"] = [2 * v for v in nd["xi"]]
        nd["v"]["amplitude"] *= 2
    for e in d2["edges"]:
        e["v"]["amplitude"] *= 2
    s1, s2 = build(d), build(d2)
    r1 = simulate(s1, des.baseline, des.detector)
    r2 = simulate(s2, des.baseline, des.detector)
    for i in range(3):
        a, b = metrics.hinf_ratio(r1, s1, i), metrics.hinf_ratio(r2, s2, i)
        assert b.lhs == pytest.approx(4 * a.lhs, rel=1e-9)
        assert b.rhs == pytest.approx(4 * a.rhs, rel=1e-9)
        assert b.ratio == pytest.approx(a.ratio, rel=1e-9)
        assert a.satisfied


def test_calibrated_threshold_no_false_alarm_on_honest_nodes(ring):
    sc, des = ring
    honest = without_attacks(sc)
    cal = simulate(honest, des.baseline, des.detector)
    res = simulate(sc, des.baseline, des.detector)
    for i in (1, 2):
        thr = metrics.calibrate_threshold(cal.phi[i], floor=0.05)
        assert metrics.detect(res.phi[i], res.times, thr, 0.2) == []


def test_node_report_layout(ring):
    sc, des = ring
    res = simulate(sc, des.baseline, des.detector)
    rep = metrics.node_report(res, sc, 0, 0.3, 0.2)
    assert rep["node"] == 1
    assert set(rep) == {"node", "tracking", "hinf", "decay", "detections", "threshold"}
    assert rep["detections"] and 5.0 <= rep["detections"][0]["onset"] < 8.0
