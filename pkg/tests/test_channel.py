import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import j0

from dmuso.channel import (QAM16, QAM64, QPSK, ChannelBank, RandomWaypoint, ar1_coefficient,
                           beam_gain, complex_normal, compute_sinr, evolve_channel, evolve_gains,
                           match_beamformer, new_channel, path_loss_db, sample_avg_snr,
                           select_modulation)
from dmuso.errors import NonPositiveBandwidth, OutOfCell, ZeroChannel


def test_zero_doppler_keeps_gains():
    rng = np.random.default_rng(0)
    state = new_channel(4, 0.0, 1e-20, rng)
    nxt = evolve_channel(state, 1e-3, rng)
    np.testing.assert_array_equal(nxt.gains, state.gains)


def test_ar1_correlation_and_variance():
    rho = ar1_coefficient(300, 1e-3)
    # power series of J0 as an independent oracle
    x = 0.6 * math.pi
    series = sum((-1) ** k * (x / 2) ** (2 * k) / math.factorial(k) ** 2 for k in range(30))
    assert rho == pytest.approx(series, rel=1e-12)
    assert rho == pytest.approx(j0(x))
    rng = np.random.default_rng(1)
    n = 100_000
    h = complex_normal(rng, (1,))
    trace = np.empty(n, dtype=complex)
    for i in range(n):
        h = evolve_gains(h, rho, rng)
        trace[i] = h[0]
    lag1 = np.real(np.vdot(trace[:-1], trace[1:])) / np.real(np.vdot(trace, trace))
    assert abs(lag1 - rho) < 0.02
    assert abs(np.mean(np.abs(trace) ** 2) - 1.0) < 0.03


def test_match_beamformer_examples():
    e = match_beamformer([1, 0])
    np.testing.assert_allclose(e, [1, 0])
    h = np.array([3.0, 4.0])
    e = match_beamformer(h)
    np.testing.assert_allclose(e, [0.6, 0.8])
    assert beam_gain(h, e) == pytest.approx(25.0)
    with pytest.raises(ZeroChannel):
        match_beamformer([0, 0])


def test_matched_beam_is_best():
    rng = np.random.default_rng(2)
    for _ in range(100):
        h = complex_normal(rng, (4,))
        other = match_beamformer(complex_normal(rng, (4,)))
        assert beam_gain(h, match_beamformer(h)) >= beam_gain(h, other) - 1e-12
        assert np.linalg.norm(match_beamformer(h)) == pytest.approx(1.0, abs=1e-9)


def test_sinr_examples():
    one = np.array([1.0])
    # signal 1, N0*b = 0.5, interference 0.5
    interferer = (0.5, one, one)
    assert compute_sinr(one, one, 1.0, [interferer], 1.0, 0.5) == pytest.approx(1.0)
    assert compute_sinr(one, one, 1.0, [], 1.0, 0.25) == pytest.approx(4.0)
    with pytest.raises(NonPositiveBandwidth):
        compute_sinr(one, one, 1.0, [], 0.0, 0.25)


def test_sinr_matches_naive_loop():
    rng = np.random.default_rng(3)
    for _ in range(50):
        h = complex_normal(rng, (4,))
        e = match_beamformer(h)
        inter = []
        for _ in range(3):
            g = complex_normal(rng, (4,))
            inter.append((rng.random(), g, match_beamformer(g)))
        n0, b, p = 1e-3, 2.0, 0.7
        num = abs(sum(np.conj(h[k]) * e[k] for k in range(4))) ** 2 * p
        den = n0 * b
        for q, g, eq in inter:
            den += abs(sum(np.conj(g[k]) * eq[k] for k in range(4))) ** 2 * q
        assert compute_sinr(h, e, p, inter, b, n0) == pytest.approx(num / den, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(b=st.floats(1e3, 1e8), scale=st.floats(1.01, 10.0), p=st.floats(0.0, 1.0))
def test_sinr_nonincreasing(b, scale, p):
    one = np.array([1.0])
    g1 = compute_sinr(one, one, 1.0, [(p, one, one)], b, 1e-9)
    assert compute_sinr(one, one, 1.0, [(p, one, one)], b * scale, 1e-9) <= g1
    assert compute_sinr(one, one, 1.0, [(p * scale + 1e-3, one, one)], b, 1e-9) <= g1


def test_avg_snr_samples():
    rng = np.random.default_rng(4)
    x = sample_avg_snr(2.0, rng, 1_000_000)
    assert abs(x.mean() - 2.0) < 0.01
    assert x.min() >= 0
    y = sample_avg_snr(1.0, rng, 1_000_000)
    assert abs((y > 1).mean() - math.exp(-1)) < 0.005
    assert stats.kstest(y[:5000], "expon", args=(0, 1.0)).pvalue > 0.01


def test_modulation():
    assert select_modulation(5) == QPSK
    assert select_modulation(10) == QAM16
    assert select_modulation(8) == QAM16
    assert select_modulation(14) == QAM64
    assert select_modulation(-50) == QPSK


def test_path_loss():
    assert path_loss_db(1.0) == pytest.approx(38.0)
    assert path_loss_db(10.0) == pytest.approx(73.0)
    np.testing.assert_allclose(path_loss_db(np.array([1.0, 10.0])), [38.0, 73.0])
    with pytest.raises(OutOfCell):
        path_loss_db(1000.0, radius_m=950.0)


def test_random_waypoint_inside_and_reproducible():
    a = RandomWaypoint(np.arange(20), seed=5)
    b = RandomWaypoint(np.arange(20), seed=5)
    for _ in range(2000):
        a.step(1e-3)
        b.step(1e-3)
    np.testing.assert_array_equal(a.pos, b.pos)
    assert np.all(np.hypot(a.pos[:, 0], a.pos[:, 1]) <= 950 + 1e-9)
    d = a.distances()
    assert d.min() >= 1.0 and d.max() <= 950.0
    # same UE follows the same path whatever set it is simulated in
    c = RandomWaypoint(np.array([7]), seed=5)
    for _ in range(2000):
        c.step(1e-3)
    np.testing.assert_array_equal(c.pos[0], a.pos[7])


def test_channel_bank_snapshot_restore():
    rng = np.random.default_rng(6)
    bank = ChannelBank(4)
    bank.add(np.arange(5), np.full(5, 10.0), np.full(5, 100.0), rng)
    snap = bank.snapshot()
    bank.step(0.9, rng, np.full(5, 90.0))
    assert not np.array_equal(bank.gains, snap[1])
    bank.restore(snap)
    np.testing.assert_array_equal(bank.gains, snap[1])
    np.testing.assert_array_equal(bank.avg_snr, np.full(5, 10.0))


def test_channel_bank_snr_tracks_mean():
    rng = np.random.default_rng(7)
    bank = ChannelBank(4, smoothing=0.01)
    bank.add(np.arange(200), np.full(200, 10.0), np.full(200, 300.0), rng)
    for _ in range(3000):
        bank.step(0.5, rng, np.full(200, 300.0))
    # fixed distance: E[|h|^2]/n_antennas = 1 so the average stays near the mean
    assert abs(bank.avg_snr.mean() - 10.0) < 0.5
