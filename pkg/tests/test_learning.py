import logging
import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from dmuso.errors import (CalibrationFailed, NegativeDelta, NonConvergence, UtilityOverflow,
                          ZeroCellThroughput)
from dmuso.learning import (WarmStart, calibrate_beta, delta_throughput, finite_difference_check,
                            lambdas, log_new_category_ratio, max_additional_categories,
                            new_category_prob, project_budget, service_rate_bps,
                            service_throughput, snr_pdf_existing, solve_radio_alloc,
                            stationarity_terms, subcarrier_block_hz)

F_D = 180000.0
DT = 1e-3


def test_subcarrier_block():
    assert subcarrier_block_hz(0) == 180000
    assert subcarrier_block_hz(1) == 360000
    assert subcarrier_block_hz(4) == 2880000
    with pytest.raises(ValueError):
        subcarrier_block_hz(5)


def test_service_throughput_examples():
    assert service_throughput(0.0, 3.0, 0.5, 0, DT) == pytest.approx(F_D / DT)
    assert service_throughput(1.0, 1.0, 1.0, 0, DT) == pytest.approx(4.8930e8, rel=1e-4)
    assert service_throughput(1.0, 1.0, 1.0, 0, DT) == pytest.approx(F_D * math.e / DT)
    assert service_rate_bps(1.0, 1.0, 1.0, 0) == pytest.approx(F_D * math.e)
    with pytest.raises(UtilityOverflow):
        service_throughput(60.0, 1.0, 1.0, 0, DT)


@settings(max_examples=100, deadline=None)
@given(r=st.floats(0.01, 5), s=st.floats(0.01, 5), beta=st.floats(0.01, 1))
def test_throughput_increasing(r, s, beta):
    h = 1e-6
    u = service_throughput(r, s, beta, 0, DT)
    du_dr = (service_throughput(r + h, s, beta, 0, DT) - service_throughput(r - h, s, beta, 0, DT)) / (2 * h)
    du_ds = (service_throughput(r, s + h, beta, 0, DT) - service_throughput(r, s - h, beta, 0, DT)) / (2 * h)
    assert du_dr > 0 and du_ds > 0
    assert du_dr == pytest.approx(beta * s * u, rel=1e-5)


def test_snr_pdf_examples():
    assert snr_pdf_existing(0.0, 1, 1.0) == pytest.approx(1.0)
    assert snr_pdf_existing(1.0, 2, 1.0) == pytest.approx(math.exp(-1), rel=1e-12)
    x = np.linspace(0.1, 30, 50)
    for u in (1, 3, 12):
        for sig in (0.5, 4.0):
            np.testing.assert_allclose(snr_pdf_existing(x, u, sig),
                                       stats.gamma.pdf(x, u, scale=sig), rtol=1e-10)


def test_snr_pdf_normalises():
    for u in (1, 10, 30):
        for sig in (0.5, 1.0, 4.0):
            total, _ = integrate.quad(snr_pdf_existing, 0, 50 * sig * u, args=(u, sig), limit=200)
            assert abs(total - 1) < 1e-6


def test_lambda_examples():
    f = lambdas([1], [math.log(2)], [1.0], 1, 1.0, 0, DT, 2.0, 0.0)
    assert f.lambda1 == pytest.approx(F_D / DT)
    assert f.lambda2 == 0.0
    with pytest.raises(ZeroCellThroughput):
        lambdas([1], [0.0], [1.0], 1, 1.0, 0, DT, 0.0, 0.0)


def test_lambdas_match_double_loop():
    rng = np.random.default_rng(11)
    for _ in range(50):
        m_exist = int(rng.integers(1, 5))
        k = int(rng.integers(0, 4))
        cats = np.repeat(np.arange(1, m_exist + k + 1), rng.integers(1, 4, m_exist + k))
        r = rng.uniform(0, 3, len(cats))
        s = rng.uniform(0.1, 4, len(cats))
        beta = rng.uniform(0.01, 1)
        c_m, c_md = rng.uniform(1e8, 1e10, 2)
        got = lambdas(cats, r, s, m_exist, beta, 0, DT, c_m, c_md)
        l1 = l2 = 0.0
        for cat in range(1, m_exist + k + 1):
            inner = 0.0
            for i in range(len(cats)):
                if cats[i] == cat:
                    inner += math.exp(beta * r[i] * s[i])
            if cat <= m_exist:
                l1 += cat * inner
            else:
                l2 += cat * inner
        assert got.lambda1 == pytest.approx(F_D / DT * l1 / c_m, rel=1e-12)
        assert got.lambda2 == pytest.approx(F_D / DT * l2 / c_md if k else 0.0, rel=1e-12)


def test_new_category_prob_examples():
    for lam in (0.1, 3.0, 250.0):
        assert log_new_category_ratio(lam, lam, 4, 0) == 0.0
        assert new_category_prob(lam, lam, 4, 0, clamp=False) == 1.0
    want = math.exp(-2) * 4 * 1 / (math.exp(-1) * 1 * 2)
    assert new_category_prob(1.0, 2.0, 1, 1) == pytest.approx(want, rel=1e-12)
    assert want == pytest.approx(0.7358, abs=1e-4)
    assert log_new_category_ratio(1.0, 5.0, 3, 4) > 0
    assert new_category_prob(1.0, 5.0, 3, 4) == 1.0   # clamped


def test_new_category_prob_log_vs_direct():
    rng = np.random.default_rng(12)
    for _ in range(200):
        m = int(rng.integers(1, 11))
        k = int(rng.integers(0, 21 - m))
        l1, l2 = rng.uniform(0.1, 15, 2)
        direct = (math.exp(-l2) * l2 ** (m + k) * math.factorial(m)
                  / (math.exp(-l1) * l1 ** m * math.factorial(m + k)))
        assert new_category_prob(l1, l2, m, k, clamp=False) == pytest.approx(direct, rel=1e-10)


def test_ft_with_zero_candidate_allocations():
    cats = np.array([1, 1, 2, 2, 3, 3])
    r = np.array([1.0, 0.5, 0.2, 0.3, 0.0, 0.0])
    s = np.array([1.0, 2.0, 0.5, 1.5, 1.0, 3.0])
    terms = stationarity_terms(cats, r, s, 2, 0.1, 0, DT, 1e9, 1e9)
    lam2 = lambdas(cats, r, s, 2, 0.1, 0, DT, 1e9, 1e9).lambda2
    assert terms.ft == pytest.approx(-lam2 ** 3, rel=1e-12)


def test_stationarity_terms_finite_on_grid():
    cats = np.array([1, 2, 3])
    r = np.array([0.5, 1.0, 0.7])
    for sv in np.linspace(0.01, 100, 40):
        s = np.array([sv, 1.0, sv / 2])
        t = stationarity_terms(cats, r, s, 2, 0.01, 0, DT, 1e11, 1e11)
        assert math.isfinite(t.ft) and math.isfinite(t.st)


def _small_instance(seed):
    rng = np.random.default_rng(seed)
    cats = np.array([1, 1, 2, 2, 3, 3])
    return cats, rng.uniform(0, 2, 6), rng.uniform(0.5, 5, 6)


def test_finite_difference_mismatch_is_logged(caplog):
    caplog.set_level(logging.INFO, logger="dmuso.learning")
    seen = 0
    for seed in range(20):
        cats, r, s = _small_instance(seed)
        for j in range(6):
            caplog.clear()
            da, db, ft, st_ = finite_difference_check(cats, r, s, 2, 0.1, 0, DT, 1e9, 1e9, j)
            fd, closed = (da, ft) if cats[j] > 2 else (db, st_)
            logged = any("sign mismatch" in rec.message for rec in caplog.records)
            assert logged == (np.sign(fd) != np.sign(closed))
            seen += logged
    assert seen > 0


@pytest.mark.xfail(reason="printed closed form of FT disagrees in sign with the "
                          "finite-difference derivative on part of the domain", strict=False)
def test_ft_sign_agrees_with_finite_difference():
    cats, r, s = _small_instance(0)
    for j in (4, 5):
        da, _, ft, _ = finite_difference_check(cats, r, s, 2, 0.1, 0, DT, 1e9, 1e9, j)
        assert np.sign(da) == np.sign(ft)


def test_single_service_falls_back_to_fair_share():
    sol = solve_radio_alloc([1], [2.0], 0.1, 1.0, 7.0, 1, 0, DT, 1e9, 0.0)
    assert sol.r[0] == 7.0
    assert sol.flagged[0]
    assert sol.no_bracket == 1


def test_solution_within_budget_and_idempotent():
    rng = np.random.default_rng(13)
    for _ in range(30):
        n = int(rng.integers(2, 30))
        cats = np.sort(rng.integers(1, 6, n))
        s = rng.uniform(0.1, 20, n)
        r_max = rng.uniform(1, 100)
        args = (cats, s, rng.uniform(0.001, 0.5), 10.0, r_max, 3, 0, DT, 1e10, 1e10)
        try:
            a = solve_radio_alloc(*args)
        except NonConvergence as exc:
            a = exc.result
        assert a.r.sum() <= r_max
        assert np.all(a.r >= 0)
        try:
            b = solve_radio_alloc(*args)
        except NonConvergence as exc:
            b = exc.result
        np.testing.assert_array_equal(a.r, b.r)


def test_project_budget():
    r = project_budget([3.0, 3.0, 6.0], 6.0)
    assert r.sum() <= 6.0
    np.testing.assert_allclose(r, [1.5, 1.5, 3.0])
    np.testing.assert_array_equal(project_budget([1.0, 2.0], 6.0), [1.0, 2.0])


def _three_services():
    cats = np.array([1, 1, 2])
    s = np.array([0.8, 1.0, 1.3])
    r_max = 6.0
    c = 1e6
    target = F_D / DT * np.exp(0.2 * (r_max / 3) * s).sum()
    return cats, s, r_max, c, target


def test_calibrated_solution_is_fixed_point():
    cats, s, r_max, c, target = _three_services()
    beta = calibrate_beta(cats, s, 1.0, r_max, 1, 0, DT, c, c, target)
    sol = solve_radio_alloc(cats, s, beta, 1.0, r_max, 1, 0, DT, c, c)
    again = solve_radio_alloc(cats, s, beta, 1.0, r_max, 1, 0, DT, c, c,
                              warm_start=WarmStart(sol.demand, sol.lambda1, sol.st), max_sweeps=1)
    assert np.max(np.abs(again.demand - sol.demand)) <= 1e-6


def test_calibration_round_trip():
    cats, s, r_max, c, target = _three_services()
    beta = calibrate_beta(cats, s, 1.0, r_max, 1, 0, DT, c, c, target)
    sol = solve_radio_alloc(cats, s, beta, 1.0, r_max, 1, 0, DT, c, c)
    thr = F_D / DT * np.exp(beta * sol.r * s).sum()
    assert sol.r.sum() >= 0.999 * r_max
    assert abs(thr / target - 1) <= 0.05


def test_calibration_fails_when_range_too_small():
    cats = np.array([1, 1, 2])
    s = np.array([50.0, 80.0, 120.0])
    with pytest.raises(CalibrationFailed):
        calibrate_beta(cats, s, 1.0, 6.0, 1, 0, DT, 1e9, 1e9, target_thr=1e12, beta_max=1e-6)


def test_beta_nonincreasing_in_snr_scale():
    cats, base, r_max, c, _ = _three_services()
    target = F_D / DT * np.exp(0.2 * (r_max / 3) * base).sum()
    betas = []
    for sig in (0.5, 1.0, 2.0, 4.0):
        betas.append(calibrate_beta(cats, base * sig, sig, r_max, 1, 0, DT, c, c, target))
    assert all(b2 <= b1 * (1 + 1e-3) for b1, b2 in zip(betas, betas[1:]))


@pytest.mark.xfail(reason="the stationarity roots are not maximisers of the utility sum; "
                          "fair-share fallbacks lose to lopsided allocations", strict=False)
def test_objective_beats_random_allocations():
    cats, s, r_max, c, target = _three_services()
    beta = calibrate_beta(cats, s, 1.0, r_max, 1, 0, DT, c, c, target)
    sol = solve_radio_alloc(cats, s, beta, 1.0, r_max, 1, 0, DT, c, c)
    best = np.exp(beta * sol.r * s).sum()
    rng = np.random.default_rng(14)
    for _ in range(100):
        r = rng.dirichlet(np.ones(3)) * r_max
        assert best >= np.exp(beta * r * s).sum()


def test_max_additional_categories():
    assert max_additional_categories(1.0, 5, 6, 200) == (40, 34)
    assert max_additional_categories(3.0, 5, 6, 10) == (0, 0)
    prev = -1
    for r_max in np.linspace(1, 500, 300):
        _, delta = max_additional_categories(0.7, 3, 4, r_max)
        assert delta >= prev
        prev = delta


def test_delta_throughput():
    assert delta_throughput(100, 60) == 40
    assert delta_throughput(60, 60) == 0
    with pytest.raises(NegativeDelta):
        delta_throughput(50, 60)


def test_existing_term_closed_form_symbolic():
    # ST1 + ST2 as printed, evaluated symbolically against the log-space kernel
    from dmuso import _kernels
    lam, lp, lpp = sympy.Rational(7, 2), sympy.Rational(3, 4), sympy.Rational(1, 5)
    m, mk = 3, 5
    st1 = m * lpp * lp ** (m - 1) * sympy.exp(lam) * lam ** (-2 * m)
    st2 = lam ** m * sympy.exp(-lp)
    inv_b = sympy.exp(lam) / (lam ** m * sympy.factorial(mk))
    a, b, c = _kernels.existing_logs(float(lam), float(lp), float(lpp), m, math.lgamma(mk + 1))
    assert math.exp(a) == pytest.approx(float(st1), rel=1e-12)
    assert math.exp(b) == pytest.approx(float(st2), rel=1e-12)
    assert math.exp(c) == pytest.approx(float(inv_b), rel=1e-12)
