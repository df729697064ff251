"""Radio-resource and throughput learning for one slice.

Throughput follows an exponential utility u = f_d * exp(beta*r*s) / dt.  The
allocations r are the coordinate-wise roots of the stationarity condition
built from the Gamma SNR density of the existing categories and the Poisson
ratio governing formation of a new category.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln, xlogy

from . import _kernels
from .model import budget_sum
from .errors import (CalibrationFailed, NegativeDelta, NonConvergence,
                     UtilityOverflow, ZeroCellThroughput)

log = logging.getLogger(__name__)

GRID_POINTS = 64
# r_max * 10^(-6 .. 0), geometric
GRID_FRAC = 10.0 ** (-6.0 + 6.0 * np.arange(GRID_POINTS) / (GRID_POINTS - 1))
GRID_FRAC[-1] = 1.0


def subcarrier_block_hz(mu):
    """Resource-block width f_d = 2^mu * 15 kHz * 12."""
    if mu not in (0, 1, 2, 3, 4):
        raise ValueError(f"numerology must be in 0..4, got {mu}")
    return float(2 ** mu * 15000 * 12)


def _utility_exponent(r, s, beta, cap):
    x = beta * np.asarray(r, dtype=float) * np.asarray(s, dtype=float)
    if np.any(x > cap):
        raise UtilityOverflow(f"beta*r*s = {np.max(x):.4g} exceeds cap {cap}")
    return x


def service_throughput(r, s, beta, mu, dt, cap=50.0):
    """u = f_d * exp(beta*r*s) / dt, evaluated literally."""
    x = _utility_exponent(r, s, beta, cap)
    u = subcarrier_block_hz(mu) * np.exp(x) / dt
    return float(u) if u.ndim == 0 else u


def service_rate_bps(r, s, beta, mu, cap=50.0):
    """Human-readable rate f_d * exp(beta*r*s) in bits/s."""
    x = _utility_exponent(r, s, beta, cap)
    u = subcarrier_block_hz(mu) * np.exp(x)
    return float(u) if u.ndim == 0 else u


def snr_pdf_existing(x, u_m, sigma_s_sq):
    """Gamma(shape=u_m, scale=sigma_s_sq) density of the pooled SNR."""
    x = np.asarray(x, dtype=float)
    logp = xlogy(u_m - 1, x) - x / sigma_s_sq - gammaln(u_m) - u_m * math.log(sigma_s_sq)
    p = np.exp(logp)
    return float(p) if p.ndim == 0 else p


def cell_throughput(b, sinr, dt):
    """Shannon cell throughput sum(b*log(1+gamma)), expressed per TTI like u."""
    return math.fsum(np.asarray(b) * np.log1p(np.asarray(sinr))) / dt


@dataclass(frozen=True)
class LambdaPair:
    lambda1: float
    lambda2: float
    cell_thr_m: float
    cell_thr_mdelta: float


def lambdas(cats, r, s, m_existing, beta, mu, dt, cell_thr_m, cell_thr_mdelta, cap=50.0):
    """Poisson rates of the existing (cats <= M) and new (cats > M) categories.

    ``cats`` are 1-based category indices; each category's utility sum is
    weighted by its index."""
    cats = np.asarray(cats)
    cand = cats > m_existing
    if not cell_thr_m > 0:
        raise ZeroCellThroughput("existing-category cell throughput is zero")
    if cand.any() and not cell_thr_mdelta > 0:
        raise ZeroCellThroughput("new-category cell throughput is zero")
    x = _utility_exponent(r, s, beta, cap)
    weighted = cats * np.exp(x)
    scale = subcarrier_block_hz(mu) / dt
    lam1 = scale * math.fsum(weighted[~cand]) / cell_thr_m
    lam2 = scale * math.fsum(weighted[cand]) / cell_thr_mdelta if cand.any() else 0.0
    return LambdaPair(lam1, lam2, float(cell_thr_m), float(cell_thr_mdelta))


def log_new_category_ratio(lambda1, lambda2, m, k):
    """log of e^-l2 l2^(m+k) m! / (e^-l1 l1^m (m+k)!)."""
    if lambda1 <= 0:
        raise ValueError("lambda1 must be > 0")
    num = -lambda2 + xlogy(m + k, lambda2) + gammaln(m + 1)
    den = -lambda1 + m * math.log(lambda1) + gammaln(m + k + 1)
    return float(num - den)


def new_category_prob(lambda1, lambda2, m, k, clamp=True):
    """Probability that a new category forms given M existing ones."""
    if m < 1 or k < 0:
        raise ValueError("need m >= 1 and k >= 0")
    lr = log_new_category_ratio(lambda1, lambda2, m, k)
    if clamp:
        return 1.0 if lr >= 0.0 else math.exp(lr)
    return math.exp(lr)


@dataclass(frozen=True)
class StationarityTerms:
    ft: float
    st: float


def _partials(cats, r, s, m_existing, c_m, c_md):
    cats = np.asarray(cats, dtype=float)
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    cand = cats > m_existing
    l2p = math.fsum(cats[cand] * r[cand] * s[cand]) / c_md if cand.any() else 0.0
    l1p = math.fsum(cats[~cand] * r[~cand] * s[~cand]) / c_m
    l1pp = math.fsum(cats[~cand] * r[~cand]) / c_m
    return l1p, l1pp, l2p


def _structure(cats, m_existing):
    cats = np.asarray(cats)
    n_new = len(np.unique(cats[cats > m_existing]))
    return m_existing, m_existing + n_new


def stationarity_terms(cats, r, s, m_existing, beta, mu, dt, cell_thr_m, cell_thr_mdelta,
                       cap=50.0):
    """FT (new-category side) and ST (existing side) closed forms.

    The closed forms are taken as printed; their sign need not agree with the
    true derivative of the Poisson terms (see :func:`finite_difference_check`)."""
    lp = lambdas(cats, r, s, m_existing, beta, mu, dt, cell_thr_m, cell_thr_mdelta, cap)
    m, mk = _structure(cats, m_existing)
    l1p, l1pp, l2p = _partials(cats, r, s, m_existing, cell_thr_m,
                               cell_thr_mdelta if cell_thr_mdelta > 0 else 1.0)
    t1, t2, _ = _kernels.candidate_logs(lp.lambda2, l2p, mk, float(gammaln(m + 1)))
    st1, st2, _ = _kernels.existing_logs(lp.lambda1, l1p, l1pp, m, float(gammaln(mk + 1)))
    ft = math.exp(t1) - math.exp(t2)
    st = -(math.exp(st1) + math.exp(st2))
    return StationarityTerms(ft, st)


def finite_difference_check(cats, r, s, m_existing, beta, mu, dt, cell_thr_m,
                            cell_thr_mdelta, j, h=1e-6, cap=50.0):
    """Central differences of the two Poisson terms with respect to s_j.

    Returns (dA/ds_j, dB^-1/ds_j, FT, ST) and logs a diagnostic line whenever
    the printed closed form disagrees in sign with the numeric derivative."""
    m, mk = _structure(cats, m_existing)

    def terms(sv):
        lp = lambdas(cats, r, sv, m_existing, beta, mu, dt, cell_thr_m, cell_thr_mdelta, cap)
        a = math.exp(-lp.lambda2 + xlogy(mk, lp.lambda2) + gammaln(m + 1)) if lp.lambda2 > 0 else 0.0
        inv_b = math.exp(lp.lambda1 - m * math.log(lp.lambda1) - gammaln(mk + 1))
        return a, inv_b

    s = np.asarray(s, dtype=float)
    step = h * max(1.0, abs(s[j]))
    up, dn = s.copy(), s.copy()
    up[j] += step
    dn[j] -= step
    a_up, b_up = terms(up)
    a_dn, b_dn = terms(dn)
    da = (a_up - a_dn) / (2 * step)
    db = (b_up - b_dn) / (2 * step)
    st = stationarity_terms(cats, r, s, m_existing, beta, mu, dt, cell_thr_m, cell_thr_mdelta, cap)
    is_cand = np.asarray(cats)[j] > m_existing
    fd = da if is_cand else db
    closed = st.ft if is_cand else st.st
    if np.sign(fd) != np.sign(closed):
        log.info("stationarity sign mismatch service=%d side=%s closed=%.6g fd=%.6g",
                 j, "new" if is_cand else "existing", closed, fd)
    return da, db, st.ft, st.st


@dataclass(frozen=True)
class WarmStart:
    r: np.ndarray
    lambda1: float
    st: float


@dataclass
class RadioSolution:
    r: np.ndarray           # projected onto sum(r) <= r_max
    demand: np.ndarray      # pre-projection allocations
    flagged: np.ndarray     # True where the fair-share fallback was used
    sweeps: int
    converged: bool
    lambda1: float
    st: float

    @property
    def no_bracket(self) -> int:
        return int(self.flagged.sum())

    def warm_start(self) -> WarmStart:
        return WarmStart(self.demand.copy(), self.lambda1, self.st)


def project_budget(r, r_max):
    """Scale r proportionally so that its float sum does not exceed r_max."""
    r = np.asarray(r, dtype=float).copy()
    total = budget_sum(r)
    if total <= r_max:
        return r
    r *= r_max / total
    while budget_sum(r) > r_max:
        r *= np.nextafter(1.0, 0.0)
    return r


def solve_radio_alloc(cats, s, beta, sigma_s_sq, r_max, m_existing, mu, dt,
                      cell_thr_m, cell_thr_mdelta, warm_start: Optional[WarmStart] = None,
                      cap=50.0, max_sweeps=100, tol=1e-6):
    """Gauss-Seidel solve of the per-service stationarity condition.

    Services in existing categories (index <= M) are swept first, then the
    new ones; the existing-side state (lambda1, ST) after the first phase is
    cached and reused for the new-category phase.  With a warm start that
    covers fewer services than given (new services were appended), the first
    sweep starts directly at the new-category phase.  Services without a sign change in [0, r_max] receive the fair
    share r_max/U and are flagged."""
    cats = np.ascontiguousarray(cats, dtype=np.int64)
    s = np.ascontiguousarray(s, dtype=float)
    n = len(s)
    if n == 0:
        empty = np.zeros(0)
        return RadioSolution(empty, empty, np.zeros(0, bool), 0, True, 0.0, 0.0)
    if np.any(s <= 0):
        raise ValueError("every service needs avg_snr > 0")
    if not beta > 0:
        raise ValueError("beta must be > 0")
    is_cand = cats > m_existing
    if not cell_thr_m > 0:
        raise ZeroCellThroughput("existing-category cell throughput is zero")
    if is_cand.any() and not cell_thr_mdelta > 0:
        raise ZeroCellThroughput("new-category cell throughput is zero")

    m, mk = _structure(cats, m_existing)
    u_m = int((~is_cand).sum())
    skip = False
    r0 = np.zeros(n)
    if warm_start is not None and len(warm_start.r) <= n:
        w = np.asarray(warm_start.r, dtype=float)
        r0[:len(w)] = w
        # services appended since the warm state was stored: hold the known
        # ones for the first sweep and solve the newcomers against the cache
        skip = len(w) < n and bool(is_cand[len(w):].any())

    r, flagged, sweeps, converged, lam1, st = _kernels.gauss_seidel(
        cats, is_cand, s, r0, float(beta), subcarrier_block_hz(mu) / dt,
        float(cell_thr_m), float(cell_thr_mdelta) if cell_thr_mdelta > 0 else 1.0,
        float(r_max), float(sigma_s_sq), m, mk, u_m, float(cap),
        float(gammaln(m + 1)), float(gammaln(mk + 1)), float(gammaln(u_m)),
        int(max_sweeps), float(tol), skip, GRID_FRAC)

    sol = RadioSolution(project_budget(r, r_max), r, flagged, int(sweeps), bool(converged),
                        float(lam1), float(st))
    if not converged:
        raise NonConvergence(f"no fixed point after {sweeps} sweeps", result=sol)
    return sol


def calibrate_beta(cats, s, sigma_s_sq, r_max, m_existing, mu, dt, cell_thr_m,
                   cell_thr_mdelta, target_thr, beta_max=1.0, cap=50.0, rtol=1e-4,
                   match_tol=0.05, exhaust=0.999, probe_sweeps=8):
    """Smallest beta in (0, beta_max] whose learned allocations exhaust the
    radio budget and whose utility throughput sum(f_d*exp(beta*r*s))/dt
    reaches the Shannon cell throughput ``target_thr`` (within 5%).

    Each bisection probe runs at most ``probe_sweeps`` sweeps and is judged
    on the allocation reached, converged or not."""
    if not target_thr > 0:
        raise ZeroCellThroughput("calibration target must be > 0")
    cats = np.asarray(cats)
    s = np.asarray(s, dtype=float)
    f_d = subcarrier_block_hz(mu)

    def evaluate(beta):
        try:
            sol = solve_radio_alloc(cats, s, beta, sigma_s_sq, r_max, m_existing, mu, dt,
                                    cell_thr_m, cell_thr_mdelta, cap=cap,
                                    max_sweeps=probe_sweeps)
        except NonConvergence as exc:
            sol = exc.result
        x = beta * sol.r * s
        if np.any(x > cap):
            return sol, math.inf
        return sol, math.fsum(f_d * np.exp(x)) / dt

    def large_enough(beta):
        sol, thr = evaluate(beta)
        return sol.r.sum() >= exhaust * r_max and thr >= (1.0 - match_tol) * target_thr

    if not large_enough(beta_max):
        raise CalibrationFailed(f"no beta <= {beta_max} reaches the Shannon throughput")
    lo, hi = 0.0, float(beta_max)
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if large_enough(mid):
            hi = mid
        else:
            lo = mid
    _, thr = evaluate(hi)
    if abs(thr / target_thr - 1.0) > match_tol:
        raise CalibrationFailed(
            f"utility throughput overshoots the Shannon target by {thr / target_thr - 1:.1%}")
    return hi


def max_additional_categories(r_per_service, f_u, m, r_max):
    """(S, Delta) from the radio budget with f_u services per category."""
    if not r_per_service > 0 or f_u < 1:
        raise ValueError("need r_per_service > 0 and f_u >= 1")
    s_cap = int(math.floor(r_max / (r_per_service * f_u) * (1 + 1e-12)))
    return s_cap, max(0, s_cap - m)


def delta_throughput(thr_s, thr_m):
    if thr_s < thr_m:
        raise NegativeDelta(f"Thr(S) = {thr_s} < Thr(m) = {thr_m}")
    return thr_s - thr_m
