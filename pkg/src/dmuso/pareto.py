"""Per-service bandwidth selection by the epsilon-constraint method.

f1(b) = (P0 + phi*t)(Pc + t) / log(1 + gamma(b)) is minimised by gradient
descent with Wolfe steps while f2 = f1 * dt / f_d stays below eps.  Both
objectives grow with b, so the descent ends on the lower bandwidth clamp
unless the constraint or the iteration cap stops it first.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (DegenerateSinr, Infeasible, MaxIters, NonPositiveBandwidth,
                     NotDescent, StepNotFound)
from .learning import subcarrier_block_hz
from .model import OptimizerParams, PowerModel

log = logging.getLogger(__name__)

PARETO_OPTIMAL = "ParetoOptimal"
WEAKLY_PARETO_OPTIMAL = "WeaklyParetoOptimal"
INFEASIBLE = "Infeasible"
SINR_FLOOR = 1e-15


@dataclass(frozen=True)
class MopParams:
    power: PowerModel
    tx_power_w: float
    signal_power: float
    interference_w: float
    n0: float
    mu: int = 0
    dt: float = 1e-3

    def __post_init__(self):
        if not self.signal_power > 0:
            raise ValueError("signal_power must be > 0")
        if self.interference_w < 0:
            raise ValueError("interference_w must be >= 0")
        if not self.n0 > 0:
            raise ValueError("n0 must be > 0")

    @property
    def energy_factor(self):
        p = self.power
        return (p.static_power_w + p.pa_slope * self.tx_power_w) * (p.circuit_power_w + self.tx_power_w)


def _energy_factor(power: PowerModel, tx_power_w):
    return (power.static_power_w + power.pa_slope * tx_power_w) * (power.circuit_power_w + tx_power_w)


# vectorised objective pieces; every argument may be an array

def _gamma(b, signal, interference, n0):
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0):
        raise NonPositiveBandwidth("bandwidth must be > 0")
    return signal / (n0 * b + interference)


def _log1p_gamma(b, signal, interference, n0):
    g = _gamma(b, signal, interference, n0)
    if np.any(g <= SINR_FLOOR):
        raise DegenerateSinr(f"SINR below {SINR_FLOOR}")
    return g, np.log1p(g)


def _f1(b, k, signal, interference, n0):
    _, lg = _log1p_gamma(b, signal, interference, n0)
    return k / lg


def _grad_f1(b, k, signal, interference, n0):
    g, lg = _log1p_gamma(b, signal, interference, n0)
    denom = n0 * np.asarray(b, dtype=float) + interference
    return k * signal * n0 / ((1.0 + g) * denom ** 2 * lg ** 2)


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def gamma_of_b(b, params: MopParams):
    return _scalar(_gamma(b, params.signal_power, params.interference_w, params.n0))


def f1(b, params: MopParams):
    return _scalar(_f1(b, params.energy_factor, params.signal_power, params.interference_w, params.n0))


def f2(b, params: MopParams):
    scale = params.dt / subcarrier_block_hz(params.mu)
    return _scalar(scale * _f1(b, params.energy_factor, params.signal_power,
                               params.interference_w, params.n0))


def grad_f1(b, params: MopParams):
    return _scalar(_grad_f1(b, params.energy_factor, params.signal_power,
                            params.interference_w, params.n0))


# ---------------------------------------------------------------------------
# line search


def _wolfe_ok(f0, g0d, fa, gad, alpha, c1, c2):
    sufficient = fa <= f0 + c1 * alpha * g0d
    curvature = abs(gad) <= c2 * abs(g0d)
    return sufficient, curvature


def wolfe_search(f: Callable, grad: Callable, x, d, c1=1e-4, c2=0.9,
                 alpha0=1.0, alpha_max: Optional[float] = None, max_evals=60):
    """Step length satisfying sufficient decrease and the strong curvature
    condition |grad(x+a d).d| <= c2 |grad(x).d| (bracket then bisect).

    With ``alpha_max`` the step is confined to [0, alpha_max]; if the slope
    is still steeply negative at the boundary the boundary step is returned
    (that is the constrained minimiser along d)."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    f0 = float(f(x))
    g0d = float(np.dot(np.atleast_1d(grad(x)), np.atleast_1d(d)))
    if not g0d < 0:
        raise NotDescent(f"directional derivative {g0d:.3g} is not negative")
    if alpha_max is not None and alpha_max <= 0:
        return 0.0

    def phi(a):
        xa = x + a * d
        return float(f(xa)), float(np.dot(np.atleast_1d(grad(xa)), np.atleast_1d(d)))

    evals = 0
    a_prev, f_prev = 0.0, f0
    # a bounded search tries the boundary first
    a = alpha0 if alpha_max is None else alpha_max
    lo = hi = None
    while evals < max_evals:
        fa, gad = phi(a)
        evals += 1
        sufficient, curvature = _wolfe_ok(f0, g0d, fa, gad, a, c1, c2)
        if not sufficient or (evals > 1 and fa >= f_prev):
            lo, hi = a_prev, a
            break
        if curvature:
            return a
        if gad >= 0:
            lo, hi = a, a_prev
            break
        if alpha_max is not None and a >= alpha_max:
            return a
        a_prev, f_prev = a, fa
        a = 2.0 * a if alpha_max is None else min(2.0 * a, alpha_max)
    if lo is None:
        raise StepNotFound(f"no Wolfe step within {max_evals} evaluations")

    # zoom: lo always satisfies sufficient decrease with the lower f value
    f_lo = f0 if lo == 0.0 else phi(lo)[0]
    while evals < max_evals:
        a = 0.5 * (lo + hi)
        fa, gad = phi(a)
        evals += 1
        sufficient, curvature = _wolfe_ok(f0, g0d, fa, gad, a, c1, c2)
        if not sufficient or fa >= f_lo:
            hi = a
            continue
        if curvature:
            return a
        if gad * (hi - lo) >= 0:
            hi = lo
        lo, f_lo = a, fa
    raise StepNotFound(f"no Wolfe step within {max_evals} evaluations")


# ---------------------------------------------------------------------------
# epsilon-constraint loop


@dataclass(frozen=True)
class ParetoVerdict:
    tag: str
    f2_value: float
    boundary_gap: float


def pareto_classify(f2_value, eps2, tol=1e-9) -> ParetoVerdict:
    gap = f2_value - eps2
    if abs(gap) <= tol:
        tag = PARETO_OPTIMAL
    elif gap < 0:
        tag = WEAKLY_PARETO_OPTIMAL
    else:
        tag = INFEASIBLE
    return ParetoVerdict(tag, float(f2_value), float(gap))


@dataclass
class BandwidthSolution:
    b: np.ndarray
    gamma: np.ndarray
    iterations: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    eps: np.ndarray
    eps2: np.ndarray

    def verdicts(self, tol=1e-9):
        return [pareto_classify(v, e, tol) for v, e in zip(self.f2, self.eps2)]


def minimize_batch(k, signal, interference, n0, f2_scale, b0, b_min, b_max, eps,
                   c1=1e-4, c2=0.9, eps_prime=1e-12, max_iters=100):
    """Elementwise epsilon-constraint descent for many independent services.

    Every array argument broadcasts to the number of services.  Services
    whose boundary step fails sufficient decrease fall back to the scalar
    bracket-and-zoom search.  Returns (b, iterations, ok) where ``ok`` is
    False for services that hit ``max_iters``."""
    k, signal, interference, b_min, b_max, eps = np.broadcast_arrays(
        *(np.atleast_1d(np.asarray(v, dtype=float)) for v in (k, signal, interference, b_min, b_max, eps)))
    x = np.clip(np.asarray(b0, dtype=float) * np.ones_like(k), b_min, b_max)
    if np.any(f2_scale * _f1(x, k, signal, interference, n0) > eps * (1 + 1e-12)):
        raise Infeasible("f2 exceeds eps at the starting bandwidth")
    n = x.size
    iters = np.zeros(n, dtype=int)
    clamp_hits = np.zeros(n, dtype=int)
    active = np.ones(n, dtype=bool)
    f_cur = _f1(x, k, signal, interference, n0)

    for _ in range(max_iters):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        xi, ki, si, ii = x[idx], k[idx], signal[idx], interference[idx]
        g = _grad_f1(xi, ki, si, ii, n0)
        d = -g
        # largest step keeping b >= b_min
        a_max = np.where(g > 0, (xi - b_min[idx]) / np.where(g > 0, g, 1.0), 0.0)
        alpha = a_max.copy()
        xa = np.maximum(xi + a_max * d, b_min[idx])
        fa = _f1(xa, ki, si, ii, n0)
        bad = (a_max > 0) & ~(fa <= f_cur[idx] + c1 * a_max * g * d)
        for pos in np.flatnonzero(bad):
            j = idx[pos]

            def fj(b, j=j):
                return _f1(b, k[j], signal[j], interference[j], n0)

            def gj(b, j=j):
                return _grad_f1(b, k[j], signal[j], interference[j], n0)

            alpha[pos] = wolfe_search(fj, gj, x[j], d[pos], c1, c2, alpha_max=a_max[pos])
            xa[pos] = max(x[j] + alpha[pos] * d[pos], b_min[j])
            fa[pos] = fj(xa[pos])
        x_new = np.clip(xa, b_min[idx], b_max[idx])
        f_new = _f1(x_new, ki, si, ii, n0)
        clamped = (x_new <= b_min[idx]) | (x_new >= b_max[idx])
        clamp_hits[idx] += clamped
        iters[idx] += 1
        done = (np.abs(f_new - f_cur[idx]) < eps_prime) | (clamp_hits[idx] >= 2) | (g <= 0)
        # the constraint loop only continues while f2 stays within eps
        done |= f2_scale * f_new > eps[idx]
        x[idx] = x_new
        f_cur[idx] = f_new
        active[idx[done]] = False
    return x, iters, ~active


def solve_bandwidths(power: PowerModel, tx_power_w, signal, interference, n0, mu, dt,
                     b_max, opt: OptimizerParams, b0=None):
    """Run the epsilon-constraint descent for every service of a slice.

    ``b_max`` is the per-service share of the bandwidth part; ``b_min`` is one
    resource block unless configured.  eps defaults to f2 at the start point
    and eps2 to eps."""
    signal = np.asarray(signal, dtype=float)
    interference = np.asarray(interference, dtype=float)
    n = signal.size
    f_d = subcarrier_block_hz(mu)
    b_min = opt.b_min_hz if opt.b_min_hz is not None else f_d
    b_max = np.broadcast_to(np.asarray(b_max, dtype=float), (n,))
    b_min_arr = np.minimum(b_min, b_max)
    k = np.full(n, _energy_factor(power, tx_power_w))
    scale = dt / f_d
    start = b_max if b0 is None else np.clip(b0, b_min_arr, b_max)
    if opt.eps is None:
        eps = scale * _f1(start, k, signal, interference, n0)
    else:
        eps = np.full(n, opt.eps)
    eps2 = eps if opt.eps2 is None else np.full(n, opt.eps2)
    b, iters, ok = minimize_batch(k, signal, interference, n0, scale, start, b_min_arr, b_max,
                                  eps, opt.c1, opt.c2, opt.eps_prime, opt.max_iters)
    if not ok.all():
        raise MaxIters(f"{int((~ok).sum())} services did not settle in {opt.max_iters} iterations")
    g = _gamma(b, signal, interference, n0)
    fv1 = k / np.log1p(g)
    return BandwidthSolution(b, g, iters, fv1, scale * fv1, np.asarray(eps, float), np.asarray(eps2, float))


def epsilon_constraint_minimize(params: MopParams, opt: OptimizerParams, b0,
                                b_min=None, b_max=None, eps=None):
    """Single-service epsilon-constraint descent.  Returns (b*, gamma*, iterations)."""
    f_d = subcarrier_block_hz(params.mu)
    b_min = (opt.b_min_hz or f_d) if b_min is None else b_min
    b_max = b0 if b_max is None else b_max
    if not b_min <= b0 <= b_max:
        raise ValueError(f"b0={b0} outside [{b_min}, {b_max}]")
    if eps is None:
        eps = opt.eps if opt.eps is not None else f2(b_max, params)
    if f2(b0, params) > eps * (1 + 1e-12):
        raise Infeasible(f"f2(b0) = {f2(b0, params):.6g} exceeds eps = {eps:.6g}")
    b, iters, ok = minimize_batch(
        params.energy_factor, params.signal_power, params.interference_w, params.n0,
        params.dt / f_d, b0, b_min, b_max, eps, opt.c1, opt.c2, opt.eps_prime, opt.max_iters)
    if not ok.all():
        raise MaxIters(f"no convergence within {opt.max_iters} iterations")
    b_star = float(b[0])
    gamma = gamma_of_b(b_star, params)
    eps2 = opt.eps2 if opt.eps2 is not None else eps
    verdict = pareto_classify(f2(b_star, params), eps2)
    log.debug("iterations=%d b_star=%.9g gamma=%.9g f1=%.9g f2=%.9g verdict=%s",
              int(iters[0]), b_star, gamma, f1(b_star, params), f2(b_star, params), verdict.tag)
    return b_star, gamma, int(iters[0])


# ---------------------------------------------------------------------------
# convexity diagnostics


@dataclass(frozen=True)
class ConvexityReport:
    min_second_diff: float
    scale: float
    passed: bool


def convexity_probe(f, b_lo, b_hi, n_points=64, rel_tol=1e-8) -> ConvexityReport:
    """Second divided differences of f on a log-spaced grid.

    The tolerance is relative to max|f| / (b_hi - b_lo)^2, the curvature of
    a function of that magnitude bending once across the probed range."""
    if not 0 < b_lo < b_hi:
        raise ValueError("need 0 < b_lo < b_hi")
    if n_points < 16:
        raise ValueError("need at least 16 grid points")
    x = np.geomspace(b_lo, b_hi, n_points)
    y = np.array([float(f(v)) for v in x])
    h = np.diff(x)
    slopes = np.diff(y) / h
    second = 2.0 * np.diff(slopes) / (x[2:] - x[:-2])
    scale = float(np.max(np.abs(y)) / (b_hi - b_lo) ** 2)
    lowest = float(second.min())
    return ConvexityReport(lowest, scale, lowest >= -rel_tol * scale)
