"""Compiled inner loops for the radio-allocation learner.

All quantities are handled as log-magnitudes so that Poisson-type terms with
exponents near 100 never overflow; the stationarity residual is only ever
needed through its sign.
"""

import math

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def _lse2(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    hi = max(a, b)
    return hi + math.log(math.exp(a - hi) + math.exp(b - hi))


@njit(cache=True)
def _log0(x):
    return math.log(x) if x > 0.0 else NEG_INF


@njit(cache=True)
def existing_logs(lam1, l1p, l1pp, m, lg_mkfact):
    """(log ST1, log ST2, log invB) for the existing-category side.

    ST = -(ST1 + ST2) with ST1 = m L'' L'^(m-1) e^lam1 lam1^(-2m) and
    ST2 = lam1^m e^(-L'); invB = e^lam1 / (lam1^m (m+k)!)."""
    llam = math.log(lam1)
    if l1pp > 0.0 and (l1p > 0.0 or m == 1):
        pw = 0.0 if m == 1 else (m - 1) * math.log(l1p)
        st1 = math.log(m) + math.log(l1pp) + pw + lam1 - 2.0 * m * llam
    else:
        st1 = NEG_INF
    st2 = m * llam - l1p
    inv_b = lam1 - m * llam - lg_mkfact
    return st1, st2, inv_b


@njit(cache=True)
def candidate_logs(lam2, l2p, mk, lg_mfact):
    """(log T1, log T2, log A) for the new-category side.

    FT = T1 - T2 with T1 = L' (e^-lam2 (m+k) L')^(m+k-1), T2 = lam2^(m+k) e^-L';
    A = e^-lam2 lam2^(m+k) m!."""
    if l2p > 0.0:
        t1 = math.log(l2p) + (mk - 1) * (-lam2 + math.log(mk) + math.log(l2p))
    elif mk == 1:
        t1 = _log0(l2p)
    else:
        t1 = NEG_INF
    if lam2 > 0.0:
        llam = math.log(lam2)
        t2 = mk * llam - l2p
        a = -lam2 + mk * llam + lg_mfact
    else:
        t2 = NEG_INF
        a = NEG_INF
    return t1, t2, a


@njit(cache=True)
def _log_diff(a, b):
    """(sign, log|e^a - e^b|); sign 0 when the difference vanishes."""
    if a == b:
        return 0, NEG_INF
    if a > b:
        return 1, a + math.log1p(-math.exp(b - a))
    return -1, b + math.log1p(-math.exp(a - b))


@njit(cache=True)
def residual_sign(lg, st1, st2, inv_b, t1, t2, a):
    """sign(G + FT*invB + ST*A), or 0 when it cannot be decided.

    FT = T1 - T2 is differenced before scaling by invB so a huge common
    factor does not swallow it.  An exact tie of the two sides (or a NaN)
    is reported as 0, meaning undetermined, never as a root."""
    pos = lg
    neg = NEG_INF
    if inv_b != NEG_INF:
        fs, fl = _log_diff(t1, t2)
        if fs > 0:
            pos = _lse2(pos, fl + inv_b)
        elif fs < 0:
            neg = fl + inv_b
    if a != NEG_INF:
        neg = _lse2(neg, _lse2(st1, st2) + a)
    if pos > neg:
        return 1
    if pos < neg:
        return -1
    return 0


@njit(cache=True)
def _sign_at(r, j, is_cand, w, s, beta, scale, c_m, c_md,
             e1, p1, q1, e2, p2, m, mk, lg, lg_mfact, lg_mkfact,
             c_st1, c_st2, c_invb, c_t1, c_t2, c_a):
    # sums passed in exclude service j
    if is_cand:
        lam2 = scale * (e2 + w * math.exp(beta * r * s)) / c_md
        l2p = (p2 + w * r * s) / c_md
        t1, t2, a = candidate_logs(lam2, l2p, mk, lg_mfact)
        return residual_sign(lg, c_st1, c_st2, c_invb, t1, t2, a)
    lam1 = scale * (e1 + w * math.exp(beta * r * s)) / c_m
    l1p = (p1 + w * r * s) / c_m
    l1pp = (q1 + w * r) / c_m
    st1, st2, inv_b = existing_logs(lam1, l1p, l1pp, m, lg_mkfact)
    return residual_sign(lg, st1, st2, inv_b, c_t1, c_t2, c_a)


@njit(cache=True)
def gauss_seidel(cats, is_cand, s, r0, beta, scale, c_m, c_md, r_max, sigma_s_sq,
                 m, mk, u_m, cap, lg_mfact, lg_mkfact, lg_gamma_um,
                 max_sweeps, tol, skip_existing_first, grid_frac):
    """Coordinate sweeps over the stationarity condition.

    Returns (r, flagged, sweeps, converged, lam1_snapshot, st_snapshot)."""
    n = s.shape[0]
    r = r0.copy()
    flagged = np.zeros(n, dtype=np.bool_)
    n_cand = 0
    for j in range(n):
        if is_cand[j]:
            n_cand += 1
    fair = r_max / n
    lam1_snap = 0.0
    st_snap = 0.0
    ng = grid_frac.shape[0]
    converged = False
    sweeps = 0
    log_sig = math.log(sigma_s_sq)

    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        e1 = 0.0
        p1 = 0.0
        q1 = 0.0
        e2 = 0.0
        p2 = 0.0
        for j in range(n):
            w = float(cats[j])
            if is_cand[j]:
                e2 += w * math.exp(beta * r[j] * s[j])
                p2 += w * r[j] * s[j]
            else:
                e1 += w * math.exp(beta * r[j] * s[j])
                p1 += w * r[j] * s[j]
                q1 += w * r[j]
        max_change = 0.0
        c_t1 = NEG_INF
        c_t2 = NEG_INF
        c_a = NEG_INF
        if n_cand > 0:
            lam2 = scale * e2 / c_md
            c_t1, c_t2, c_a = candidate_logs(lam2, p2 / c_md, mk, lg_mfact)

        for phase in range(2):
            if phase == 1:
                lam1 = scale * e1 / c_m
                c_st1, c_st2, c_invb = existing_logs(lam1, p1 / c_m, q1 / c_m, m, lg_mkfact)
                lam1_snap = lam1
                st_snap = -(math.exp(c_st1) + math.exp(c_st2)) if c_st1 < 700 and c_st2 < 700 else -np.inf
            else:
                c_st1 = NEG_INF
                c_st2 = NEG_INF
                c_invb = NEG_INF
            if phase == 0 and sweep == 0 and skip_existing_first:
                continue
            for j in range(n):
                cand = is_cand[j]
                if cand != (phase == 1):
                    continue
                w = float(cats[j])
                sj = s[j]
                old = r[j]
                old_e = w * math.exp(beta * old * sj)
                # remove j from the running sums
                if cand:
                    e2 -= old_e
                    p2 -= w * old * sj
                else:
                    e1 -= old_e
                    p1 -= w * old * sj
                    q1 -= w * old
                if n_cand == 0:
                    new = fair
                    flagged[j] = True
                else:
                    lg = (u_m - 1) * (math.log(sj) - log_sig) - lg_gamma_um
                    hi_r = r_max
                    if beta * sj > 0.0:
                        hi_r = min(r_max, cap / (beta * sj))
                    prev_r = 0.0
                    prev = _sign_at(0.0, j, cand, w, sj, beta, scale, c_m, c_md,
                                    e1, p1, q1, e2, p2, m, mk, lg, lg_mfact, lg_mkfact,
                                    c_st1, c_st2, c_invb, c_t1, c_t2, c_a)
                    # a zero sign is undetermined: it opens no bracket
                    found = False
                    lo_b = 0.0
                    hi_b = 0.0
                    root = 0.0
                    for g in range(ng):
                        rg = r_max * grid_frac[g]
                        if rg > hi_r:
                            break
                        sg = _sign_at(rg, j, cand, w, sj, beta, scale, c_m, c_md,
                                      e1, p1, q1, e2, p2, m, mk, lg, lg_mfact, lg_mkfact,
                                      c_st1, c_st2, c_invb, c_t1, c_t2, c_a)
                        if sg == 0:
                            continue
                        if prev != 0 and sg != prev:
                            lo_b = prev_r
                            hi_b = rg
                            lo_s = prev
                            for _ in range(200):
                                mid = 0.5 * (lo_b + hi_b)
                                if mid <= lo_b or mid >= hi_b or hi_b - lo_b <= 1e-13 * hi_b:
                                    break
                                sm = _sign_at(mid, j, cand, w, sj, beta, scale, c_m, c_md,
                                              e1, p1, q1, e2, p2, m, mk, lg, lg_mfact, lg_mkfact,
                                              c_st1, c_st2, c_invb, c_t1, c_t2, c_a)
                                if sm == 0:
                                    lo_b = mid
                                    hi_b = mid
                                    break
                                if sm == lo_s:
                                    lo_b = mid
                                else:
                                    hi_b = mid
                            root = 0.5 * (lo_b + hi_b)
                            found = True
                            break
                        prev = sg
                        prev_r = rg
                    if found:
                        new = root
                        flagged[j] = False
                    else:
                        new = fair
                        flagged[j] = True
                r[j] = new
                d = abs(new - old)
                if d > max_change:
                    max_change = d
                new_e = w * math.exp(beta * new * sj)
                if cand:
                    e2 += new_e
                    p2 += w * new * sj
                else:
                    e1 += new_e
                    p1 += w * new * sj
                    q1 += w * new
        if max_change < tol and not (sweep == 0 and skip_existing_first):
            converged = True
            break
    return r, flagged, sweeps, converged, lam1_snap, st_snap


@njit(cache=True)
def within(x, center, delta):
    """Closed-interval test |x - center| <= delta, forgiving last-bit rounding."""
    slack = 1e-12 * max(1.0, abs(center), abs(x))
    return abs(x - center) <= delta + slack


@njit(cache=True)
def first_fit(u, eta, delta_t, delta_e):
    """Greedy first-fit grouping; returns (assignment, center_of_each_category)."""
    n = u.shape[0]
    assign = np.empty(n, dtype=np.int64)
    centers = np.empty(n, dtype=np.int64)
    n_cat = 0
    for i in range(n):
        hit = -1
        for c in range(n_cat):
            j = centers[c]
            if within(u[i], u[j], delta_t) and within(eta[i], eta[j], delta_e):
                hit = c
                break
        if hit < 0:
            centers[n_cat] = i
            hit = n_cat
            n_cat += 1
        assign[i] = hit
    return assign, centers[:n_cat].copy()
