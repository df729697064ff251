"""Per-TTI scheduling of one network slice.

Each TTI learns radio allocations and throughputs, optimises per-service
bandwidth, re-learns with the new bandwidths, books everything in the
schedule map, tries to admit one more category of services and finally
regroups services into SLA categories.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .categories import group_arrays
from .channel import ChannelBank, RandomWaypoint, ar1_coefficient, sample_avg_snr
from .errors import (CalibrationFailed, DmusoError, InvariantViolation, NonConvergence,
                     Rejected)
from .learning import (RadioSolution, WarmStart, calibrate_beta, delta_throughput,
                       solve_radio_alloc, subcarrier_block_hz)
from .model import budget_sum, ScenarioConfig, ScheduleMap, SliceConfig, SystemResources
from .pareto import SINR_FLOOR, solve_bandwidths

log = logging.getLogger(__name__)

ADMIT_SLACK = 1e-9   # relative float slack on the radio budget test


@dataclass
class TtiRecord:
    t: int
    slice_id: str
    S: int
    delta: int
    thr_util: float
    thr_mbps: float
    sum_r: float
    sum_b: float
    n_scheduled: int
    thr_m_util: float
    thr_m_mbps: float
    no_bracket: int
    admitted: bool
    category_sizes: Tuple[int, ...] = ()


@dataclass(frozen=True)
class CapacityReport:
    S: int
    delta: int
    l_hat: int
    thr_m: float      # Mbps, maximum over TTIs
    thr_s: float
    thr_delta: float


Allocator = Callable[["SliceState", np.ndarray, np.ndarray, float, float, Optional[WarmStart]],
                     RadioSolution]


def default_allocator(state, cats, s, c_m, c_md, warm):
    sc = state.scenario
    return solve_radio_alloc(cats, s, state.beta, sc.optimizer.sigma_s_sq, state.cfg.r_max,
                             state.M, state.cfg.numerology, sc.tti_s, c_m, c_md,
                             warm_start=warm, cap=sc.exponent_cap)


_SERVICE_ARRAYS = ("sid", "ue", "cat", "r", "demand", "b", "gamma", "u_util", "u_rate",
                   "eta", "scheduled", "flagged", "sla")


class SliceState:
    """Everything one slice worker owns: services, channels, ledger, counters."""

    def __init__(self, cfg: SliceConfig, scenario: ScenarioConfig, seed: int, slice_index: int = 0,
                 allocator: Optional[Allocator] = None, calibrate: bool = True):
        self.cfg = cfg
        self.scenario = scenario
        self.seed = seed
        self.rng = np.random.default_rng([seed, slice_index])
        self.allocator = allocator or default_allocator
        self.calibrate = calibrate
        ch = scenario.channel
        self.f_d = subcarrier_block_hz(cfg.numerology)
        self.n0 = ch.noise_density_w_hz
        self.tx_power = ch.tx_power_per_service_w
        self.rho = ar1_coefficient(cfg.doppler_hz, scenario.tti_s)
        self.mobility = RandomWaypoint(np.arange(cfg.ue_count), seed, ch.cell_radius_m,
                                       (ch.speed_min_mps, ch.speed_max_mps))
        self.bank = ChannelBank(ch.antennas, (ch.pathloss_ref_db, ch.pathloss_exponent),
                                ch.cell_radius_m, ch.snr_smoothing)
        self.resources = SystemResources(cfg.r_max, 0.0, cfg.bandwidth_part_hz)
        self.schedule = ScheduleMap(cfg.slice_id)
        self.M = cfg.initial_categories
        self.k = 0
        self.beta = scenario.optimizer.beta
        self.pool = np.arange(cfg.ue_count, dtype=np.int64)
        self.next_sid = 1
        self.t = 0
        self.warm: Optional[WarmStart] = None
        self.max_thr_s = 0.0
        self.max_thr_m = 0.0
        self.sla_centers = np.zeros(0, dtype=np.int64)
        self.last_bw = None
        self.counters = {"no_bracket": 0, "nonconvergence": 0, "calibration_failed": 0,
                         "calibrations": 0, "rejected": 0, "admitted": 0, "unscheduled": 0}
        for name in _SERVICE_ARRAYS:
            dtype = bool if name in ("scheduled", "flagged") else (
                np.int64 if name in ("sid", "ue", "cat", "sla") else float)
            setattr(self, name, np.zeros(0, dtype=dtype))
        for m in range(1, self.M + 1):
            self._add_services(m, cfg.services_per_category)
        self.b[:] = cfg.bandwidth_part_hz / len(self.sid)
        self._enforce_bandwidth()
        self._update_gamma()

    # -- bookkeeping -------------------------------------------------------

    @property
    def S(self) -> int:
        return self.M + self.k

    @property
    def delta(self) -> int:
        return self.k

    def __len__(self):
        return len(self.sid)

    def _add_services(self, category, count, ue_ids=None, mean_snr=None):
        """Draw ``count`` UEs from the unused pool (unless given) and append
        one service per UE in ``category``."""
        if ue_ids is None:
            if len(self.pool) < count:
                raise Rejected(f"only {len(self.pool)} unused UEs left, need {count}")
            pick = np.sort(self.rng.choice(len(self.pool), size=count, replace=False))
            ue_ids = self.pool[pick]
            self.pool = np.delete(self.pool, pick)
        else:
            ue_ids = np.asarray(ue_ids, dtype=np.int64)
        if mean_snr is None:
            mean_snr = sample_avg_snr(self.scenario.optimizer.sigma_s_sq, self.rng, count)
        mean_snr = np.maximum(np.asarray(mean_snr, dtype=float), np.finfo(float).tiny)
        self.bank.add(ue_ids, mean_snr, self.mobility.distances()[ue_ids], self.rng)
        n = len(ue_ids)
        sids = np.arange(self.next_sid, self.next_sid + n, dtype=np.int64)
        self.next_sid += n
        share = self.cfg.bandwidth_part_hz / (len(self.sid) + n)
        extra = {"sid": sids, "ue": ue_ids, "cat": np.full(n, category, dtype=np.int64),
                 "b": np.full(n, share), "scheduled": np.ones(n, dtype=bool)}
        for name in _SERVICE_ARRAYS:
            cur = getattr(self, name)
            add = extra.get(name, np.zeros(n, dtype=cur.dtype))
            setattr(self, name, np.concatenate([cur, add]))

    def _enforce_bandwidth(self):
        bp = self.cfg.bandwidth_part_hz
        total = budget_sum(self.b)
        if total > bp:
            self.b *= bp / total
            while budget_sum(self.b) > bp:
                self.b *= np.nextafter(1.0, 0.0)

    def signal_and_interference(self):
        sig = self.bank.signal_power(self.n0, self.f_d)
        active = np.where(self.scheduled, sig, 0.0)
        interf = self.scenario.channel.leakage * (active.sum() - active)
        return sig, np.maximum(interf, 0.0)

    def _update_gamma(self):
        sig, interf = self.signal_and_interference()
        with np.errstate(divide="ignore"):
            self.gamma = np.where(self.b > 0, sig / (self.n0 * self.b + interf), 0.0)

    def cell_throughputs(self):
        """Shannon throughput of existing and new categories, per TTI."""
        dt = self.scenario.tti_s
        shannon = self.b * np.log1p(self.gamma)
        existing = self.cat <= self.M
        return (math.fsum(shannon[existing]) / dt, math.fsum(shannon[~existing]) / dt)

    def advance_channel(self, dt=None):
        """Move UEs, evolve fading and refresh the SNR averages."""
        dt = self.scenario.tti_s if dt is None else dt
        self.mobility.step(dt)
        self.bank.step(self.rho, self.rng, self.mobility.distances()[self.bank.ue_ids])

    def learn(self):
        c_m, c_md = self.cell_throughputs()
        try:
            sol = self.allocator(self, self.cat, self.bank.avg_snr, c_m, c_md, self.warm)
        except NonConvergence as exc:
            self.counters["nonconvergence"] += 1
            sol = exc.result
        self.warm = sol.warm_start()
        return sol

    def _apply_allocation(self, sol: RadioSolution):
        sc = self.scenario
        self.r = np.asarray(sol.r, dtype=float).copy()
        self.demand = np.asarray(sol.demand, dtype=float).copy()
        self.flagged = np.asarray(sol.flagged, dtype=bool).copy()
        x = self.beta * self.r * self.bank.avg_snr
        overflow = x > sc.exponent_cap
        self.scheduled &= ~overflow
        x = np.where(self.scheduled, x, 0.0)
        self.u_rate = np.where(self.scheduled, self.f_d * np.exp(x), 0.0)
        self.u_util = self.u_rate / sc.tti_s
        pw = sc.power
        with np.errstate(divide="ignore", invalid="ignore"):
            eta = self.u_rate * (pw.circuit_power_w + self.tx_power) / (
                (pw.static_power_w + pw.pa_slope * self.tx_power) * self.b)
        self.eta = np.where(self.scheduled & (self.b > 0), eta, 0.0)
        self.r = np.where(self.scheduled, self.r, 0.0)
        self.b = np.where(self.scheduled, self.b, 0.0)

    def _optimise_bandwidth(self):
        sc = self.scenario
        sig, interf = self.signal_and_interference()
        n = len(self)
        b_max = self.cfg.bandwidth_part_hz / n
        gamma_cap = sig / (self.n0 * b_max + interf)
        ok = self.scheduled & (gamma_cap > SINR_FLOOR)
        self.scheduled = ok
        b = np.zeros(n)
        if ok.any():
            try:
                bw = solve_bandwidths(sc.power, self.tx_power, sig[ok], interf[ok], self.n0,
                                      self.cfg.numerology, sc.tti_s, b_max, sc.optimizer)
                b[ok] = bw.b
                self.last_bw = (self.sid[ok].copy(), bw)
            except DmusoError as exc:
                log.warning("bandwidth optimisation failed for slice %s: %s", self.cfg.slice_id, exc)
                self.scheduled[:] = False
                self.last_bw = None
        self.b = b
        self._enforce_bandwidth()
        self._update_gamma()

    def _calibrate(self):
        sc = self.scenario
        c_m, c_md = self.cell_throughputs()
        self.counters["calibrations"] += 1
        try:
            self.beta = calibrate_beta(self.cat, self.bank.avg_snr, sc.optimizer.sigma_s_sq,
                                       self.cfg.r_max, self.M, self.cfg.numerology, sc.tti_s,
                                       c_m, c_md, c_m + c_md, sc.optimizer.beta_max,
                                       sc.exponent_cap)
        except CalibrationFailed as exc:
            self.counters["calibration_failed"] += 1
            log.info("slice %s keeps beta=%.6g: %s", self.cfg.slice_id, self.beta, exc)

    def rebuild_schedule(self):
        self.schedule.rebuild(self.cat, self.sid, self.r, self.b, self.cfg.r_max)
        self.schedule.existing_count = self.M
        self.schedule.additional_count = self.k
        per_cat = {}
        for c, sid, r, b in zip(self.cat, self.sid, self.r, self.b):
            per_cat.setdefault(int(c), {})[int(sid)] = (float(r), float(b))
        self.resources = SystemResources(self.cfg.r_max, self.resources.virtual_pool,
                                         self.cfg.bandwidth_part_hz, per_cat)

    def regroup(self):
        """SLA regrouping over scheduled services (1-based labels, 0 = unscheduled)."""
        sc = self.scenario
        self.sla = np.zeros(len(self), dtype=np.int64)
        idx = np.flatnonzero(self.scheduled)
        if len(idx) == 0:
            self.sla_centers = np.zeros(0, dtype=np.int64)
            return
        assign, centers = group_arrays(self.u_rate[idx] / 1e6, self.eta[idx],
                                       sc.category_delta_t_mbps, sc.category_delta_e)
        self.sla[idx] = assign + 1
        self.sla_centers = idx[centers]

    def sla_snapshot(self):
        """(index, center Mbps, center eta, size) per SLA category."""
        sizes = np.bincount(self.sla, minlength=len(self.sla_centers) + 1)[1:]
        return [(i + 1, float(self.u_rate[p] / 1e6), float(self.eta[p]), int(sizes[i]))
                for i, p in enumerate(self.sla_centers)]

    # -- invariants, snapshots ---------------------------------------------

    def violations(self) -> List[str]:
        out = []
        if budget_sum(self.r) > self.cfg.r_max:
            out.append(f"sum r = {budget_sum(self.r)!r} > r_max = {self.cfg.r_max}")
        if budget_sum(self.b) > self.cfg.bandwidth_part_hz:
            out.append(f"sum b = {budget_sum(self.b)!r} > BP = {self.cfg.bandwidth_part_hz}")
        sm = self.schedule
        if sm.total_capacity != len(self):
            out.append(f"capacity counter {sm.total_capacity} != {len(self)} services")
        if sm.category_count != self.S:
            out.append(f"category count {sm.category_count} != S = {self.S}")
        if len(np.unique(self.sid)) != len(self):
            out.append("a service is booked twice")
        out.extend(self.resources.conservation_violations())
        return out

    def check(self):
        bad = self.violations()
        if bad:
            raise InvariantViolation(f"slice {self.cfg.slice_id}: " + "; ".join(bad))

    def snapshot(self):
        return {
            "arrays": {name: getattr(self, name).copy() for name in _SERVICE_ARRAYS},
            "bank": self.bank.snapshot(),
            "rng": self.rng.bit_generator.state,
            "pool": self.pool.copy(),
            "scalars": (self.k, self.beta, self.next_sid, self.max_thr_s, self.max_thr_m),
            "warm": self.warm,
            "counters": dict(self.counters),
            "sla_centers": self.sla_centers.copy(),
            "last_bw": self.last_bw,
            "schedule": (dict(self.schedule.entries), dict(self.schedule.demands),
                         dict(self.schedule.capacities), self.schedule.existing_count,
                         self.schedule.additional_count),
            "resources": self.resources,
        }

    def restore(self, snap):
        for name, arr in snap["arrays"].items():
            setattr(self, name, arr.copy())
        self.bank.restore(snap["bank"])
        self.rng.bit_generator.state = snap["rng"]
        self.pool = snap["pool"].copy()
        self.k, self.beta, self.next_sid, self.max_thr_s, self.max_thr_m = snap["scalars"]
        self.warm = snap["warm"]
        self.counters = dict(snap["counters"])
        self.sla_centers = snap["sla_centers"].copy()
        self.last_bw = snap["last_bw"]
        entries, demands, caps, ex, add = snap["schedule"]
        self.schedule.entries = dict(entries)
        self.schedule.demands = dict(demands)
        self.schedule.capacities = dict(caps)
        self.schedule.existing_count = ex
        self.schedule.additional_count = add
        self.resources = snap["resources"]

    def fingerprint(self) -> str:
        """Digest of the mutable simulation state (used for rollback checks).
        Diagnostic counters are left out: a rejection is still counted."""
        h = hashlib.sha256()
        for name in _SERVICE_ARRAYS:
            h.update(getattr(self, name).tobytes())
        for arr in self.bank.state_arrays():
            h.update(arr.tobytes())
        h.update(self.pool.tobytes())
        h.update(self.sla_centers.tobytes())
        h.update(repr(self.rng.bit_generator.state).encode())
        h.update(repr((self.k, self.beta, self.next_sid, self.max_thr_s,
                       self.max_thr_m)).encode())
        h.update(repr(sorted(self.schedule.entries.items())).encode())
        h.update(repr(sorted(self.schedule.demands.items())).encode())
        if self.warm is not None:
            h.update(self.warm.r.tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------


def admit_category(state: SliceState) -> int:
    """Provisionally add one category of f_u services, re-learn every
    allocation and keep the category only if the total radio demand fits the
    budget.  Returns the new category index; raises :class:`Rejected` after a
    complete rollback otherwise."""
    cfg = state.cfg
    snap = state.snapshot()
    try:
        new_cat = state.S + 1
        state._add_services(new_cat, cfg.services_per_category)
        state._enforce_bandwidth()
        state._update_gamma()
        sol = state.learn()
        total = float(np.sum(sol.demand))
        if total > cfg.r_max * (1.0 + ADMIT_SLACK):
            raise Rejected(f"radio demand {total:.6g} exceeds r_max {cfg.r_max:g}", demand=total)
    except Rejected:
        state.restore(snap)
        state.counters["rejected"] += 1
        raise
    except DmusoError as exc:
        state.restore(snap)
        state.counters["rejected"] += 1
        raise Rejected(f"learning failed for the new category: {exc}") from exc
    state.k += 1
    state.counters["admitted"] += 1
    state._apply_allocation(sol)
    state.rebuild_schedule()
    return new_cat


def run_tti(state: SliceState, arrivals=None, t: Optional[int] = None) -> TtiRecord:
    """One scheduling tick.  ``arrivals`` is an optional sequence of
    (ue_id, category, mean_snr) services that join without an admission test."""
    sc = state.scenario
    state.t = state.t + 1 if t is None else t
    if state.t < 1:
        raise ValueError("TTI index starts at 1")
    if arrivals:
        for ue, cat, snr in arrivals:
            state._add_services(int(cat), 1, ue_ids=[ue], mean_snr=[snr])
        state._enforce_bandwidth()
        state._update_gamma()
    state.scheduled[:] = True
    state._update_gamma()

    sol = state.learn()                                   # radio and throughput
    state.r = sol.r.copy()
    state._optimise_bandwidth()                           # bandwidth and SINR
    if state.calibrate and (state.t == 1 or state.t % sc.beta_refresh_ttis == 0):
        state._calibrate()
    sol = state.learn()                                   # re-learn with new bandwidths
    state._apply_allocation(sol)                          # throughput, spectral efficiency
    state.counters["no_bracket"] += sol.no_bracket
    state.counters["unscheduled"] += int((~state.scheduled).sum())
    state.rebuild_schedule()
    state.check()

    admitted = False
    if len(state.pool) >= state.cfg.services_per_category:
        try:
            admit_category(state)
            admitted = True
        except Rejected as exc:
            log.debug("slice %s t=%d admission rejected: %s", state.cfg.slice_id, state.t, exc)
    state.regroup()
    state.check()

    existing = state.cat <= state.M
    thr_util = math.fsum(state.u_util)
    thr_mbps = math.fsum(state.u_rate) / 1e6
    thr_m_util = math.fsum(state.u_util[existing])
    thr_m_mbps = math.fsum(state.u_rate[existing]) / 1e6
    state.max_thr_s = max(state.max_thr_s, thr_mbps)
    state.max_thr_m = max(state.max_thr_m, thr_m_mbps)
    sizes = tuple(int(x) for x in np.bincount(state.sla)[1:]) if len(state.sla_centers) else ()
    return TtiRecord(state.t, state.cfg.slice_id, state.S, state.delta, thr_util, thr_mbps,
                     budget_sum(state.r), budget_sum(state.b), int(state.scheduled.sum()),
                     thr_m_util, thr_m_mbps, sol.no_bracket, admitted, sizes)


def capacity_report(state: SliceState) -> CapacityReport:
    if state.t < 1:
        raise ValueError("capacity_report needs at least one executed TTI")
    l_hat = state.schedule.total_capacity
    return CapacityReport(state.S, state.delta, l_hat, state.max_thr_m, state.max_thr_s,
                          delta_throughput(state.max_thr_s, state.max_thr_m))
