"""Scenario construction, the multi-slice TTI loop and result aggregation.

Slices never share mutable state, so each one runs start to finish in its
own worker; records are merged afterwards in (t, slice) order, which keeps
every output byte a function of (config, seed) alone.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import EmptyMetrics, InvariantViolation
from .model import ScenarioConfig, validate_scenario
from .scheduler import CapacityReport, SliceState, TtiRecord, capacity_report, run_tti

log = logging.getLogger(__name__)

OUTPUT_FILES = ("metrics_per_tti.csv", "pareto_trace.csv", "snr_curve.csv", "summary.json")
BIN_OFFSET = 200          # dB bins from -200 to +311 fit the accumulator
N_BINS = 512
DECIMALS = 6


@dataclass
class SliceResult:
    slice_id: str
    r_max: float
    bandwidth_part_hz: float
    records: List[TtiRecord]
    pareto: List[tuple]               # (service, b_star_hz, log1p_sinr, verdict)
    snr_count: np.ndarray
    snr_thr: np.ndarray
    snr_r: np.ndarray
    capacity: CapacityReport
    categories: List[tuple]
    beta: float
    min_r: float
    mean_demand: float
    counters: Dict[str, int]


@dataclass
class SimMetrics:
    per_tti: List[TtiRecord]
    slices: Dict[str, SliceResult]
    weighted_mean_cell_thr: Dict[str, float] = field(default_factory=dict)
    unweighted_mean_cell_thr: Dict[str, float] = field(default_factory=dict)

    @property
    def pareto_trace(self):
        return [row for res in self.slices.values() for row in res.pareto]


def build_scenario(config: ScenarioConfig, seed: int = 1) -> List[SliceState]:
    """One initialised slice state per configured slice."""
    validate_scenario(config)
    return [SliceState(cfg, config, seed, i) for i, cfg in enumerate(config.slices)]


def snr_bins(avg_snr):
    """Accumulator index of the 1 dB bin [k, k+1) holding each linear SNR."""
    snr_db = 10.0 * np.log10(np.asarray(avg_snr, dtype=float))
    return np.clip(np.floor(snr_db).astype(np.int64) + BIN_OFFSET, 0, N_BINS - 1)


def _run_slice(state: SliceState, t_max: int) -> SliceResult:
    records = []
    count = np.zeros(N_BINS, dtype=np.int64)
    thr = np.zeros(N_BINS)
    rsum = np.zeros(N_BINS)
    for t in range(1, t_max + 1):
        state.advance_channel()
        records.append(run_tti(state, t=t))
        on = state.scheduled
        if on.any():
            bins = snr_bins(state.bank.avg_snr[on])
            count += np.bincount(bins, minlength=N_BINS)
            thr += np.bincount(bins, weights=state.u_rate[on] / 1e6, minlength=N_BINS)
            rsum += np.bincount(bins, weights=state.r[on], minlength=N_BINS)

    pareto = []
    if state.last_bw is not None:
        sids, bw = state.last_bw
        for sid, b, g, verdict in zip(sids, bw.b, bw.gamma, bw.verdicts()):
            pareto.append((f"{state.cfg.slice_id}:{int(sid)}", float(b), float(np.log1p(g)),
                           verdict.tag))
    on = state.scheduled
    return SliceResult(
        slice_id=state.cfg.slice_id, r_max=state.cfg.r_max,
        bandwidth_part_hz=state.cfg.bandwidth_part_hz, records=records, pareto=pareto,
        snr_count=count, snr_thr=thr, snr_r=rsum, capacity=capacity_report(state),
        categories=state.sla_snapshot(), beta=float(state.beta),
        min_r=float(state.r[on].min()) if on.any() else 0.0,
        mean_demand=float(state.demand.mean()) if len(state) else 0.0,
        counters=dict(state.counters))


def _slice_job(args):
    config, seed, index, t_max = args
    state = SliceState(config.slices[index], config, seed, index)
    return _run_slice(state, t_max)


def worker_count(n_slices: int) -> int:
    """Slice parallelism: DMUSO_THREADS if set, else one per slice, never
    more than the available CPUs."""
    env = os.environ.get("DMUSO_THREADS", "").strip()
    wanted = int(env) if env else n_slices
    return max(1, min(wanted, n_slices, os.cpu_count() or 1))


def run(config: ScenarioConfig, t_max: int = 1000, seed: int = 1,
        workers: Optional[int] = None) -> SimMetrics:
    """Simulate every slice for ``t_max`` TTIs and aggregate the records."""
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    validate_scenario(config)
    jobs = [(config, seed, i, t_max) for i in range(len(config.slices))]
    workers = worker_count(len(jobs)) if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_slice_job, jobs))
    else:
        results = [_slice_job(job) for job in jobs]
    return collect(results)


def run_states(states: List[SliceState], t_max: int) -> SimMetrics:
    """In-process variant over already built slice states."""
    return collect([_run_slice(state, t_max) for state in states])


def collect(results: List[SliceResult]) -> SimMetrics:
    order = {res.slice_id: i for i, res in enumerate(results)}
    per_tti = sorted((rec for res in results for rec in res.records),
                     key=lambda rec: (rec.t, order[rec.slice_id]))
    metrics = SimMetrics(per_tti, {res.slice_id: res for res in results})
    for res in results:
        metrics.weighted_mean_cell_thr[res.slice_id] = weighted_mean(res.records)
        metrics.unweighted_mean_cell_thr[res.slice_id] = unweighted_mean(res.records)
    return metrics


def weighted_mean(records) -> float:
    """TTI throughputs weighted by the number of scheduled services."""
    w = np.array([rec.n_scheduled for rec in records], dtype=float)
    x = np.array([rec.thr_mbps for rec in records])
    if len(w) == 0 or w.sum() == 0:
        raise EmptyMetrics("no scheduled services to average")
    return math.fsum(w * x) / math.fsum(w)


def unweighted_mean(records) -> float:
    if not records:
        raise EmptyMetrics("no records")
    return math.fsum(rec.thr_mbps for rec in records) / len(records)


# ---------------------------------------------------------------------------
# aggregation


def throughput_by_category_count(metrics: SimMetrics):
    """Rows (slice, S, weighted_mean_mbps, unweighted_mean_mbps, ttis)."""
    rows = []
    for sid, res in metrics.slices.items():
        groups: Dict[int, list] = {}
        for rec in res.records:
            groups.setdefault(rec.S, []).append(rec)
        for s_val in sorted(groups):
            recs = groups[s_val]
            rows.append((sid, s_val, weighted_mean(recs), unweighted_mean(recs), len(recs)))
    return rows


def snr_curve(metrics: SimMetrics):
    """Rows (slice, bin_db, mean service Mbps, mean r, samples) over 1 dB bins."""
    rows = []
    for sid, res in metrics.slices.items():
        for i in np.flatnonzero(res.snr_count):
            n = res.snr_count[i]
            rows.append((sid, int(i) - BIN_OFFSET, res.snr_thr[i] / n, res.snr_r[i] / n, int(n)))
    return rows


def check_conservation(metrics: SimMetrics):
    bad = []
    for rec in metrics.per_tti:
        res = metrics.slices[rec.slice_id]
        if rec.sum_r > res.r_max or rec.sum_b > res.bandwidth_part_hz:
            bad.append(f"t={rec.t} slice={rec.slice_id} sum_r={rec.sum_r} sum_b={rec.sum_b}")
    if bad:
        raise InvariantViolation("; ".join(bad[:5]))


def aggregate(metrics: SimMetrics):
    """Report tables: throughput vs category count, Pareto trace and SNR curve."""
    if not metrics.per_tti:
        raise EmptyMetrics("no TTI records")
    check_conservation(metrics)
    return {
        "throughput_vs_categories": throughput_by_category_count(metrics),
        "pareto_trace": metrics.pareto_trace,
        "snr_curve": snr_curve(metrics),
    }


def summary(metrics: SimMetrics):
    out = {}
    by_s: Dict[str, list] = {}
    for sid, s_val, w, u, n in throughput_by_category_count(metrics):
        by_s.setdefault(sid, []).append({"S": s_val, "weighted_mean_mbps": w,
                                         "unweighted_mean_mbps": u, "ttis": n})
    for sid, res in metrics.slices.items():
        cap = res.capacity
        out[sid] = {
            "S": cap.S, "delta": cap.delta, "l_hat": cap.l_hat,
            "thr_m_mbps": cap.thr_m, "thr_s_mbps": cap.thr_s, "thr_delta_mbps": cap.thr_delta,
            "weighted_mean_mbps": metrics.weighted_mean_cell_thr[sid],
            "unweighted_mean_mbps": metrics.unweighted_mean_cell_thr[sid],
            "beta": res.beta, "min_r": res.min_r, "mean_demand": res.mean_demand,
            "r_max": res.r_max, "bandwidth_part_hz": res.bandwidth_part_hz,
            "counters": res.counters,
            "throughput_by_S": by_s.get(sid, []),
            "categories": [{"index": i, "center_mbps": u, "center_eta": e, "size": n}
                           for i, u, e, n in res.categories],
        }
    return out


# ---------------------------------------------------------------------------
# files


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.{DECIMALS}f}"
    return str(x)


def _round(obj):
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(f"{float(obj):.{DECIMALS}f}")
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_outputs(metrics: SimMetrics, out_dir) -> List[Path]:
    """Write the four result files.  Files are staged in a scratch directory
    inside ``out_dir`` and renamed into place only when all are complete."""
    tables = aggregate(metrics)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    try:
        _write_csv(staging / "metrics_per_tti.csv",
                   ["t", "slice", "S", "delta", "thr_paper", "thr_mbps", "sum_r", "sum_b"],
                   [(r.t, r.slice_id, r.S, r.delta, r.thr_util, r.thr_mbps, r.sum_r, r.sum_b)
                    for r in metrics.per_tti])
        _write_csv(staging / "pareto_trace.csv",
                   ["service", "b_star_hz", "log1p_sinr", "verdict"], tables["pareto_trace"])
        _write_csv(staging / "snr_curve.csv", ["slice", "bin_db", "thr_mbps", "mean_r"],
                   [row[:4] for row in tables["snr_curve"]])
        with open(staging / "summary.json", "w") as fh:
            json.dump(_round(summary(metrics)), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written = []
        for name in OUTPUT_FILES:
            os.replace(staging / name, out / name)
            written.append(out / name)
        return written
    finally:
        shutil.rmtree(staging, ignore_errors=True)
