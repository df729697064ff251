"""SLA-based slice-in-slice categories.

Services are grouped by (throughput Mbps, spectral efficiency) boxes of
half-width (delta_t, delta_e).  A single first-fit pass in service-id order
assigns each service to the first box containing it and opens a new box,
centred on the service, when none does.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import _kernels
from .model import Category

DEFAULT_DELTA_T = 0.05   # Mbps
DEFAULT_DELTA_E = 0.05   # bits/s/Hz


def try_assign(metrics: Tuple[float, float], categories: Sequence[Category]) -> Optional[int]:
    """Index of the first category (ascending index) whose box holds ``metrics``,
    or None when no category matches."""
    u, eta = metrics
    for cat in sorted(categories, key=lambda c: c.index):
        if cat.contains(u, eta):
            return cat.index
    return None


def group_arrays(u, eta, delta_t=DEFAULT_DELTA_T, delta_e=DEFAULT_DELTA_E):
    """Array form of the first-fit pass.

    Returns (assignment, centers) where assignment[i] is the 0-based category
    of the i-th service and centers[c] the position of the service that
    opened category c."""
    if not (delta_t > 0 and delta_e > 0):
        raise ValueError("category half-widths must be > 0")
    u = np.ascontiguousarray(u, dtype=float)
    eta = np.ascontiguousarray(eta, dtype=float)
    if not (np.isfinite(u).all() and np.isfinite(eta).all()):
        raise ValueError("service metrics must be finite")
    return _kernels.first_fit(u, eta, float(delta_t), float(delta_e))


def form_categories(services, delta_t=DEFAULT_DELTA_T, delta_e=DEFAULT_DELTA_E
                    ) -> Tuple[List[Category], Dict[int, int]]:
    """Build categories from ``services``, an iterable of (service_id, u_mbps, eta).

    Returns the categories (1-based indices) and a service_id -> index map."""
    rows = sorted(services, key=lambda row: row[0])
    if not rows:
        return [], {}
    ids = [row[0] for row in rows]
    u = np.array([row[1] for row in rows], dtype=float)
    eta = np.array([row[2] for row in rows], dtype=float)
    assign, centers = group_arrays(u, eta, delta_t, delta_e)
    cats = [Category(index=c + 1, center_throughput=float(u[pos]),
                     center_spectral_eff=float(eta[pos]), delta_t=delta_t, delta_e=delta_e)
            for c, pos in enumerate(centers)]
    mapping = {}
    for sid, c in zip(ids, assign):
        cats[c].members.append(sid)
        mapping[sid] = int(c) + 1
    return cats, mapping


def snapshot(categories: Sequence[Category]):
    """(index, center_throughput, center_spectral_eff, size) rows for export."""
    return [(c.index, c.center_throughput, c.center_spectral_eff, c.capacity) for c in categories]
