"""Flat Rayleigh fading, matched beamforming, SINR and link-level helpers.

Named channel models are reduced to their Doppler frequency and drive a
first-order autoregressive (Clarke/Jakes correlated) complex Gaussian process
per antenna.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import j0

from .errors import NonPositiveBandwidth, OutOfCell, ZeroChannel

QPSK, QAM16, QAM64 = "QPSK", "QAM16", "QAM64"


@dataclass(frozen=True)
class ChannelState:
    gains: np.ndarray
    beamformer: np.ndarray
    doppler_hz: float
    noise_density: float
    distance_m: float = 1.0
    symbol: complex = 1.0 + 0j
    noise_sample: complex = 0j
    variance: float = 1.0   # per-antenna E|h|^2


def ar1_coefficient(doppler_hz, dt):
    """Lag-dt correlation of a Clarke-spectrum fading process."""
    return float(j0(2.0 * np.pi * doppler_hz * dt))


def complex_normal(rng, shape, variance=1.0):
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def evolve_gains(gains, rho, rng, variance=1.0):
    """One AR(1) step h' = rho*h + sqrt(1-rho^2)*w, w ~ CN(0, variance).

    The innovation is drawn even when rho == 1 so the stream position does
    not depend on the Doppler value."""
    w = complex_normal(rng, np.shape(gains), variance)
    return rho * gains + np.sqrt(max(0.0, 1.0 - rho * rho)) * w


def match_beamformer(gains):
    """Maximum-ratio unit-norm beamformer e = h/||h||."""
    h = np.asarray(gains, dtype=complex)
    norm = np.linalg.norm(h)
    if norm == 0.0:
        raise ZeroChannel("all channel gains are zero")
    return h / norm


def new_channel(n_antennas, doppler_hz, noise_density, rng, distance_m=1.0, variance=1.0):
    gains = complex_normal(rng, (n_antennas,), variance)
    return ChannelState(gains=gains, beamformer=match_beamformer(gains),
                        doppler_hz=doppler_hz, noise_density=noise_density,
                        distance_m=distance_m, variance=variance)


def evolve_channel(state: ChannelState, dt: float, rng) -> ChannelState:
    rho = ar1_coefficient(state.doppler_hz, dt)
    gains = evolve_gains(state.gains, rho, rng, state.variance)
    return replace(state, gains=gains, beamformer=match_beamformer(gains))


def beam_gain(gains, beamformer):
    """|h^H e|^2."""
    return float(abs(np.vdot(gains, beamformer)) ** 2)


def compute_sinr(gains, beamformer, tx_power_w, interferers, b, n0):
    """SINR of one service against co-slice interferers.

    ``interferers`` is an iterable of (power_w, gains, beamformer) for the
    other services q != i of the same slice."""
    if not b > 0:
        raise NonPositiveBandwidth(f"bandwidth must be > 0, got {b}")
    signal = beam_gain(gains, beamformer) * tx_power_w
    interference = sum(beam_gain(g, e) * p for p, g, e in interferers)
    return signal / (n0 * b + interference)


def sample_avg_snr(sigma_s_sq, rng, size=None):
    """Average SNR draw, exponential with mean sigma_s_sq (Rayleigh power)."""
    return rng.exponential(sigma_s_sq, size)


def select_modulation(snr_db):
    if snr_db < 8.0:
        return QPSK
    if snr_db < 14.0:
        return QAM16
    return QAM64


def path_loss_db(distance_m, radius_m=950.0, pl0_db=38.0, exponent=3.5, d0_m=1.0):
    """Log-distance path loss; scalar or array input."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(d < d0_m) or np.any(d > radius_m):
        raise OutOfCell(f"distance outside [{d0_m}, {radius_m}] m")
    pl = pl0_db + 10.0 * exponent * np.log10(d / d0_m)
    return float(pl) if pl.ndim == 0 else pl


class RandomWaypoint:
    """Random-waypoint walkers inside a disc centred on the gNodeB.

    Each UE owns a generator seeded from (seed, ue_id), so a UE follows the
    same trajectory in every slice that hosts one of its services."""

    def __init__(self, ue_ids, seed, radius_m=950.0, speed_range=(5.0, 35.0), min_dist=1.0):
        self.ue_ids = np.asarray(ue_ids, dtype=np.int64)
        self.radius = radius_m
        self.speed_range = speed_range
        self.min_dist = min_dist
        self._rngs = [np.random.default_rng([seed, int(u)]) for u in self.ue_ids]
        n = len(self.ue_ids)
        self.pos = np.empty((n, 2))
        self.target = np.empty((n, 2))
        self.speed = np.empty(n)
        for i, rng in enumerate(self._rngs):
            self.pos[i] = self._point(rng)
            self._new_leg(i)

    def _point(self, rng):
        rad = self.radius * np.sqrt(rng.random())
        ang = 2.0 * np.pi * rng.random()
        p = np.array([rad * np.cos(ang), rad * np.sin(ang)])
        return p

    def _new_leg(self, i):
        rng = self._rngs[i]
        self.target[i] = self._point(rng)
        self.speed[i] = rng.uniform(*self.speed_range)

    def step(self, dt):
        gap = self.target - self.pos
        dist = np.hypot(gap[:, 0], gap[:, 1])
        move = self.speed * dt
        arrived = dist <= move
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(arrived, 1.0, move / dist)
        self.pos += gap * frac[:, None]
        for i in np.flatnonzero(arrived):
            self._new_leg(i)

    def distances(self):
        d = np.hypot(self.pos[:, 0], self.pos[:, 1])
        return np.clip(d, self.min_dist, self.radius)


class ChannelBank:
    """Fading state of every service of one slice, held as arrays.

    A service's SNR is its drawn mean SNR scaled by the path-loss change since
    admission and by the normalised beamforming gain ||h||^2 / n_antennas;
    ``avg_snr`` is an exponential moving average of that instantaneous value."""

    def __init__(self, n_antennas, pathloss=(38.0, 3.5), radius_m=950.0, smoothing=0.01):
        self.n_antennas = n_antennas
        self.pathloss = pathloss
        self.radius_m = radius_m
        self.smoothing = smoothing
        self.ue_ids = np.zeros(0, dtype=np.int64)
        self.gains = np.zeros((0, n_antennas), dtype=complex)
        self.mean_snr = np.zeros(0)
        self.ref_loss_db = np.zeros(0)
        self.inst_snr = np.zeros(0)
        self.avg_snr = np.zeros(0)

    def __len__(self):
        return len(self.ue_ids)

    def _loss_db(self, distances):
        return path_loss_db(distances, self.radius_m, *self.pathloss)

    def add(self, ue_ids, mean_snr, distances, rng):
        n = len(ue_ids)
        gains = complex_normal(rng, (n, self.n_antennas))
        self.ue_ids = np.concatenate([self.ue_ids, np.asarray(ue_ids, dtype=np.int64)])
        self.gains = np.concatenate([self.gains, gains])
        self.mean_snr = np.concatenate([self.mean_snr, mean_snr])
        self.ref_loss_db = np.concatenate([self.ref_loss_db, np.atleast_1d(self._loss_db(distances))])
        # a new service starts its average at the drawn mean
        self.inst_snr = np.concatenate([self.inst_snr, mean_snr])
        self.avg_snr = np.concatenate([self.avg_snr, mean_snr])

    def step(self, rho, rng, distances):
        """Advance fading one TTI; ``distances`` are per service (metres)."""
        if len(self) == 0:
            return
        self.gains = evolve_gains(self.gains, rho, rng)
        loss = np.atleast_1d(self._loss_db(distances))
        beam = np.sum(np.abs(self.gains) ** 2, axis=1) / self.n_antennas
        self.inst_snr = self.mean_snr * 10.0 ** (-(loss - self.ref_loss_db) / 10.0) * beam
        a = self.smoothing
        self.avg_snr = (1.0 - a) * self.avg_snr + a * self.inst_snr

    def signal_power(self, n0, f_d):
        """|h^H e|^2 t_u expressed so that the SINR over one resource block
        without interference equals the instantaneous SNR."""
        return self.inst_snr * n0 * f_d

    def state_arrays(self):
        return (self.ue_ids, self.gains, self.mean_snr, self.ref_loss_db, self.inst_snr, self.avg_snr)

    def snapshot(self):
        return tuple(a.copy() for a in self.state_arrays())

    def restore(self, snap):
        (self.ue_ids, self.gains, self.mean_snr, self.ref_loss_db,
         self.inst_snr, self.avg_snr) = (a.copy() for a in snap)
