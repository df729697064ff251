"""Domain model shared by every module: slice/scenario configuration, per-service
records, categories and the schedule ledger.

Scenario files are INI-style (``configparser``) with the sections
``[scenario]``, ``[channel]``, ``[power]``, ``[optimizer]`` and one
``[slice.<id>]`` section per network slice.  Units are carried in the key
names (``_hz``, ``_dbm``, ``_mps``, ``_w``, ``_m``).
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigParseError, ScenarioError

CHANNEL_TAGS = {"epa5": 5.0, "eva70": 70.0, "etu300": 300.0}
_RAYLEIGH_RE = re.compile(r"^rayleigh\(\s*([0-9.eE+-]+)\s*\)$")

BUNDLED_DIR = Path(__file__).with_name("scenarios")


def budget_sum(values) -> float:
    """Sum used for budget checks: the larger of the exactly rounded and the
    plain floating sum, so a value passing one check passes every other."""
    values = np.asarray(values, dtype=float)
    return max(math.fsum(values), float(values.sum()))


def within(x, center, delta):
    """Closed interval test |x - center| <= delta, forgiving last-bit rounding
    so that decimal boundaries such as 1.05 vs 1.00 +/- 0.05 count as inside."""
    slack = 1e-12 * max(1.0, abs(center), abs(x))
    return abs(x - center) <= delta + slack


def parse_channel_tag(tag: str) -> float:
    """Doppler frequency (Hz) for a channel tag: epa5 | eva70 | etu300 | rayleigh(f)."""
    tag = tag.strip().lower()
    if tag in CHANNEL_TAGS:
        return CHANNEL_TAGS[tag]
    m = _RAYLEIGH_RE.match(tag)
    if m is None:
        raise ValueError(f"unknown channel model tag {tag!r}")
    doppler = float(m.group(1))
    if doppler < 0 or not math.isfinite(doppler):
        raise ValueError(f"doppler must be a finite value >= 0, got {doppler}")
    return doppler


@dataclass(frozen=True)
class SliceConfig:
    slice_id: str
    bandwidth_part_hz: float
    r_max: float
    ue_count: int
    initial_categories: int = 6
    services_per_category: int = 5
    numerology: int = 0
    channel: str = "rayleigh(70)"

    @property
    def doppler_hz(self) -> float:
        return parse_channel_tag(self.channel)


@dataclass(frozen=True)
class ChannelConfig:
    noise_density_dbm_hz: float = -174.0
    tx_power_dbm: float = 25.0
    services_per_ue: int = 4
    antennas: int = 4
    cell_radius_m: float = 950.0
    pathloss_ref_db: float = 38.0
    pathloss_exponent: float = 3.5
    speed_min_mps: float = 5.0
    speed_max_mps: float = 35.0
    snr_smoothing: float = 0.01
    leakage_db: float = -40.0

    @property
    def noise_density_w_hz(self) -> float:
        return 10 ** ((self.noise_density_dbm_hz - 30.0) / 10.0)

    @property
    def tx_power_per_service_w(self) -> float:
        # one UE power budget split evenly over the UE's services
        return 10 ** ((self.tx_power_dbm - 30.0) / 10.0) / self.services_per_ue

    @property
    def leakage(self) -> float:
        return 10 ** (self.leakage_db / 10.0)


@dataclass(frozen=True)
class PowerModel:
    circuit_power_w: float = 0.2
    static_power_w: float = 0.2
    pa_slope: float = 2.5


@dataclass(frozen=True)
class OptimizerParams:
    """Constants for the Wolfe line search, the epsilon-constraint loop and
    utility learning.  ``eps``, ``eps2`` and ``b_min_hz`` left as ``None`` are
    derived per service (f2 at the bandwidth cap, eps, one resource block)."""

    c1: float = 1e-4
    c2: float = 0.9
    eps: Optional[float] = None
    eps_prime: float = 1e-12
    eps2: Optional[float] = None
    beta: float = 0.01
    sigma_s_sq: float = 10.0
    max_iters: int = 100
    b_min_hz: Optional[float] = None
    beta_max: float = 1.0


@dataclass(frozen=True)
class ScenarioConfig:
    slices: Tuple[SliceConfig, ...]
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    power: PowerModel = field(default_factory=PowerModel)
    optimizer: OptimizerParams = field(default_factory=OptimizerParams)
    tti_s: float = 1e-3
    beta_refresh_ttis: int = 100
    exponent_cap: float = 50.0
    category_delta_t_mbps: float = 0.05
    category_delta_e: float = 0.05

    def slice(self, slice_id: str) -> SliceConfig:
        for s in self.slices:
            if s.slice_id == slice_id:
                return s
        raise KeyError(slice_id)


@dataclass(frozen=True)
class SystemResources:
    """Per-slice resource pools.  ``per_category`` maps category index to
    {service_id: (radio_alloc, bandwidth_hz)}; the virtual pool is carried
    but never scheduled."""

    radio_pool: float
    virtual_pool: float
    transport_pool: float
    per_category: Dict[int, Dict[int, Tuple[float, float]]] = field(default_factory=dict)

    def granted_radio(self) -> float:
        return budget_sum([r for grants in self.per_category.values() for r, _ in grants.values()])

    def granted_transport(self) -> float:
        return budget_sum([b for grants in self.per_category.values() for _, b in grants.values()])

    def conservation_violations(self) -> List[str]:
        out = []
        if self.granted_radio() > self.radio_pool:
            out.append(f"radio {self.granted_radio()} > pool {self.radio_pool}")
        if self.granted_transport() > self.transport_pool:
            out.append(f"transport {self.granted_transport()} > pool {self.transport_pool}")
        return out


@dataclass
class UEService:
    service_id: int
    ue_id: int
    category_id: int
    slice_id: str
    avg_snr: float
    radio_alloc: float = 0.0
    bandwidth_hz: float = 0.0
    throughput: float = 0.0
    spectral_eff: float = 0.0
    tx_power_w: float = 0.0

    def __post_init__(self):
        for name in ("radio_alloc", "bandwidth_hz", "avg_snr", "throughput"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class Category:
    """A slice-in-slice category: SLA box centred on (throughput, efficiency)."""

    index: int
    center_throughput: float
    center_spectral_eff: float
    delta_t: float
    delta_e: float
    members: List[int] = field(default_factory=list)
    is_new: bool = False

    @property
    def capacity(self) -> int:
        return len(self.members)

    def contains(self, u_mbps: float, eta: float) -> bool:
        return (within(u_mbps, self.center_throughput, self.delta_t)
                and within(eta, self.center_spectral_eff, self.delta_e))


@dataclass
class ScheduleMap:
    """Live allocation ledger of one slice.

    ``entries`` maps (slice, category, service) -> (radio_alloc, bandwidth_hz);
    ``demands`` holds each category's share of the radio pool and
    ``capacities`` its service count.
    """

    slice_id: str
    entries: Dict[Tuple[str, int, int], Tuple[float, float]] = field(default_factory=dict)
    demands: Dict[int, float] = field(default_factory=dict)
    capacities: Dict[int, int] = field(default_factory=dict)
    existing_count: int = 0
    additional_count: int = 0

    @property
    def total_capacity(self) -> int:
        return sum(self.capacities.values())

    @property
    def category_count(self) -> int:
        return self.existing_count + self.additional_count

    def rebuild(self, categories, service_ids, radio, bandwidth, r_max) -> None:
        self.entries.clear()
        self.demands.clear()
        self.capacities.clear()
        for cat, sid, r, b in zip(categories, service_ids, radio, bandwidth):
            cat, sid = int(cat), int(sid)
            self.entries[(self.slice_id, cat, sid)] = (float(r), float(b))
            self.demands[cat] = self.demands.get(cat, 0.0) + float(r) / r_max
            self.capacities[cat] = self.capacities.get(cat, 0) + 1


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    code: str
    field: str
    message: str

    def __str__(self):
        return f"{self.code}: {self.field}: {self.message}"


def _positive(v, name, code, out):
    if v is not None and not (v > 0 and math.isfinite(v)):
        out.append(Violation(code, name, f"must be > 0, got {v}"))


def validate_scenario(config: ScenarioConfig) -> ScenarioConfig:
    """Return ``config`` unchanged if every invariant holds, else raise
    :class:`ScenarioError` listing all violations."""
    out: List[Violation] = []
    if not config.slices:
        out.append(Violation("EmptySlice", "slices", "no slices configured"))
    seen = set()
    for s in config.slices:
        p = f"slice.{s.slice_id}"
        if s.slice_id in seen:
            out.append(Violation("DuplicateSlice", p, "slice id repeated"))
        seen.add(s.slice_id)
        _positive(s.bandwidth_part_hz, f"{p}.bandwidth_part_hz", "NonPositivePool", out)
        _positive(s.r_max, f"{p}.r_max", "NonPositivePool", out)
        for name in ("initial_categories", "services_per_category", "ue_count"):
            if getattr(s, name) < 1:
                out.append(Violation("EmptySlice", f"{p}.{name}", "must be >= 1"))
        if (s.initial_categories >= 1 and s.services_per_category >= 1
                and s.ue_count < s.initial_categories * s.services_per_category):
            out.append(Violation("EmptySlice", f"{p}.ue_count",
                                 "fewer UEs than the initial categories need"))
        if s.numerology not in (0, 1, 2, 3, 4):
            out.append(Violation("BadNumerology", f"{p}.numerology", "must be in 0..4"))
        try:
            parse_channel_tag(s.channel)
        except ValueError as exc:
            out.append(Violation("BadChannel", f"{p}.channel", str(exc)))

    opt = config.optimizer
    if not (0.0 < opt.c1 < 1.0):
        out.append(Violation("BadWolfeConstants", "optimizer.c1", f"need 0 < c1 < 1, got {opt.c1}"))
    if not (opt.c1 < opt.c2 < 1.0):
        out.append(Violation("BadWolfeConstants", "optimizer.c2",
                             f"need c1 < c2 < 1, got c1={opt.c1}, c2={opt.c2}"))
    for name in ("eps", "eps_prime", "eps2", "sigma_s_sq", "b_min_hz", "beta", "beta_max"):
        _positive(getattr(opt, name), f"optimizer.{name}", "NonPositiveParameter", out)
    if opt.max_iters < 1:
        out.append(Violation("NonPositiveParameter", "optimizer.max_iters", "must be >= 1"))

    pw = config.power
    for name in ("circuit_power_w", "static_power_w", "pa_slope"):
        _positive(getattr(pw, name), f"power.{name}", "BadPowerModel", out)

    ch = config.channel
    if ch.antennas < 1:
        out.append(Violation("BadChannel", "channel.antennas", "must be >= 1"))
    if ch.services_per_ue < 1:
        out.append(Violation("BadChannel", "channel.services_per_ue", "must be >= 1"))
    if not ch.cell_radius_m > 1.0:
        out.append(Violation("BadChannel", "channel.cell_radius_m", "must exceed 1 m"))
    if not (0.0 < ch.snr_smoothing <= 1.0):
        out.append(Violation("BadChannel", "channel.snr_smoothing", "must be in (0, 1]"))
    if not (0.0 <= ch.speed_min_mps <= ch.speed_max_mps):
        out.append(Violation("BadChannel", "channel.speed_min_mps", "need 0 <= min <= max"))
    _positive(ch.pathloss_exponent, "channel.pathloss_exponent", "BadChannel", out)

    _positive(config.tti_s, "scenario.tti_s", "NonPositiveParameter", out)
    _positive(config.exponent_cap, "scenario.exponent_cap", "NonPositiveParameter", out)
    _positive(config.category_delta_t_mbps, "scenario.category_delta_t_mbps", "NonPositiveParameter", out)
    _positive(config.category_delta_e, "scenario.category_delta_e", "NonPositiveParameter", out)
    if config.beta_refresh_ttis < 1:
        out.append(Violation("NonPositiveParameter", "scenario.beta_refresh_ttis", "must be >= 1"))

    if out:
        raise ScenarioError(out)
    return config


# ---------------------------------------------------------------------------
# scenario file I/O

_SCENARIO_KEYS = {
    "tti_s": float, "beta_refresh_ttis": int, "exponent_cap": float,
    "category_delta_t_mbps": float, "category_delta_e": float,
}
_CHANNEL_KEYS = {
    "noise_density_dbm_hz": float, "tx_power_dbm": float, "services_per_ue": int,
    "antennas": int, "cell_radius_m": float, "pathloss_ref_db": float,
    "pathloss_exponent": float, "speed_min_mps": float, "speed_max_mps": float,
    "snr_smoothing": float, "leakage_db": float,
}
_POWER_KEYS = {"circuit_power_w": float, "static_power_w": float, "pa_slope": float}
_OPTIMIZER_KEYS = {
    "c1": float, "c2": float, "eps": "auto", "eps_prime": float, "eps2": "auto",
    "beta": float, "sigma_s_sq": float, "max_iters": int, "b_min_hz": "auto",
    "beta_max": float,
}
_SLICE_REQUIRED = {"bandwidth_part_hz": float, "r_max": float, "ue_count": int}
_SLICE_OPTIONAL = {"initial_categories": int, "services_per_category": int,
                   "numerology": int, "channel": str}


def _convert(section, key, raw, kind):
    try:
        if kind == "auto":
            return None if raw.strip().lower() == "auto" else float(raw)
        if kind is int:
            value = float(raw)
            if value != int(value):
                raise ValueError("not an integer")
            return int(value)
        if kind is str:
            return raw.strip()
        return float(raw)
    except ValueError as exc:
        raise ConfigParseError(f"[{section}] {key} = {raw!r}: {exc}") from None


def _read_section(cp, name, spec, required):
    if not cp.has_section(name):
        raise ConfigParseError(f"missing section [{name}]")
    sec = cp[name]
    unknown = set(sec) - set(spec)
    if unknown:
        raise ConfigParseError(f"[{name}] unknown keys: {', '.join(sorted(unknown))}")
    out = {}
    for key, kind in spec.items():
        if key in sec:
            out[key] = _convert(name, key, sec[key], kind)
        elif key in required:
            raise ConfigParseError(f"[{name}] missing key {key!r}")
    return out


def parse_scenario(text: str) -> ScenarioConfig:
    """Parse scenario text.  Raises :class:`ConfigParseError` for structural
    problems; semantic invariants are left to :func:`validate_scenario`."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigParseError(str(exc).splitlines()[0]) from None

    scen = _read_section(cp, "scenario", _SCENARIO_KEYS, required=_SCENARIO_KEYS)
    chan = _read_section(cp, "channel", {**_CHANNEL_KEYS, "model": str}, required=_CHANNEL_KEYS)
    power = _read_section(cp, "power", _POWER_KEYS, required=_POWER_KEYS)
    opt = _read_section(cp, "optimizer", _OPTIMIZER_KEYS, required=_OPTIMIZER_KEYS)

    default_model = chan.pop("model", "rayleigh(70)")
    slices = []
    for name in cp.sections():
        if not name.startswith("slice."):
            if name not in ("scenario", "channel", "power", "optimizer"):
                raise ConfigParseError(f"unknown section [{name}]")
            continue
        vals = _read_section(cp, name, {**_SLICE_REQUIRED, **_SLICE_OPTIONAL},
                             required=_SLICE_REQUIRED)
        vals.setdefault("channel", default_model)
        slices.append(SliceConfig(slice_id=name.split(".", 1)[1], **vals))
    if not slices:
        raise ConfigParseError("no [slice.<id>] sections")

    return ScenarioConfig(
        slices=tuple(slices),
        channel=ChannelConfig(**chan),
        power=PowerModel(**power),
        optimizer=OptimizerParams(**opt),
        **scen,
    )


def resolve_config_path(path) -> Path:
    """Existing path as given, else a bundled scenario of that name."""
    p = Path(path)
    if p.exists():
        return p
    bundled = BUNDLED_DIR / p.name
    if bundled.exists():
        return bundled
    return p


def load_scenario(path) -> ScenarioConfig:
    p = resolve_config_path(path)
    try:
        text = p.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigParseError(f"cannot read {p}: {exc}") from None
    return parse_scenario(text)


def table1_scenario() -> ScenarioConfig:
    """The bundled four-slice desk scenario (``table1.cfg``)."""
    return load_scenario(BUNDLED_DIR / "table1.cfg")


def with_optimizer(config: ScenarioConfig, **changes) -> ScenarioConfig:
    return replace(config, optimizer=replace(config.optimizer, **changes))
