"""Ground-truth multipath scenes and exact channel evaluation.

A scene holds, per transmitting source (RRU in downlink, mobile station in
uplink), the list of multipath components seen by one sensing receiver.
Channels follow the usual narrowband-array model: every path contributes a
rank-one term ``b * a_rx(aoa) a_tx(aod)^T`` with a delay phase across
subcarriers and a Doppler phase across OFDM blocks.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from .waveform import OfdmGrid

SPEED_OF_LIGHT = 299_792_458.0
MAX_ANGLE = math.radians(85.0)

# transmit powers (dBm) and pathloss exponents per sensing mode
TX_POWER_DBM = {"downlink": 30.0, "uplink": 25.0}
PATHLOSS_EXPONENT = {"downlink": 4.0, "uplink": 2.0}


@dataclass(frozen=True)
class UlaConfig:
    """Half-wavelength uniform linear array with ``elements`` antennas."""

    elements: int = 1

    def __post_init__(self):
        if int(self.elements) < 1:
            raise ValueError(f"array needs at least one element, got {self.elements}")


@dataclass(frozen=True)
class PathParams:
    delay: float
    doppler: float
    aoa: float
    aod: float
    amp: complex
    source: int = 0
    is_clutter: bool = False

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError(f"negative delay {self.delay}")
        if abs(self.aoa) >= math.pi / 2 or abs(self.aod) >= math.pi / 2:
            raise ValueError(f"angles must lie in (-pi/2, pi/2): aoa={self.aoa}, aod={self.aod}")
        object.__setattr__(self, "amp", complex(self.amp))

    @property
    def power(self) -> float:
        return abs(self.amp) ** 2


@dataclass(frozen=True)
class ClusterSpec:
    """Random cluster of paths for one source.

    Each interval is ``(low, high)`` and sampled uniformly. Offsets are drawn
    once per cluster; spans are per-path perturbations around the offset.
    Defaults are the simulation ranges used throughout the experiments.
    """

    path_count_range: tuple[int, int] = (10, 15)
    direction_span_deg: tuple[float, float] = (0.0, 45.0)
    distance_span_m: tuple[float, float] = (0.0, 45.0)
    doppler_span_hz: tuple[float, float] = (0.0, 600.0)
    direction_offset_deg: tuple[float, float] = (-75.0, 75.0)
    distance_offset_m: tuple[float, float] = (50.0, 180.0)
    speed_offset_mps: tuple[float, float] = (-40.0, 40.0)
    source: int | None = None
    clutter: bool = False

    def __post_init__(self):
        for name in ("path_count_range", "direction_span_deg", "distance_span_m", "doppler_span_hz",
                     "direction_offset_deg", "distance_offset_m", "speed_offset_mps"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: empty interval ({lo}, {hi})")
            object.__setattr__(self, name, (lo, hi))
        if self.path_count_range[0] < 0:
            raise ValueError("path counts must be non-negative")
        if self.distance_span_m[0] < 0 or self.distance_offset_m[0] < 0:
            raise ValueError("distances must be non-negative")

    def distance_bounds(self) -> tuple[float, float]:
        return (self.distance_offset_m[0] + self.distance_span_m[0],
                self.distance_offset_m[1] + self.distance_span_m[1])


@dataclass(frozen=True)
class Scene:
    links: tuple[tuple[PathParams, ...], ...]
    static_period_s: float = 1.7e-3
    carrier_hz: float = 2.35e9
    clutter_doppler_bound: float = 1.0

    def __post_init__(self):
        if self.static_period_s <= 0:
            raise ValueError("static period must be positive")
        links = tuple(tuple(link) for link in self.links)
        object.__setattr__(self, "links", links)
        for k, link in enumerate(links):
            for p in link:
                if p.is_clutter and abs(p.doppler) > self.clutter_doppler_bound:
                    raise ValueError(f"clutter path on link {k} has |doppler| {p.doppler} "
                                     f"above bound {self.clutter_doppler_bound}")

    @property
    def n_sources(self) -> int:
        return len(self.links)

    def paths(self) -> list[PathParams]:
        return [p for link in self.links for p in link]

    def with_links(self, links) -> "Scene":
        return Scene(links, self.static_period_s, self.carrier_hz, self.clutter_doppler_bound)

    def to_dict(self) -> dict:
        def enc(p: PathParams):
            d = asdict(p)
            d["amp"] = [p.amp.real, p.amp.imag]
            return d
        return {
            "static_period_s": self.static_period_s,
            "carrier_hz": self.carrier_hz,
            "clutter_doppler_bound": self.clutter_doppler_bound,
            "links": [[enc(p) for p in link] for link in self.links],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        links = []
        for link in d["links"]:
            paths = []
            for p in link:
                p = dict(p)
                re, im = p.pop("amp")
                paths.append(PathParams(amp=complex(re, im), **p))
            links.append(tuple(paths))
        return cls(tuple(links), d["static_period_s"], d["carrier_hz"], d.get("clutter_doppler_bound", 1.0))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Scene":
        return cls.from_dict(json.loads(text))


def steering(cfg: UlaConfig | int, angle) -> np.ndarray:
    """Array response, element ``m`` equal to ``exp(j*pi*m*sin(angle))``.

    ``angle`` may be an array; the element axis is appended last.
    """
    m = cfg if isinstance(cfg, int) else cfg.elements
    s = np.sin(np.asarray(angle, dtype=float))
    return np.exp(1j * np.pi * np.multiply.outer(s, np.arange(m)))


def _link_arrays(link: Sequence[PathParams]):
    tau = np.array([p.delay for p in link], dtype=float)
    fd = np.array([p.doppler for p in link], dtype=float)
    aoa = np.array([p.aoa for p in link], dtype=float)
    aod = np.array([p.aod for p in link], dtype=float)
    amp = np.array([p.amp for p in link], dtype=complex)
    return tau, fd, aoa, aod, amp


def freq_channel(link: Sequence[PathParams], n, t, grid: "OfdmGrid",
                 rx: UlaConfig, tx: UlaConfig) -> np.ndarray:
    """Frequency-domain channel ``H_n`` at block ``t``.

    Scalar ``n`` gives an ``(M_rx, M_tx)`` matrix; an array of subcarrier
    indexes gives a stack of shape ``(len(n), M_rx, M_tx)``.
    """
    n_arr = np.atleast_1d(np.asarray(n, dtype=float))
    out = np.zeros((n_arr.size, rx.elements, tx.elements), dtype=complex)
    if len(link):
        tau, fd, aoa, aod, amp = _link_arrays(link)
        gain = amp * np.exp(2j * np.pi * t * fd * grid.block_period_s)
        delay_phase = np.exp(-2j * np.pi * np.outer(n_arr, tau) * grid.subcarrier_spacing_hz)
        a_rx = steering(rx, aoa)
        a_tx = steering(tx, aod)
        out = np.einsum("nl,l,li,lj->nij", delay_phase, gain, a_rx, a_tx)
    return out[0] if np.ndim(n) == 0 else out


def time_channel(link: Sequence[PathParams], t_s: float, rx: UlaConfig,
                 tx: UlaConfig) -> list[tuple[float, np.ndarray]]:
    """Impulse list ``[(delay, matrix)]`` of the channel at time ``t_s``."""
    if t_s < 0:
        raise ValueError("time must be non-negative")
    out = []
    for p in link:
        mat = p.amp * np.exp(2j * np.pi * p.doppler * t_s) * np.outer(steering(rx, p.aoa), steering(tx, p.aod))
        out.append((p.delay, mat))
    return out


def pathloss(distance_m, exponent: float):
    """Power gain ``distance**-exponent``, anchored to 1 at 1 m."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    g = d ** (-float(exponent))
    return float(g) if g.ndim == 0 else g


def free_space_loss_db(carrier_hz: float, distance_m: float = 1.0) -> float:
    """Friis free-space loss at ``distance_m``; the default reference-loss constant."""
    lam = SPEED_OF_LIGHT / carrier_hz
    return 20 * math.log10(4 * math.pi * distance_m / lam)


def dbm_to_watt(p_dbm):
    return 10 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)


@dataclass(frozen=True)
class LinkBudget:
    """Expected received power per path as a function of delay."""

    tx_power_dbm: float = 30.0
    exponent: float = 4.0
    reference_loss_db: float = 39.86

    @classmethod
    def for_mode(cls, mode: str, carrier_hz: float = 2.35e9, tx_power_dbm: float | None = None,
                 reference_loss_db: float | None = None) -> "LinkBudget":
        return cls(
            TX_POWER_DBM[mode] if tx_power_dbm is None else tx_power_dbm,
            PATHLOSS_EXPONENT[mode],
            free_space_loss_db(carrier_hz) if reference_loss_db is None else reference_loss_db,
        )

    def expected_power(self, delay_s):
        scale = 10 ** ((self.tx_power_dbm - 30.0 - self.reference_loss_db) / 10)
        if np.ndim(delay_s) == 0:
            return scale * max(float(delay_s) * SPEED_OF_LIGHT, 1.0) ** -self.exponent
        d = np.maximum(np.asarray(delay_s, dtype=float) * SPEED_OF_LIGHT, 1.0)
        return scale * pathloss(d, self.exponent)


@dataclass
class _Draw:
    spec: ClusterSpec
    source: int
    aoa_off: float = 0.0
    aod_off: float = 0.0
    dist_off: float = 0.0
    doppler_off: float = 0.0
    paths: list = field(default_factory=list)


def sample_scene(specs: Sequence[ClusterSpec], seed, mode: str = "downlink", *,
                 grid: "OfdmGrid | None" = None, n_sources: int | None = None,
                 carrier_hz: float = 2.35e9, budget: LinkBudget | None = None,
                 static_period_s: float = 1.7e-3, clutter_doppler_bound: float = 1.0,
                 max_redraws: int = 10_000) -> Scene:
    """Draw a random scene from cluster specifications.

    A spec with ``source=None`` is assigned to the source equal to its
    position in ``specs``. When ``grid`` is given, delays are quantized to its
    ``1/(g*B)`` resolution and kept pairwise distinct within each link.
    """
    if not specs:
        raise ValueError("at least one cluster spec is required")
    if mode not in TX_POWER_DBM:
        raise ValueError(f"unknown mode {mode!r}")
    budget = budget or LinkBudget.for_mode(mode, carrier_hz)
    rng = np.random.default_rng(seed)
    sources = [i if s.source is None else s.source for i, s in enumerate(specs)]
    k_total = max(max(sources) + 1, n_sources or 0)
    res = None if grid is None else grid.delay_resolution_s

    if res is not None:
        for k in set(sources):
            bins = set()
            need = 0
            for s, src in zip(specs, sources):
                if src != k:
                    continue
                lo, hi = s.distance_bounds()
                bins |= set(range(int(round(lo / SPEED_OF_LIGHT / res)), int(round(hi / SPEED_OF_LIGHT / res)) + 1))
                need += s.path_count_range[1]
            if need > len(bins):
                raise ValueError(f"source {k}: {need} paths cannot have distinct delays in {len(bins)} bins")

    used: dict[int, set[int]] = {k: set() for k in range(k_total)}
    links: list[list[PathParams]] = [[] for _ in range(k_total)]
    deg = math.pi / 180
    for spec, k in zip(specs, sources):
        n_paths = int(rng.integers(spec.path_count_range[0], spec.path_count_range[1] + 1))
        aoa_off = rng.uniform(*spec.direction_offset_deg) * deg
        aod_off = rng.uniform(*spec.direction_offset_deg) * deg
        dist_off = rng.uniform(*spec.distance_offset_m)
        speed = 0.0 if spec.clutter else rng.uniform(*spec.speed_offset_mps)
        f_off = speed * carrier_hz / SPEED_OF_LIGHT
        span_mid = 0.5 * (spec.direction_span_deg[0] + spec.direction_span_deg[1])
        for _ in range(n_paths):
            aoa = aoa_off + (rng.uniform(*spec.direction_span_deg) - span_mid) * deg
            aod = aod_off + (rng.uniform(*spec.direction_span_deg) - span_mid) * deg
            aoa = min(max(aoa, -MAX_ANGLE), MAX_ANGLE)
            aod = min(max(aod, -MAX_ANGLE), MAX_ANGLE)
            if spec.clutter:
                fd = rng.uniform(-clutter_doppler_bound, clutter_doppler_bound)
            else:
                fd = f_off + rng.uniform(*spec.doppler_span_hz)
            for _ in range(max_redraws):
                dist = dist_off + rng.uniform(*spec.distance_span_m)
                tau = dist / SPEED_OF_LIGHT
                if res is None:
                    break
                b = int(round(tau / res))
                if b not in used[k]:
                    used[k].add(b)
                    tau = b * res
                    break
            else:
                raise ValueError(f"could not place distinct delays for source {k}")
            power = budget.expected_power(max(dist, 1.0) / SPEED_OF_LIGHT)
            g = (rng.standard_normal() + 1j * rng.standard_normal()) / math.sqrt(2)
            links[k].append(PathParams(tau, float(fd), aoa, aod, complex(math.sqrt(power) * g), k, spec.clutter))
    return Scene(tuple(tuple(l) for l in links), static_period_s, carrier_hz, clutter_doppler_bound)


def fixed_path_spec(distance_m: float, direction_deg: float, doppler_hz: float = 0.0,
                    source: int | None = None, clutter: bool = False) -> ClusterSpec:
    """Degenerate spec producing exactly one path at the given parameters (AoA = AoD)."""
    return ClusterSpec(
        path_count_range=(1, 1), direction_span_deg=(0.0, 0.0), distance_span_m=(0.0, 0.0),
        doppler_span_hz=(doppler_hz, doppler_hz), direction_offset_deg=(direction_deg, direction_deg),
        distance_offset_m=(distance_m, distance_m), speed_offset_mps=(0.0, 0.0), source=source, clutter=clutter,
    )


def concat_links(*links: Iterable[PathParams]) -> tuple[PathParams, ...]:
    return tuple(p for link in links for p in link)
