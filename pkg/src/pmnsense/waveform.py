"""Multiuser OFDMA symbol generation and received-signal synthesis."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene import Scene, UlaConfig, freq_channel

CONSTELLATIONS = {
    "qpsk": np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / math.sqrt(2),
    "bpsk": np.array([1.0 + 0j, -1.0 + 0j]),
    "16qam": (np.add.outer(np.arange(-3, 4, 2), 1j * np.arange(-3, 4, 2)).ravel() / math.sqrt(10)),
}


@dataclass(frozen=True)
class OfdmGrid:
    n_subcarriers: int = 512
    bandwidth_hz: float = 100e6
    cp_fraction: float = 0.25
    grid_factor: int = 1

    def __post_init__(self):
        if self.n_subcarriers < 1 or self.bandwidth_hz <= 0:
            raise ValueError("grid needs positive subcarrier count and bandwidth")
        if self.cp_fraction <= 0:
            raise ValueError("cyclic prefix fraction must be positive")
        if int(self.grid_factor) < 1:
            raise ValueError("grid factor must be >= 1")

    @property
    def subcarrier_spacing_hz(self) -> float:
        return self.bandwidth_hz / self.n_subcarriers

    @property
    def block_period_s(self) -> float:
        """OFDM block duration ``T_s = N/B + T_p``."""
        return self.n_subcarriers / self.bandwidth_hz * (1.0 + self.cp_fraction)

    @property
    def fine_size(self) -> int:
        return self.grid_factor * self.n_subcarriers

    @property
    def delay_resolution_s(self) -> float:
        return 1.0 / (self.grid_factor * self.bandwidth_hz)


@dataclass(frozen=True)
class Allocation:
    """Per-user subcarrier index sets."""

    user_sets: tuple[tuple[int, ...], ...]
    n_total: int

    def __post_init__(self):
        sets = tuple(tuple(sorted(int(i) for i in s)) for s in self.user_sets)
        object.__setattr__(self, "user_sets", sets)
        for s in sets:
            if any(i < 0 or i >= self.n_total for i in s):
                raise ValueError(f"subcarrier index outside [0, {self.n_total})")

    @property
    def subcarriers(self) -> np.ndarray:
        return np.array(sorted(set().union(*self.user_sets)), dtype=int)

    @property
    def n_used(self) -> int:
        return len(self.subcarriers)

    @property
    def n_users(self) -> int:
        return len(self.user_sets)

    def mask(self) -> np.ndarray:
        """Boolean ``(n_used, n_users)`` occupancy table over the union set."""
        sc = self.subcarriers
        return np.stack([np.isin(sc, s) for s in self.user_sets], axis=1)

    @classmethod
    def full(cls, n_total: int, n_users: int = 1) -> "Allocation":
        return cls.shared(range(n_total), n_total, n_users)

    @classmethod
    def shared(cls, indexes, n_total: int, n_users: int = 1) -> "Allocation":
        idx = tuple(indexes)
        return cls(tuple(idx for _ in range(n_users)), n_total)

    @classmethod
    def random(cls, n_total: int, count: int, n_users: int = 1, seed=None) -> "Allocation":
        """``count`` random subcarriers shared by every user via multiuser MIMO."""
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(n_total, size=count, replace=False))
        return cls.shared(idx.tolist(), n_total, n_users)

    @classmethod
    def interleaved(cls, n_total: int, n_users: int) -> "Allocation":
        """User ``k`` gets every ``n_users``-th subcarrier starting at ``k``."""
        return cls(tuple(tuple(range(k, n_total, n_users)) for k in range(n_users)), n_total)


def nr_type_b_allocation(n_total: int = 252, n_users: int = 1) -> Allocation:
    """Subcarriers 3, 4, 9, 10 of every 12-subcarrier resource block."""
    if n_total % 12:
        raise ValueError("total subcarriers must be a multiple of 12")
    idx = [rb * 12 + i for rb in range(n_total // 12) for i in (3, 4, 9, 10)]
    return Allocation.shared(idx, n_total, n_users)


@dataclass(frozen=True, eq=False)
class SymbolFrame:
    """Known transmit symbols ``x[t, i, k*M_T + m]`` for subcarrier ``subcarriers[i]``.

    Entries of a user on subcarriers outside its allocation are zero.
    """

    symbols: np.ndarray
    subcarriers: np.ndarray
    n_sources: int
    n_tx: int
    constellation: str = "qpsk"
    seed: object = None

    @property
    def n_blocks(self) -> int:
        return self.symbols.shape[0]

    def block(self, t: int) -> np.ndarray:
        return self.symbols[t % self.n_blocks]


@dataclass(frozen=True, eq=False)
class RxBlock:
    t: int
    Y: np.ndarray
    subcarriers: np.ndarray
    noise_power: float


def gen_symbols(alloc: Allocation, grid: OfdmGrid, K: int, M_T: int, constellation: str = "qpsk",
                seed=None, n_blocks: int = 1) -> SymbolFrame:
    if K < 1 or M_T < 1:
        raise ValueError("K and M_T must be positive")
    if alloc.n_used == 0:
        raise ValueError("empty allocation")
    if alloc.n_total != grid.n_subcarriers:
        raise ValueError("allocation does not match the grid size")
    if alloc.n_users not in (1, K):
        raise ValueError(f"allocation has {alloc.n_users} users, expected 1 or {K}")
    points = CONSTELLATIONS[constellation.lower()]
    rng = np.random.default_rng(seed)
    n_u = alloc.n_used
    x = points[rng.integers(0, points.size, size=(n_blocks, n_u, K * M_T))]
    mask = alloc.mask()
    if mask.shape[1] == 1:
        mask = np.repeat(mask, K, axis=1)
    x = x * np.repeat(mask, M_T, axis=1)[None]
    return SymbolFrame(x, alloc.subcarriers, K, M_T, constellation.lower(), seed)


def complex_awgn(rng: np.random.Generator, shape, power: float) -> np.ndarray:
    if power <= 0:
        return np.zeros(shape, dtype=complex)
    return math.sqrt(power / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def receive(scene: Scene, frame: SymbolFrame, t: int, grid: OfdmGrid, rx: UlaConfig,
            noise_power: float = 0.0, seed=None, tx: UlaConfig | None = None) -> RxBlock:
    """Received subcarrier samples ``Y`` (``N_u x M``) for OFDM block ``t``."""
    tx = tx or UlaConfig(frame.n_tx)
    if tx.elements != frame.n_tx:
        raise ValueError("transmit array size does not match the symbol frame")
    if scene.n_sources > frame.n_sources:
        raise ValueError(f"scene has {scene.n_sources} sources but the frame carries {frame.n_sources}")
    sc = frame.subcarriers
    x = frame.block(t).reshape(sc.size, frame.n_sources, frame.n_tx)
    Y = np.zeros((sc.size, rx.elements), dtype=complex)
    for k, link in enumerate(scene.links):
        if not link:
            continue
        H = freq_channel(link, sc, t, grid, rx, tx)
        Y += np.einsum("nij,nj->ni", H, x[:, k, :])
    rng = np.random.default_rng(seed)
    Y = Y + complex_awgn(rng, Y.shape, noise_power)
    return RxBlock(t, Y, sc, noise_power)


def thermal_noise_power(grid_or_bandwidth, density_dbm_hz: float = -174.0) -> float:
    """Receiver thermal noise in watts over the full bandwidth."""
    b = grid_or_bandwidth.bandwidth_hz if isinstance(grid_or_bandwidth, OfdmGrid) else float(grid_or_bandwidth)
    if b <= 0:
        raise ValueError("bandwidth must be positive")
    return 10 ** ((density_dbm_hz + 10 * math.log10(b) - 30) / 10)


def quantize_delay(tau: float, grid: OfdmGrid, n_bins: int | None = None) -> int:
    n_bins = grid.fine_size if n_bins is None else n_bins
    if tau < 0:
        raise ValueError("delay must be non-negative")
    q = int(round(tau * grid.grid_factor * grid.bandwidth_hz))
    if q >= n_bins:
        raise ValueError(f"delay {tau} s maps to bin {q}, beyond the {n_bins}-bin dictionary")
    return q
