"""Direct estimation from received blocks with known transmit symbols.

Per OFDM block the stacked observations ``Y_t = W V A^T`` are solved as a
block-sparse MMV problem. Every recovered delay block splits into per-source
sub-matrices ``B = b e^{j2 pi t f_D T_s} a(M_T, aod) a(M, aoa)^T`` from which
angles, power and (across blocks) Doppler follow by adjacent-element
correlation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .scene import LinkBudget
from .sparse import MmvProblem, block_sbl, build_direct_dictionary, mmv_omp
from .waveform import OfdmGrid, RxBlock, SymbolFrame

MULTIPATH_RESIDUAL = 0.10


@dataclass(frozen=True)
class PathEstimate:
    delay_bin: int
    delay_s: float
    aoa: float
    aod: float = math.nan
    doppler_hz: float = math.nan
    power: float = 0.0
    source: int | None = None

    @property
    def sin_aoa(self) -> float:
        return math.sin(self.aoa)


@dataclass
class BlockEstimateSeries:
    """Recovered ``{delay_bin: (M_T*K, M) block}`` per OFDM block index."""

    n_sources: int
    n_tx: int
    blocks: dict[int, dict[int, np.ndarray]] = field(default_factory=dict)

    def add(self, t: int, recovered: Iterable[tuple[int, np.ndarray]]):
        self.blocks[t] = {int(b): m for b, m in recovered}

    def sub_block(self, t: int, delay_bin: int, k: int) -> np.ndarray | None:
        blk = self.blocks.get(t, {}).get(delay_bin)
        if blk is None:
            return None
        sub = blk[k * self.n_tx:(k + 1) * self.n_tx]
        return sub if np.any(sub) else None

    def keys(self) -> list[tuple[int, int]]:
        """Sorted ``(delay_bin, source)`` pairs seen in any block."""
        seen = set()
        for t, d in self.blocks.items():
            for b in d:
                for k in range(self.n_sources):
                    if self.sub_block(t, b, k) is not None:
                        seen.add((b, k))
        return sorted(seen)


def _solve(problem: MmvProblem, solver: str):
    if solver == "sbl":
        return block_sbl(problem)
    if solver == "omp":
        return mmv_omp(problem)
    raise ValueError(f"unknown solver {solver!r}")


def recover_blocks(rx: RxBlock, frame: SymbolFrame, grid: OfdmGrid, n_bins: int | None = None,
                   solver: str = "sbl") -> list[tuple[int, np.ndarray]]:
    """Non-zero ``(delay_bin, M_T*K x M)`` blocks of ``V A^T`` for one received block.

    The solver groups columns per (delay, source), i.e. blocks of ``M_T``;
    a path occupies exactly one such group so this is the tightest block
    structure the model allows. Results are regrouped per delay bin.
    """
    if not np.array_equal(rx.subcarriers, frame.subcarriers):
        raise ValueError("received block and symbol frame use different subcarriers")
    dic = build_direct_dictionary(frame, rx.t, grid, n_bins)
    K, M_T = frame.n_sources, frame.n_tx
    fine = dic.reblock(M_T, np.repeat(dic.grid_meta, K))
    sol = _solve(MmvProblem(rx.Y, fine, rx.noise_power), solver)
    out: dict[int, np.ndarray] = {}
    for idx, c in zip(sol.support, sol.coeffs):
        d_bin, k = divmod(idx, K)
        blk = out.setdefault(d_bin, np.zeros((K * M_T, rx.Y.shape[1]), dtype=complex))
        blk[k * M_T:(k + 1) * M_T] = c
    return sorted(out.items())


def classify_source(block: np.ndarray, K: int, M_T: int, power_floor: float = 0.0) -> list[tuple[int, np.ndarray]]:
    if block.shape[0] != K * M_T:
        raise ValueError(f"block has {block.shape[0]} rows, expected {K * M_T}")
    out = []
    for k in range(K):
        sub = block[k * M_T:(k + 1) * M_T]
        if np.mean(np.abs(sub) ** 2) > power_floor:
            out.append((k, sub))
    return out


def _phase_to_angle(z: complex) -> float:
    return math.asin(float(np.clip(np.angle(z) / math.pi, -1.0, 1.0)))


def extract_angles(B: np.ndarray) -> tuple[float, float, float]:
    """``(aoa, aod, power)`` from one ``M_T x M`` block (or a stack of them).

    Correlation sums are averaged over the number of summed products, so a
    single path gives ``power == |b|^2`` exactly. AoD is NaN when ``M_T == 1``.
    """
    B = np.asarray(B)
    if B.ndim == 1:
        B = B[None]
    m_t, m = B.shape[-2:]
    if m > 1:
        eps = np.sum(B[..., :, :-1].conj() * B[..., :, 1:]) / (B[..., :, 1:].size)
        aoa, power = _phase_to_angle(eps), float(abs(eps))
    else:
        aoa, power = math.nan, float(np.mean(np.abs(B) ** 2))
    if m_t > 1:
        xi = np.sum(B[..., :-1, :].conj() * B[..., 1:, :]) / (B[..., 1:, :].size)
        aod = _phase_to_angle(xi)
        if m == 1:
            power = float(abs(xi))
    else:
        aod = math.nan
    return aoa, aod, power


def extract_doppler(series: BlockEstimateSeries, delay_bin: int, k: int, grid: OfdmGrid) -> float:
    """Doppler from conjugate correlation of the block across consecutive OFDM blocks.

    Wraps into ``[-1/(2 T_s), 1/(2 T_s))``.
    """
    acc = 0j
    pairs = 0
    for t in sorted(series.blocks):
        a = series.sub_block(t, delay_bin, k)
        b = series.sub_block(t + 1, delay_bin, k)
        if a is None or b is None:
            continue
        acc += np.sum(a.conj() * b)
        pairs += 1
    if pairs == 0:
        raise ValueError(f"bin {delay_bin}, source {k}: no consecutive blocks to correlate")
    return float(np.angle(acc)) / (2 * math.pi * grid.block_period_s)


@dataclass(frozen=True)
class ThresholdReference:
    """Delay-dependent detection threshold from the pathloss model.

    ``threshold(tau) = margin * (noise_power / processing_gain + sidelobe * P_expected(tau))``
    """

    budget: LinkBudget
    noise_power: float = 0.0
    processing_gain: float = 1.0
    margin_db: float = 6.0
    sidelobe_db: float = -30.0

    def threshold(self, delay_s) -> np.ndarray:
        floor = self.noise_power / self.processing_gain + 10 ** (self.sidelobe_db / 10) * self.budget.expected_power(delay_s)
        return 10 ** (self.margin_db / 10) * floor


def threshold_paths(estimates: Sequence[PathEstimate], reference: ThresholdReference) -> list[PathEstimate]:
    return [e for e in estimates if e.power > reference.threshold(e.delay_s)]


def _sin_axis(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.where(k < n / 2, 2 * k / n, 2 * k / n - 2)


def same_delay_spectrum(B_hat: np.ndarray, oversample: int = 16, floor_db: float = 10.0) -> list[tuple[float, float, float]]:
    """Angle pairs of several same-delay paths by oversampled 2D-DFT peak search.

    Returns ``(aoa, aod, power)`` per local maximum within ``floor_db`` of the
    strongest; ``power`` is normalized so an isolated on-grid path reports
    ``|b|^2``.
    """
    m_t, m = B_hat.shape
    if m_t < 2:
        raise ValueError("same-delay separation needs at least two transmit elements")
    nt, nr = m_t * oversample, m * oversample
    spec = np.abs(np.fft.fft2(B_hat, s=(nt, nr))) ** 2 / (m_t * m) ** 2
    peak = spec.max()
    if peak == 0:
        return []
    local = spec == ndimage.maximum_filter(spec, size=3, mode="wrap")
    mask = local & (spec >= peak * 10 ** (-floor_db / 10))
    st, sr = _sin_axis(nt), _sin_axis(nr)
    out = []
    for i, j in sorted(zip(*np.nonzero(mask)), key=lambda ij: -spec[ij]):
        out.append((math.asin(np.clip(sr[j], -1, 1)), math.asin(np.clip(st[i], -1, 1)), float(spec[i, j])))
    return out


def is_multipath(B: np.ndarray, residual: float = MULTIPATH_RESIDUAL) -> bool:
    """True when the best rank-one fit leaves more than ``residual`` of the energy."""
    if min(B.shape) < 2:
        return False
    s = np.linalg.svd(B, compute_uv=False)
    total = float(np.sum(s ** 2))
    return total > 0 and 1.0 - s[0] ** 2 / total > residual


def estimate_direct(rx_blocks: Sequence[RxBlock], frame: SymbolFrame, grid: OfdmGrid,
                    n_bins: int | None = None, solver: str = "sbl",
                    reference: ThresholdReference | None = None) -> list[PathEstimate]:
    """Full direct pipeline over one or more consecutive received blocks."""
    series = BlockEstimateSeries(frame.n_sources, frame.n_tx)
    for rx in rx_blocks:
        series.add(rx.t, recover_blocks(rx, frame, grid, n_bins, solver))
    res = grid.delay_resolution_s
    out: list[PathEstimate] = []
    for d_bin, k in series.keys():
        subs = [s for t in sorted(series.blocks) if (s := series.sub_block(t, d_bin, k)) is not None]
        try:
            fd = extract_doppler(series, d_bin, k, grid)
        except ValueError:
            fd = math.nan
        if is_multipath(subs[0]):
            for aoa, aod, p in same_delay_spectrum(subs[0]):
                out.append(PathEstimate(d_bin, d_bin * res, aoa, aod, fd, p, k))
            continue
        aoa, aod, p = extract_angles(np.stack(subs))
        out.append(PathEstimate(d_bin, d_bin * res, aoa, aod, fd, p, k))
    if reference is not None:
        out = threshold_paths(out, reference)
    return out
