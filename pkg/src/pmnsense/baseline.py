"""Classical 2D-DFT range-angle maps over reconstructed channels."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .indirect import ReconChannel
from .waveform import OfdmGrid

ANGLE_FFT_LEN = 64
CLEAR_FLOOR_DB = 25.0


@dataclass(frozen=True, eq=False)
class RangeAngleMap:
    """``power[q, k]``: delay bin ``q`` (``delay_s[q]``), angle bin ``k`` (``sin_aoa[k]``, ascending)."""

    power: np.ndarray
    delay_s: np.ndarray
    sin_aoa: np.ndarray

    def __post_init__(self):
        if self.power.shape != (self.delay_s.size, self.sin_aoa.size):
            raise ValueError("map shape does not match its axes")
        if np.any(self.power < 0):
            raise ValueError("map powers must be non-negative")

    def peaks(self, floor_db: float | None = None) -> list[tuple[float, float, float]]:
        """Local maxima ``(delay_s, sin_aoa, power)``, strongest first.

        Neighbourhoods wrap around the angle axis only.
        """
        P = self.power
        top = P.max() if P.size else 0.0
        if top <= 0:
            return []
        padded = np.pad(P, ((1, 1), (0, 0)), constant_values=-1.0)
        local = (padded == ndimage.maximum_filter(padded, size=3, mode="wrap"))[1:-1]
        mask = local & (P > 0)
        if floor_db is not None:
            mask &= P >= top * 10 ** (-floor_db / 10)
        idx = sorted(zip(*np.nonzero(mask)), key=lambda ij: -P[ij])
        return [(float(self.delay_s[i]), float(self.sin_aoa[j]), float(P[i, j])) for i, j in idx]

    def to_csv(self, path) -> None:
        """Dense grid: first row holds the sin-AoA axis, first column the delay axis."""
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["delay_s"] + [repr(float(s)) for s in self.sin_aoa])
            for d, row in zip(self.delay_s, self.power):
                w.writerow([repr(float(d))] + [repr(float(v)) for v in row])


def dft2d_map(recon: ReconChannel, grid: OfdmGrid, angle_fft_len: int = ANGLE_FFT_LEN,
              tx_index: int | None = None, taper: str | None = None) -> RangeAngleMap:
    """Delay by DFT over (zero-filled) subcarriers, angle by zero-padded DFT over antennas.

    ``tx_index`` picks one transmit column; by default the per-column maps are
    summed in power. ``taper`` may be ``"hann"`` (applied on both axes).
    """
    n_u, m, m_t = recon.H.shape
    if angle_fft_len < m:
        raise ValueError("angle DFT length must be at least the array size")
    n_fine = grid.fine_size
    cols = range(m_t) if tx_index is None else [tx_index]
    full = np.zeros((n_fine, m, len(cols)), dtype=complex)
    # zero padding the subcarrier axis to g*N samples the delay axis at 1/(gB)
    full[np.asarray(recon.subcarriers)] = recon.H[:, :, list(cols)]
    if taper == "hann":
        wn = np.zeros(n_fine)
        wn[np.asarray(recon.subcarriers)] = np.hanning(n_u + 2)[1:-1]
        full = full * wn[:, None, None] * np.hanning(m + 2)[1:-1][None, :, None]
    elif taper is not None:
        raise ValueError(f"unknown taper {taper!r}")
    # inverse DFT over subcarriers undoes e^{-j2pi n q/(gN)}; the forward DFT
    # over antennas puts e^{+j pi m sin} at bin sin * L / 2
    spec = n_fine * np.fft.ifft(full, axis=0)
    spec = np.fft.fft(spec, n=angle_fft_len, axis=1)
    power = np.fft.fftshift(np.sum(np.abs(spec) ** 2, axis=2), axes=1)
    k = np.arange(angle_fft_len) - angle_fft_len // 2
    return RangeAngleMap(power, np.arange(n_fine) * grid.delay_resolution_s, 2.0 * k / angle_fft_len)


def clear_map(rmap: RangeAngleMap, floor_db: float = CLEAR_FLOOR_DB) -> RangeAngleMap:
    """Zero every entry more than ``floor_db`` below the maximum."""
    if floor_db <= 0:
        raise ValueError("floor must be positive")
    P = rmap.power
    top = P.max() if P.size else 0.0
    return replace(rmap, power=np.where(P >= top * 10 ** (-floor_db / 10), P, 0.0))
