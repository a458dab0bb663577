"""Indirect estimation on reconstructed per-user channel matrices.

Stacking the transposed columns of ``H_n`` over subcarriers gives
``H~ = F G`` with a partial DFT dictionary ``F`` and a row-sparse ``G``
whose row for delay bin ``l`` is ``b_l e^{j2 pi t f_D T_s} (a_T[0] a_R^T, a_T[1] a_R^T, ...)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .direct import PathEstimate, _phase_to_angle
from .scene import PathParams, UlaConfig, freq_channel
from .sparse import MmvProblem, SparseSolution, block_sbl, build_partial_dft, mmv_omp
from .waveform import OfdmGrid, complex_awgn


@dataclass(frozen=True, eq=False)
class ReconChannel:
    """Reconstructed channels ``H[i] (M x M_T)`` at ``subcarriers[i]`` for one user and block."""

    H: np.ndarray
    subcarriers: np.ndarray
    sir_db: float = math.inf
    user: int = 0
    t: int = 0

    @property
    def n_rx(self) -> int:
        return self.H.shape[1]

    @property
    def n_tx(self) -> int:
        return self.H.shape[2]

    def with_channel(self, H: np.ndarray) -> "ReconChannel":
        return ReconChannel(H, self.subcarriers, self.sir_db, self.user, self.t)


@dataclass(frozen=True, eq=False)
class GEstimate:
    support: tuple[int, ...]
    G: np.ndarray  # (len(support), M_T * M)
    t: int = 0

    def row(self, delay_bin: int) -> np.ndarray:
        return self.G[self.support.index(delay_bin)]


def reconstruct_channel(link: Sequence[PathParams], subcarriers, t: int, grid: OfdmGrid, rx: UlaConfig,
                        tx: UlaConfig, sir_db: float = math.inf, seed=None, user: int = 0) -> ReconChannel:
    """Exact channel plus AWGN with ``mean |H|^2 / error power = 10^(sir_db/10)``."""
    sc = np.asarray(subcarriers)
    H = freq_channel(link, sc, t, grid, rx, tx)
    if math.isfinite(sir_db):
        p = float(np.mean(np.abs(H) ** 2))
        H = H + complex_awgn(np.random.default_rng(seed), H.shape, p / 10 ** (sir_db / 10))
    return ReconChannel(H, sc, sir_db, user, t)


def stripped_observations(recon: ReconChannel) -> np.ndarray:
    """Row ``n`` is ``(h_{n,1}^T, ..., h_{n,M_T}^T)`` with ``h_{n,m}`` the m-th column of ``H_n``."""
    n_u, m, m_t = recon.H.shape
    return recon.H.transpose(0, 2, 1).reshape(n_u, m_t * m)


def nominal_noise_floor(recon: ReconChannel) -> float:
    """Per-entry reconstruction-error power implied by the nominal SIR (0 when exact)."""
    if not math.isfinite(recon.sir_db):
        return 0.0
    r = 10 ** (-recon.sir_db / 10)
    return float(np.mean(np.abs(recon.H) ** 2)) * r / (1 + r)


def build_stripped_mmv(recon: ReconChannel, grid: OfdmGrid, n_bins: int | None = None,
                       noise_floor: float | None = None) -> MmvProblem:
    """Noise floor defaults to :func:`nominal_noise_floor`."""
    if noise_floor is None:
        noise_floor = nominal_noise_floor(recon)
    return MmvProblem(stripped_observations(recon), build_partial_dft(recon.subcarriers, grid, n_bins), noise_floor)


def g_estimate(solution: SparseSolution, t: int = 0) -> GEstimate:
    if solution.block_size != 1:
        raise ValueError("stripped problems are row-sparse")
    return GEstimate(solution.support, solution.coeffs[:, 0, :], t)


def _row_angles(g: np.ndarray, M: int, M_T: int) -> tuple[float, float, float]:
    rows = g.reshape(M_T, M)
    if M > 1:
        eps = np.sum(rows[:, :-1].conj() * rows[:, 1:]) / (M_T * (M - 1))
        aoa, power = _phase_to_angle(eps), float(abs(eps))
    else:
        aoa, power = math.nan, float(np.mean(np.abs(rows) ** 2))
    if M_T > 1:
        xi = np.sum(rows[:-1].conj() * rows[1:]) / ((M_T - 1) * M)
        aod = _phase_to_angle(xi)
        if M == 1:
            power = float(abs(xi))
    else:
        aod = math.nan
    return aoa, aod, power


def estimate_paths(est: GEstimate | SparseSolution, grid: OfdmGrid, M: int, M_T: int,
                   floor_db: float | None = 25.0, source: int | None = 0) -> list[PathEstimate]:
    """AoA, AoD and ``|b|^2`` per supported bin; bins more than ``floor_db`` below the strongest are dropped."""
    if isinstance(est, SparseSolution):
        est = g_estimate(est)
    res = grid.delay_resolution_s
    out = []
    for d_bin, g in zip(est.support, est.G):
        aoa, aod, p = _row_angles(g, M, M_T)
        out.append(PathEstimate(int(d_bin), d_bin * res, aoa, aod, math.nan, p, source))
    if out and floor_db is not None:
        top = max(e.power for e in out)
        out = [e for e in out if e.power >= top * 10 ** (-floor_db / 10)]
    return out


def estimate_doppler_pair(G_t: GEstimate, G_tT: GEstimate, T: int, grid: OfdmGrid) -> dict[int, float]:
    """Doppler per shared bin from ``angle(G_{t+T} G_t^H) / (2 pi T T_s)``.

    Unambiguous for ``|f_D| < 1 / (2 T T_s)``.
    """
    if T <= 0:
        raise ValueError("block interval must be positive")
    out = {}
    for d_bin in sorted(set(G_t.support) & set(G_tT.support)):
        c = np.vdot(G_t.row(d_bin), G_tT.row(d_bin))
        out[d_bin] = float(np.angle(c)) / (2 * math.pi * T * grid.block_period_s)
    return out


def solve_stripped(recon: ReconChannel, grid: OfdmGrid, n_bins: int | None = None, solver: str = "sbl",
                   noise_floor: float | None = None) -> GEstimate:
    problem = build_stripped_mmv(recon, grid, n_bins, noise_floor)
    if solver == "sbl":
        sol = block_sbl(problem)
    elif solver == "omp":
        sol = mmv_omp(problem)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return g_estimate(sol, recon.t)


def estimate_indirect(recon_t: ReconChannel, recon_tT: ReconChannel | None, grid: OfdmGrid,
                      n_bins: int | None = None, floor_db: float | None = 25.0,
                      solver: str = "sbl") -> list[PathEstimate]:
    """Delays, angles and power from ``recon_t``; Doppler from pairing with ``recon_tT``."""
    g_t = solve_stripped(recon_t, grid, n_bins, solver)
    paths = estimate_paths(g_t, grid, recon_t.n_rx, recon_t.n_tx, floor_db, recon_t.user)
    if recon_tT is None:
        return paths
    g_tT = solve_stripped(recon_tT, grid, n_bins, solver)
    fd = estimate_doppler_pair(g_t, g_tT, recon_tT.t - recon_t.t, grid)
    return [PathEstimate(p.delay_bin, p.delay_s, p.aoa, p.aod, fd.get(p.delay_bin, math.nan), p.power, p.source)
            for p in paths]
