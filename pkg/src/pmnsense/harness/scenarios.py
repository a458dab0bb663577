"""Reusable simulation constructions for diagnostics and acceptance checks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..clutter import ClutterState, clutter_power_ratio, update
from ..scene import ClusterSpec, PathParams, UlaConfig, sample_scene, steering
from ..waveform import OfdmGrid


def _signature(link, sc, grid: OfdmGrid, rx: UlaConfig, tx: UlaConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(S, amp, fd)`` with ``H(t).ravel() == S @ (amp * exp(j 2 pi t fd T_s))``."""
    tau = np.array([p.delay for p in link])
    d = np.exp(-2j * np.pi * np.outer(sc, tau) * grid.subcarrier_spacing_hz)
    a = steering(rx, np.array([p.aoa for p in link]))
    b = steering(tx, np.array([p.aod for p in link]))
    S = np.einsum("nl,li,lj->nijl", d, a, b).reshape(-1, len(link))
    return S, np.array([p.amp for p in link]), np.array([p.doppler for p in link])


@dataclass(frozen=True)
class LeakageSetup:
    """Clutter plus a fresh set of interfering paths every stable period."""

    alpha: float = 0.99
    interval_blocks: int = 120  # T_h in OFDM blocks
    stable_blocks: int = 270  # channel stable period in OFDM blocks
    horizon_s: float = 0.5
    interferers: int = 10
    n_points: int = 100
    subcarrier_step: int = 32


def leakage_ratio_trace(setup: LeakageSetup, seed, grid: OfdmGrid | None = None,
                        M: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Clutter-to-interference power ratio (dB) of the background versus time.

    Returns ``(times_s, ratio_db)`` sampled at ``n_points`` update counts.
    Clutter and interference feed separate recursions (the background is
    linear), and the ratio comes from :func:`clutter_power_ratio` on their sum.
    """
    grid = grid or OfdmGrid(512, 100e6)
    rx, tx = UlaConfig(M), UlaConfig(1)
    sc = np.arange(0, grid.n_subcarriers, setup.subcarrier_step)
    t_h = setup.interval_blocks * grid.block_period_s
    n = int(round(setup.horizon_s / t_h))
    marks = set(np.unique(np.linspace(1, n, setup.n_points).round().astype(int)))
    clut = sample_scene([ClusterSpec(clutter=True)], [seed, 0], "uplink", clutter_doppler_bound=0.05).links[0]
    Sc, ac, fc = _signature(clut, sc, grid, rx, tx)
    shape = (sc.size, M, 1)
    bg_c = ClutterState.zeros(shape, setup.alpha, t_h)
    bg_d = ClutterState.zeros(shape, setup.alpha, t_h)
    period = None
    times, ratio = [], []
    for i in range(1, n + 1):
        t = i * setup.interval_blocks
        if t // setup.stable_blocks != period:
            period = t // setup.stable_blocks
            spec = ClusterSpec(path_count_range=(setup.interferers, setup.interferers))
            dyn = sample_scene([spec], [seed, 1, period], "uplink").links[0]
            Sd, ad, fd = _signature(dyn, sc, grid, rx, tx)
        w = 2j * np.pi * t * grid.block_period_s
        C = (Sc @ (ac * np.exp(w * fc))).reshape(shape)
        D = (Sd @ (ad * np.exp(w * fd))).reshape(shape)
        bg_c, bg_d = update(bg_c, C), update(bg_d, D)
        if i in marks:
            both = ClutterState(bg_c.background + bg_d.background, setup.alpha, t_h, i)
            times.append(i * t_h)
            ratio.append(clutter_power_ratio(both, C, bg_d.background))
    return np.array(times), np.array(ratio)


def flatness(times: np.ndarray, values: np.ndarray) -> float:
    """Last-quartile slope over first-quartile slope of a curve (least-squares fits)."""
    q = max(2, len(times) // 4)
    early = np.polyfit(times[:q], values[:q], 1)[0]
    late = np.polyfit(times[-q:], values[-q:], 1)[0]
    return float(late / early) if early != 0 else math.inf


def two_path_link(grid: OfdmGrid, bins=(20, 21), sins=(0.1, 0.4), amps=(1.0, 0.9)) -> tuple[PathParams, ...]:
    """Adjacent-delay pair whose angle separation is below the 4-element DFT width.

    With in-phase amplitudes a DFT map shows a single lobe between the two.
    """
    return tuple(PathParams(b * grid.delay_resolution_s, 0.0, math.asin(s), 0.0, a)
                 for b, s, a in zip(bins, sins, amps))
