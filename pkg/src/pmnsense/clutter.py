"""Recursive background (clutter) estimation and subtraction.

The background follows ``H_bar <- alpha H_bar + (1 - alpha) H_i`` with one
channel estimate every ``sample_interval_s``. Static paths accumulate while
moving ones average out; subtracting the background leaves the dynamic part.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

RATIO_CAP_DB = 300.0  # reported when no dynamic leakage is present


@dataclass(frozen=True, eq=False)
class ClutterState:
    background: np.ndarray
    alpha: float
    sample_interval_s: float
    updates: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.updates < 0:
            raise ValueError("update count must be non-negative")
        if self.sample_interval_s <= 0:
            raise ValueError("sample interval must be positive")
        object.__setattr__(self, "background", np.asarray(self.background, dtype=complex))

    @classmethod
    def zeros(cls, shape, alpha: float, sample_interval_s: float) -> "ClutterState":
        return cls(np.zeros(shape, dtype=complex), alpha, sample_interval_s)

    @classmethod
    def from_average(cls, estimates: Sequence[np.ndarray], alpha: float, sample_interval_s: float) -> "ClutterState":
        """Warm start from the mean of a few initial estimates (counted as updates)."""
        if len(estimates) == 0:
            raise ValueError("need at least one estimate to average")
        stack = np.stack([np.asarray(h, dtype=complex) for h in estimates])
        return cls(stack.mean(axis=0), alpha, sample_interval_s, len(estimates))

    def update(self, H: np.ndarray) -> "ClutterState":
        return update(self, H)


def update(state: ClutterState, H: np.ndarray) -> ClutterState:
    H = np.asarray(H)
    if H.shape != state.background.shape:
        raise ValueError(f"channel shape {H.shape} does not match background {state.background.shape}")
    bg = state.alpha * state.background + (1.0 - state.alpha) * H
    return replace(state, background=bg, updates=state.updates + 1)


def run(state: ClutterState, estimates: Iterable[np.ndarray]) -> ClutterState:
    for H in estimates:
        state = update(state, H)
    return state


def rho_closed_form(alpha: float, doppler_hz: float, sample_interval_s: float, p: int) -> complex:
    """Background gain of a unit phasor ``e^{j 2 pi f_D T_h i}`` after ``p`` updates from zero."""
    if p < 1:
        raise ValueError("p must be at least 1")
    z = complex(np.exp(2j * math.pi * doppler_hz * sample_interval_s))
    return z * (1 - alpha) * (1 - alpha ** p * z ** p) / (1 - alpha * z)


def simulate_rho(alpha: float, doppler_hz: float, sample_interval_s: float, p: int) -> complex:
    """Run the scalar recursion from zero on ``e^{-j 2 pi f_D T_h i}``, ``i = 1..p``.

    Returns the background relative to the next sample ``i = p + 1``, which is
    what :func:`rho_closed_form` describes. For a phasor rotating at ``+f_D``
    the gain is the complex conjugate; the magnitude is the same.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    w = -2 * math.pi * doppler_hz * sample_interval_s
    st = ClutterState.zeros((), alpha, sample_interval_s)
    for i in range(1, p + 1):
        st = update(st, np.asarray(np.exp(1j * w * i)))
    return complex(st.background) / complex(np.exp(1j * w * (p + 1)))


def residual_noise_var(sigma2: float, alpha: float, p: int) -> float:
    """Variance of the background built from ``p`` i.i.d. noise samples of variance ``sigma2``."""
    if p < 1:
        raise ValueError("p must be at least 1")
    return sigma2 * (1 - alpha) ** 2 * (1 - alpha ** (2 * p)) / (1 - alpha ** 2)


def subtract(state: ClutterState, H: np.ndarray) -> np.ndarray:
    if state.updates < 1:
        raise ValueError("background has not been updated yet")
    H = np.asarray(H)
    if H.shape != state.background.shape:
        raise ValueError(f"channel shape {H.shape} does not match background {state.background.shape}")
    return H - state.background


def clutter_power_ratio(state: ClutterState, true_clutter: np.ndarray, true_dynamic: np.ndarray) -> float:
    """Clutter-to-dynamic-leakage power in the background, in dB.

    The background is projected (least squares) onto the true clutter channel
    and the dynamic contribution; the ratio compares the two fitted energies.
    Returns ``RATIO_CAP_DB`` when the dynamic share vanishes.
    """
    B = state.background.ravel()
    C = np.asarray(true_clutter, dtype=complex).ravel()
    D = np.asarray(true_dynamic, dtype=complex).ravel()
    A = np.stack([C, D], axis=1)
    live = [i for i in range(2) if np.any(A[:, i])]
    coef = np.zeros(2, dtype=complex)
    if live:
        sol, *_ = np.linalg.lstsq(A[:, live], B, rcond=None)
        coef[live] = sol
    pc = abs(coef[0]) ** 2 * float(np.vdot(C, C).real)
    pd = abs(coef[1]) ** 2 * float(np.vdot(D, D).real)
    if pd <= pc * 10 ** (-RATIO_CAP_DB / 10):
        return RATIO_CAP_DB
    if pc == 0.0:
        return -RATIO_CAP_DB
    return 10 * math.log10(pc / pd)


def normalized_difference(state: ClutterState, true_clutter: np.ndarray) -> float:
    """``||H_bar - H_clutter||^2 / ||H_clutter||^2``."""
    C = np.asarray(true_clutter)
    return float(np.sum(np.abs(state.background - C) ** 2) / np.sum(np.abs(C) ** 2))


def save_state(state: ClutterState, path) -> None:
    """Checkpoint as ``<path>.npy`` (background) plus ``<path>.json`` (scalars)."""
    path = Path(path)
    np.save(path.with_suffix(".npy"), state.background)
    meta = {"alpha": state.alpha, "sample_interval_s": state.sample_interval_s, "updates": state.updates}
    path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True))


def load_state(path) -> ClutterState:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    bg = np.load(path.with_suffix(".npy"))
    return ClutterState(bg, float(meta["alpha"]), float(meta["sample_interval_s"]), int(meta["updates"]))


class DopplerBandSplitter:
    """Experimental: several recursions with different (alpha, T_h) whose
    background differences act as crude Doppler band-pass outputs.

    Band 0 is the slowest background; band ``i`` is
    ``background[i] - background[i-1]`` for states ordered from narrowest to
    widest pass band. Both recursions must be fed at their own rate via
    :meth:`feed`.
    """

    def __init__(self, shape, settings: Sequence[tuple[float, float]]):
        if len(settings) < 2:
            raise ValueError("need at least two (alpha, T_h) settings")
        self.states = [ClutterState.zeros(shape, a, th) for a, th in settings]

    def feed(self, index: int, H: np.ndarray) -> None:
        self.states[index] = update(self.states[index], H)

    def bands(self) -> list[np.ndarray]:
        bgs = [s.background for s in self.states]
        return [bgs[0]] + [b - a for a, b in zip(bgs, bgs[1:])]
