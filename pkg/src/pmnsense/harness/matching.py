"""One-to-one matching of estimated paths against ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..direct import PathEstimate
from ..scene import PathParams


def wrap_sin_diff(a: float, b: float) -> float:
    """``sin(a) - sin(b)`` folded into ``[-1, 1)``; ULA phases ``pi sin`` are 2 pi periodic."""
    d = math.sin(a) - math.sin(b)
    return (d + 1.0) % 2.0 - 1.0


def phase_error(a: float, b: float) -> float:
    """Absolute array-phase error ``|pi (sin a - sin b)|`` modulo 2 pi."""
    if math.isnan(a) or math.isnan(b):
        return math.nan
    return abs(math.pi * wrap_sin_diff(a, b))


@dataclass(frozen=True)
class MatchGates:
    delay_s: float
    sin_aoa: float = 0.05
    same_source: bool = False

    @classmethod
    def half_bin(cls, delay_resolution_s: float, sin_aoa: float = 0.05, same_source: bool = False) -> "MatchGates":
        return cls(0.5 * delay_resolution_s, sin_aoa, same_source)


@dataclass
class MatchReport:
    """``truth_match[i]`` / ``est_match[j]`` hold the partner index or ``None``."""

    truth: list[PathParams]
    est: list[PathEstimate]
    truth_match: list[int | None]
    est_match: list[int | None]
    errors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return [(i, j) for i, j in enumerate(self.truth_match) if j is not None]

    @property
    def n_matched(self) -> int:
        return len(self.pairs)

    @property
    def misses(self) -> list[int]:
        return [i for i, j in enumerate(self.truth_match) if j is None]

    @property
    def false_alarms(self) -> list[int]:
        return [j for j, i in enumerate(self.est_match) if i is None]

    def rmse(self, key: str) -> float:
        e = self.errors.get(key, np.zeros(0))
        e = e[np.isfinite(e)]
        return float(np.sqrt(np.mean(e ** 2))) if e.size else math.nan


def _errors(truth: Sequence[PathParams], est: Sequence[PathEstimate], pairs) -> dict[str, np.ndarray]:
    cols = {"delay_s": [], "aoa_phase": [], "aod_phase": [], "doppler_hz": [], "power_db": []}
    for i, j in pairs:
        t, e = truth[i], est[j]
        cols["delay_s"].append(e.delay_s - t.delay)
        cols["aoa_phase"].append(phase_error(e.aoa, t.aoa))
        cols["aod_phase"].append(phase_error(e.aod, t.aod))
        cols["doppler_hz"].append(e.doppler_hz - t.doppler)
        p = t.power
        cols["power_db"].append(10 * math.log10(e.power / p) if e.power > 0 and p > 0 else math.nan)
    return {k: np.asarray(v, dtype=float) for k, v in cols.items()}


def match_paths(truth: Sequence[PathParams], est: Sequence[PathEstimate], gates: MatchGates) -> MatchReport:
    """Greedy nearest-neighbour matching in normalized (delay, sin-AoA) space.

    Candidate pairs must lie within both gates; the closest pair is fixed
    first, ties resolved by truth then estimate index.
    """
    truth, est = list(truth), list(est)
    cand = []
    for i, t in enumerate(truth):
        for j, e in enumerate(est):
            if gates.same_source and e.source is not None and e.source != t.source:
                continue
            dd = abs(e.delay_s - t.delay) / gates.delay_s if gates.delay_s > 0 else (0.0 if e.delay_s == t.delay else math.inf)
            if math.isnan(e.aoa):
                ds = 0.0
            else:
                ds = abs(wrap_sin_diff(e.aoa, t.aoa)) / gates.sin_aoa
            if dd <= 1.0 and ds <= 1.0:
                cand.append((math.hypot(dd, ds), i, j))
    cand.sort()
    tm: list[int | None] = [None] * len(truth)
    em: list[int | None] = [None] * len(est)
    for _, i, j in cand:
        if tm[i] is None and em[j] is None:
            tm[i], em[j] = j, i
    pairs = [(i, j) for i, j in enumerate(tm) if j is not None]
    return MatchReport(truth, est, tm, em, _errors(truth, est, pairs))
