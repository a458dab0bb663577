"""Experiment configuration: nested JSON sections mapped onto dataclasses.

Unknown keys are rejected at every level so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..scene import ClusterSpec


class ConfigError(ValueError):
    pass


@dataclass
class SceneSection:
    seed: int = 0
    n_clusters: int = 4  # one default cluster per source when ``clusters`` is empty
    clusters: list[dict] = field(default_factory=list)
    clutter_clusters: list[dict] = field(default_factory=list)
    on_grid: bool = True
    clutter_doppler_bound_hz: float = 0.05

    def cluster_specs(self) -> list[ClusterSpec]:
        if self.clusters:
            return [ClusterSpec(**_tuples(c)) for c in self.clusters]
        return [ClusterSpec() for _ in range(self.n_clusters)]

    def clutter_specs(self) -> list[ClusterSpec]:
        return [ClusterSpec(**{**_tuples(c), "clutter": True}) for c in self.clutter_clusters]


@dataclass
class GridSection:
    n_subcarriers: int = 512
    bandwidth_hz: float = 100e6
    cp_fraction: float = 0.25
    grid_factor: int = 1


@dataclass
class AllocationSection:
    kind: str = "auto"  # auto | full | random | interleaved | nr_type_b
    count: int = 128
    seed: int = 0


@dataclass
class ArraySection:
    K: int = 4
    M: int = 4
    M_T: int = 1


@dataclass
class PowerSection:
    carrier_hz: float = 2.35e9
    tx_power_dbm: float | None = None  # mode default when unset
    noise_density_dbm_hz: float = -174.0
    noiseless: bool = False
    sir_db: float = 15.0


@dataclass
class SolverSection:
    name: str = "sbl"
    n_bins: int | None = None  # delay dictionary size; scheme default when unset


@dataclass
class DirectSection:
    n_blocks: int = 2
    use_threshold: bool = True


@dataclass
class IndirectSection:
    interval_blocks: int = 20
    floor_db: float = 25.0


@dataclass
class BaselineSection:
    angle_fft_len: int = 64
    floor_db: float = 25.0


@dataclass
class ClutterSection:
    alpha: float = 0.99
    sample_interval_s: float = 2e-3
    updates: int = 150
    floor_db: float = 10.0
    dynamic_doppler_hz: tuple[float, float] = (100.0, 600.0)


@dataclass
class MatchSection:
    sin_gate: float = 0.05
    delay_gate_bins: float = 0.5


SECTIONS = {
    "scene": SceneSection, "grid": GridSection, "allocation": AllocationSection, "array": ArraySection,
    "power": PowerSection, "solver": SolverSection, "direct": DirectSection, "indirect": IndirectSection,
    "baseline": BaselineSection, "clutter": ClutterSection, "match": MatchSection,
}
MODES = ("downlink", "uplink")
SCHEMES = ("direct", "indirect", "baseline", "clutter")
ALLOCATIONS = ("auto", "full", "random", "interleaved", "nr_type_b")


@dataclass
class ExperimentConfig:
    mode: str = "downlink"
    scheme: str = "direct"
    runs: int = 10
    seed: int = 0
    output: str = "results"
    workers: int = 1
    scene: SceneSection = field(default_factory=SceneSection)
    grid: GridSection = field(default_factory=GridSection)
    allocation: AllocationSection = field(default_factory=AllocationSection)
    array: ArraySection = field(default_factory=ArraySection)
    power: PowerSection = field(default_factory=PowerSection)
    solver: SolverSection = field(default_factory=SolverSection)
    direct: DirectSection = field(default_factory=DirectSection)
    indirect: IndirectSection = field(default_factory=IndirectSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)
    clutter: ClutterSection = field(default_factory=ClutterSection)
    match: MatchSection = field(default_factory=MatchSection)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.runs < 0:
            raise ConfigError("runs must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.allocation.kind not in ALLOCATIONS:
            raise ConfigError(f"allocation kind must be one of {ALLOCATIONS}")
        a = self.array
        if min(a.K, a.M, a.M_T) < 1:
            raise ConfigError("K, M and M_T must be positive")
        if not 0.0 < self.clutter.alpha < 1.0:
            raise ConfigError("clutter alpha must lie in (0, 1)")
        if self.clutter.updates < 1 or self.clutter.sample_interval_s <= 0:
            raise ConfigError("clutter needs at least one update and a positive interval")
        if self.indirect.interval_blocks < 1:
            raise ConfigError("indirect interval must be at least one block")
        if self.baseline.angle_fft_len < a.M:
            raise ConfigError("angle DFT length must be at least M")
        if self.grid.n_subcarriers < 1 or self.grid.bandwidth_hz <= 0 or self.grid.grid_factor < 1:
            raise ConfigError("invalid OFDM grid")
        if self.allocation.kind == "random" and not 0 < self.allocation.count <= self.grid.n_subcarriers:
            raise ConfigError("random allocation count outside the grid")
        if self.direct.n_blocks < 1:
            raise ConfigError("direct scheme needs at least one block")
        if math.isnan(self.power.sir_db):
            raise ConfigError("sir_db must be a number (use Infinity for exact channels)")
        try:
            self.scene.cluster_specs()
            self.scene.clutter_specs()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid cluster spec: {exc}") from exc

    # --- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        top = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - top
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        for k, v in data.items():
            if k in SECTIONS:
                kwargs[k] = _section(SECTIONS[k], v, k)
            else:
                kwargs[k] = v
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def replace_path(self, dotted: str, value) -> "ExperimentConfig":
        """Copy with one field (``"clutter.alpha"`` or ``"runs"``) replaced."""
        d = self.to_dict()
        parts = dotted.split(".")
        node = d
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise ConfigError(f"unknown parameter {dotted!r}")
            node = node[p]
        if not isinstance(node, dict) or parts[-1] not in node or isinstance(node[parts[-1]], dict):
            raise ConfigError(f"unknown parameter {dotted!r}")
        node[parts[-1]] = value
        return ExperimentConfig.from_dict(d)


def _section(cls, data, name: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    vals = {k: (tuple(v) if isinstance(v, list) and k == "dynamic_doppler_hz" else v) for k, v in data.items()}
    return cls(**vals)


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
