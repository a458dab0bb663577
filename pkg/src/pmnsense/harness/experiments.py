"""Seeded experiment runs, CSV emission and parameter sweeps.

The scene is drawn once from ``scene.seed``; every run re-draws symbols and
noise from ``SeedSequence([seed, run_id])``, so runs differ only in data and
noise while the sensing parameters stay fixed.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import baseline as bl
from ..clutter import ClutterState, clutter_power_ratio, normalized_difference, subtract
from ..direct import PathEstimate, ThresholdReference, estimate_direct
from ..indirect import (ReconChannel, estimate_doppler_pair, estimate_paths, nominal_noise_floor,
                        reconstruct_channel, solve_stripped)
from ..scene import SPEED_OF_LIGHT, LinkBudget, PathParams, Scene, UlaConfig, concat_links, freq_channel, sample_scene
from ..waveform import (Allocation, OfdmGrid, gen_symbols, nr_type_b_allocation, receive, thermal_noise_power)
from .config import ConfigError, ExperimentConfig
from .matching import MatchGates, MatchReport, match_paths

RUN_HEADER = ["run_id", "kind", "path_id", "source", "delay_s", "aoa_rad", "aod_rad", "doppler_hz",
              "power_db", "matched", "match_id"]
SUMMARY_HEADER = ["run_id", "n_true", "n_est", "n_matched", "detection_rate", "false_alarm_rate",
                  "rmse_delay_s", "rmse_aoa_phase_rad", "rmse_aod_phase_rad", "rmse_doppler_hz", "rmse_power_db",
                  "clutter_survivors", "clutter_residual_db", "error"]


@dataclass
class RunResult:
    run_id: int
    truth: list[PathParams] = field(default_factory=list)
    est: list[PathEstimate] = field(default_factory=list)
    report: MatchReport | None = None
    error: str = ""
    extra: dict = field(default_factory=dict)


# --- scenario building -----------------------------------------------------

def build_grid(cfg: ExperimentConfig) -> OfdmGrid:
    g = cfg.grid
    return OfdmGrid(g.n_subcarriers, g.bandwidth_hz, g.cp_fraction, g.grid_factor)


def build_allocation(cfg: ExperimentConfig) -> Allocation:
    a, n, users = cfg.allocation, cfg.grid.n_subcarriers, cfg.array.K
    kind = a.kind
    if kind == "auto":
        kind = "random" if cfg.mode == "uplink" else "full"
    if kind == "full":
        return Allocation.full(n, users)
    if kind == "random":
        return Allocation.random(n, a.count, users, seed=a.seed)
    if kind == "interleaved":
        return Allocation.interleaved(n, users)
    return nr_type_b_allocation(n, users)


def build_budget(cfg: ExperimentConfig) -> LinkBudget:
    return LinkBudget.for_mode(cfg.mode, cfg.power.carrier_hz, cfg.power.tx_power_dbm)


def build_scene(cfg: ExperimentConfig, grid: OfdmGrid | None = None) -> Scene:
    grid = grid or build_grid(cfg)
    specs = cfg.scene.cluster_specs()
    if cfg.scheme == "clutter":
        # dynamic paths are redrawn per update; the fixed scene holds only clutter
        specs = cfg.scene.clutter_specs() or [dataclasses.replace(s, clutter=True) for s in specs]
    else:
        specs = specs + cfg.scene.clutter_specs()
    return sample_scene(specs, cfg.scene.seed, cfg.mode, grid=grid if cfg.scene.on_grid else None,
                        n_sources=cfg.array.K, carrier_hz=cfg.power.carrier_hz, budget=build_budget(cfg),
                        clutter_doppler_bound=cfg.scene.clutter_doppler_bound_hz)


def unambiguous_bins(subcarriers, grid: OfdmGrid) -> int:
    """Largest delay dictionary whose columns stay distinct on these subcarriers."""
    sc = np.asarray(subcarriers)
    step = int(np.gcd.reduce(np.diff(sc))) if sc.size > 1 else grid.n_subcarriers
    return grid.fine_size // max(step, 1)


def default_bins(cfg: ExperimentConfig, grid: OfdmGrid, subcarriers) -> int:
    """Dictionary size covering the farthest path the cluster specs can produce."""
    if cfg.solver.n_bins is not None:
        return cfg.solver.n_bins
    specs = cfg.scene.cluster_specs() + cfg.scene.clutter_specs()
    far = max(s.distance_bounds()[1] for s in specs)
    need = int(math.ceil(far / SPEED_OF_LIGHT / grid.delay_resolution_s)) + 2 * grid.grid_factor
    return min(need, unambiguous_bins(subcarriers, grid))


def user_subcarriers(alloc: Allocation, k: int) -> np.ndarray:
    sets = alloc.user_sets
    return np.array(sets[k] if len(sets) > 1 else sets[0], dtype=int)


def gates(cfg: ExperimentConfig, grid: OfdmGrid, same_source: bool) -> MatchGates:
    return MatchGates(cfg.match.delay_gate_bins * grid.delay_resolution_s, cfg.match.sin_gate, same_source)


def _rngs(cfg: ExperimentConfig, run_id: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence([cfg.seed, run_id]).spawn(n)


# --- per-scheme runs ---------------------------------------------------------

def run_direct(cfg: ExperimentConfig, run_id: int) -> RunResult:
    grid = build_grid(cfg)
    alloc = build_allocation(cfg)
    scene = build_scene(cfg, grid)
    s_sym, s_noise = _rngs(cfg, run_id, 2)
    K, M, M_T = cfg.array.K, cfg.array.M, cfg.array.M_T
    frame = gen_symbols(alloc, grid, K, M_T, "qpsk", seed=s_sym, n_blocks=cfg.direct.n_blocks)
    noise = 0.0 if cfg.power.noiseless else thermal_noise_power(grid, cfg.power.noise_density_dbm_hz)
    noise_seeds = s_noise.spawn(cfg.direct.n_blocks)
    rx = [receive(scene, frame, t, grid, UlaConfig(M), noise, noise_seeds[t], UlaConfig(M_T))
          for t in range(cfg.direct.n_blocks)]
    ref = None
    if cfg.direct.use_threshold and noise > 0:
        # referenced to per-subcarrier noise: paths below ~0 dB received SNR are dropped
        ref = ThresholdReference(build_budget(cfg), noise)
    n_bins = default_bins(cfg, grid, alloc.subcarriers)
    est = estimate_direct(rx, frame, grid, n_bins, cfg.solver.name, ref)
    truth = scene.paths()
    return RunResult(run_id, truth, est, match_paths(truth, est, gates(cfg, grid, True)))


def indirect_user(link: Sequence[PathParams], sc, grid: OfdmGrid, cfg: ExperimentConfig, seeds, user: int,
                  n_bins: int) -> list[PathEstimate]:
    M, M_T = cfg.array.M, cfg.array.M_T
    T = cfg.indirect.interval_blocks
    r0 = reconstruct_channel(link, sc, 0, grid, UlaConfig(M), UlaConfig(M_T), cfg.power.sir_db, seeds[0], user)
    rT = reconstruct_channel(link, sc, T, grid, UlaConfig(M), UlaConfig(M_T), cfg.power.sir_db, seeds[1], user)
    g0 = solve_stripped(r0, grid, n_bins, cfg.solver.name)
    gT = solve_stripped(rT, grid, n_bins, cfg.solver.name)
    paths = estimate_paths(g0, grid, M, M_T, cfg.indirect.floor_db, user)
    fd = estimate_doppler_pair(g0, gT, T, grid)
    return [dataclasses.replace(p, doppler_hz=fd.get(p.delay_bin, math.nan)) for p in paths]


def run_indirect(cfg: ExperimentConfig, run_id: int) -> RunResult:
    grid = build_grid(cfg)
    alloc = build_allocation(cfg)
    scene = build_scene(cfg, grid)
    est: list[PathEstimate] = []
    seeds = _rngs(cfg, run_id, scene.n_sources)
    for k, link in enumerate(scene.links):
        if not link:
            continue
        sc = user_subcarriers(alloc, k)
        est += indirect_user(link, sc, grid, cfg, seeds[k].spawn(2), k, default_bins(cfg, grid, sc))
    truth = scene.paths()
    return RunResult(run_id, truth, est, match_paths(truth, est, gates(cfg, grid, True)))


def baseline_user(recon: ReconChannel, grid: OfdmGrid, cfg: ExperimentConfig) -> tuple[bl.RangeAngleMap, list[PathEstimate]]:
    rmap = bl.clear_map(bl.dft2d_map(recon, grid, cfg.baseline.angle_fft_len), cfg.baseline.floor_db)
    res = grid.delay_resolution_s
    est = [PathEstimate(int(round(d / res)), d, math.asin(s), math.nan, math.nan, p, recon.user)
           for d, s, p in rmap.peaks()]
    return rmap, est


def run_baseline(cfg: ExperimentConfig, run_id: int) -> RunResult:
    grid = build_grid(cfg)
    alloc = build_allocation(cfg)
    scene = build_scene(cfg, grid)
    seeds = _rngs(cfg, run_id, scene.n_sources)
    est: list[PathEstimate] = []
    maps = {}
    for k, link in enumerate(scene.links):
        if not link:
            continue
        sc = user_subcarriers(alloc, k)
        recon = reconstruct_channel(link, sc, 0, grid, UlaConfig(cfg.array.M), UlaConfig(cfg.array.M_T),
                                    cfg.power.sir_db, seeds[k], k)
        rmap, e = baseline_user(recon, grid, cfg)
        maps[k] = rmap
        est += e
    truth = scene.paths()
    return RunResult(run_id, truth, est, match_paths(truth, est, gates(cfg, grid, True)), extra={"maps": maps})


def dynamic_link(cfg: ExperimentConfig, grid: OfdmGrid, source: int, update: int) -> tuple[PathParams, ...]:
    """Moving paths of one source during update interval ``update`` (fresh draw per interval)."""
    specs = [dataclasses.replace(s, doppler_span_hz=tuple(cfg.clutter.dynamic_doppler_hz), source=0, clutter=False)
             for i, s in enumerate(cfg.scene.cluster_specs()) if (s.source if s.source is not None else i) == source]
    if not specs:
        return ()
    sc = sample_scene(specs, [cfg.scene.seed, source, update, 1], cfg.mode,
                      grid=grid if cfg.scene.on_grid else None, carrier_hz=cfg.power.carrier_hz,
                      budget=build_budget(cfg))
    return tuple(dataclasses.replace(p, source=source) for p in sc.links[0])


def run_clutter(cfg: ExperimentConfig, run_id: int) -> RunResult:
    """Background subtraction over ``updates`` intervals, then indirect estimation on the residual."""
    grid = build_grid(cfg)
    alloc = build_allocation(cfg)
    scene = build_scene(cfg, grid)
    cl = cfg.clutter
    M, M_T = cfg.array.M, cfg.array.M_T
    rx, tx = UlaConfig(M), UlaConfig(M_T)
    seeds = _rngs(cfg, run_id, scene.n_sources)
    truth: list[PathParams] = []
    est: list[PathEstimate] = []
    survivors = 0
    residual = []
    for k, clutter in enumerate(scene.links):
        sc = user_subcarriers(alloc, k)
        n_bins = default_bins(cfg, grid, sc)
        noise_seeds = seeds[k].spawn(cl.updates + 1)
        state = ClutterState.zeros((sc.size, M, M_T), cl.alpha, cl.sample_interval_s)
        for i in range(cl.updates + 1):
            dyn = dynamic_link(cfg, grid, k, i)
            t = int(round(i * cl.sample_interval_s / grid.block_period_s))
            recon = reconstruct_channel(concat_links(clutter, dyn), sc, t, grid, rx, tx, cfg.power.sir_db,
                                        noise_seeds[i], k)
            if i < cl.updates:
                state = state.update(recon.H)
        noise = nominal_noise_floor(recon)
        cleaned = recon.with_channel(subtract(state, recon.H))
        g0 = solve_stripped(cleaned, grid, n_bins, cfg.solver.name, noise_floor=noise)
        e = estimate_paths(g0, grid, M, M_T, cl.floor_db, k)
        C = freq_channel(clutter, sc, t, grid, rx, tx)
        residual.append(10 * math.log10(max(normalized_difference(state, C), 1e-300)))
        rep = match_paths(clutter, e, gates(cfg, grid, False))
        survivors += rep.n_matched
        truth += list(dyn)
        est += e
    rep = match_paths(truth, est, gates(cfg, grid, True))
    return RunResult(run_id, truth, est, rep,
                     extra={"clutter_survivors": survivors, "clutter_residual_db": float(np.mean(residual))})


RUNNERS = {"direct": run_direct, "indirect": run_indirect, "baseline": run_baseline, "clutter": run_clutter}


def run_one(cfg: ExperimentConfig, run_id: int) -> RunResult:
    """One seeded run; module errors are captured rather than raised."""
    try:
        return RUNNERS[cfg.scheme](cfg, run_id)
    except Exception as exc:  # recorded per run so the remaining seeds still execute
        last = traceback.extract_tb(exc.__traceback__)[-1]
        return RunResult(run_id, error=f"{type(exc).__name__}: {exc} ({Path(last.filename).name}:{last.lineno})")


def _run_one_args(args):
    return run_one(*args)


# --- output -------------------------------------------------------------------

def _num(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def _db(p: float) -> str:
    return _num(10 * math.log10(p)) if p > 0 else "-inf"


def run_rows(res: RunResult) -> list[list[str]]:
    rows = []
    tm = res.report.truth_match if res.report else [None] * len(res.truth)
    em = res.report.est_match if res.report else [None] * len(res.est)
    for i, p in enumerate(res.truth):
        j = tm[i]
        rows.append([str(res.run_id), "true", str(i), str(p.source), _num(p.delay), _num(p.aoa), _num(p.aod),
                     _num(p.doppler), _db(p.power), "1" if j is not None else "0", str(j if j is not None else -1)])
    for j, e in enumerate(res.est):
        i = em[j]
        rows.append([str(res.run_id), "est", str(j), "" if e.source is None else str(e.source), _num(e.delay_s),
                     _num(e.aoa), _num(e.aod), _num(e.doppler_hz), _db(e.power),
                     "1" if i is not None else "0", str(i if i is not None else -1)])
    return rows


def summary_row(run_label, reports: Sequence[MatchReport], extras: Sequence[dict], error: str = "") -> list[str]:
    n_true = sum(len(r.truth) for r in reports)
    n_est = sum(len(r.est) for r in reports)
    n_m = sum(r.n_matched for r in reports)

    def rmse(key):
        e = np.concatenate([r.errors.get(key, np.zeros(0)) for r in reports]) if reports else np.zeros(0)
        e = e[np.isfinite(e)]
        return float(np.sqrt(np.mean(e ** 2))) if e.size else math.nan

    surv = [x["clutter_survivors"] for x in extras if "clutter_survivors" in x]
    resid = [x["clutter_residual_db"] for x in extras if "clutter_residual_db" in x]
    return [str(run_label), str(n_true), str(n_est), str(n_m),
            _num(n_m / n_true if n_true else math.nan), _num((n_est - n_m) / n_est if n_est else math.nan),
            _num(rmse("delay_s")), _num(rmse("aoa_phase")), _num(rmse("aod_phase")), _num(rmse("doppler_hz")),
            _num(rmse("power_db")), str(sum(surv)) if surv else "", _num(np.mean(resid)) if resid else "", error]


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> list[RunResult]:
    """Execute ``cfg.runs`` runs and write ``run_XXX.csv`` files plus ``summary.csv``."""
    out = Path(out_dir if out_dir is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    ids = list(range(cfg.runs))
    if cfg.workers > 1 and len(ids) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_one_args, [(cfg, i) for i in ids]))
    else:
        results = [run_one(cfg, i) for i in ids]
    summary = []
    for res in results:
        _write_csv(out / f"run_{res.run_id:03d}.csv", RUN_HEADER, run_rows(res))
        reps = [res.report] if res.report else []
        summary.append(summary_row(res.run_id, reps, [res.extra], res.error))
        for k, rmap in sorted(res.extra.get("maps", {}).items()):
            rmap.to_csv(out / f"map_{res.run_id:03d}_src{k}.csv")
    if results:
        summary.append(summary_row("all", [r.report for r in results if r.report], [r.extra for r in results],
                                   "; ".join(f"run {r.run_id}: {r.error}" for r in results if r.error)))
    _write_csv(out / "summary.csv", SUMMARY_HEADER, summary)
    return results


def sweep(cfg: ExperimentConfig, parameter: str, values: Sequence, out_dir=None) -> list[list[str]]:
    """One experiment per value of ``parameter`` (dotted config path); merged ``sweep.csv``."""
    out = Path(out_dir if out_dir is not None else cfg.output)
    configs = [cfg.replace_path(parameter, v) for v in values]  # validates the name before running
    rows = []
    for v, c in zip(values, configs):
        results = run_experiment(c, out / f"{parameter}={v}")
        row = summary_row("all", [r.report for r in results if r.report], [r.extra for r in results],
                          "; ".join(f"run {r.run_id}: {r.error}" for r in results if r.error))
        rows.append([str(v)] + row[1:])
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "sweep.csv", ["value"] + SUMMARY_HEADER[1:], rows)
    return rows


def simulate(cfg: ExperimentConfig, out_dir=None) -> None:
    """Write scene and per-run transmit/receive fixtures (``.npy``) for the configured setup."""
    out = Path(out_dir if out_dir is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    grid = build_grid(cfg)
    alloc = build_allocation(cfg)
    scene = build_scene(cfg, grid)
    (out / "scene.json").write_text(scene.to_json() + "\n")
    np.save(out / "subcarriers.npy", alloc.subcarriers)
    K, M, M_T = cfg.array.K, cfg.array.M, cfg.array.M_T
    noise = 0.0 if cfg.power.noiseless else thermal_noise_power(grid, cfg.power.noise_density_dbm_hz)
    for run_id in range(cfg.runs):
        s_sym, s_noise = _rngs(cfg, run_id, 2)
        frame = gen_symbols(alloc, grid, K, M_T, "qpsk", seed=s_sym, n_blocks=cfg.direct.n_blocks)
        ns = s_noise.spawn(cfg.direct.n_blocks)
        Y = np.stack([receive(scene, frame, t, grid, UlaConfig(M), noise, ns[t], UlaConfig(M_T)).Y
                      for t in range(cfg.direct.n_blocks)])
        np.save(out / f"symbols_{run_id:03d}.npy", frame.symbols)
        np.save(out / f"rx_{run_id:03d}.npy", Y)


__all__ = ["RUN_HEADER", "SUMMARY_HEADER", "RunResult", "run_experiment", "run_one", "sweep", "simulate",
           "build_scene", "build_grid", "build_allocation", "ConfigError"]
