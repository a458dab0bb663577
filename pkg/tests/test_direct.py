import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmnsense.direct import (BlockEstimateSeries, PathEstimate, ThresholdReference, classify_source,
                             estimate_direct, extract_angles, extract_doppler, is_multipath, recover_blocks,
                             same_delay_spectrum, threshold_paths)
from pmnsense.harness.config import ExperimentConfig
from pmnsense.harness.experiments import run_direct
from pmnsense.scene import (SPEED_OF_LIGHT, ClusterSpec, LinkBudget, PathParams, Scene, UlaConfig, sample_scene,
                            steering)
from pmnsense.waveform import Allocation, OfdmGrid, gen_symbols, receive

GRID = OfdmGrid(128, 1e8)


def rank_one(b, aod, aoa, m_t=2, m=4):
    return b * np.outer(steering(m_t, aod), steering(m, aoa))


class TestRecoverBlocks:
    def test_single_path_block(self):
        p = PathParams(7 * GRID.delay_resolution_s, 300.0, 0.3, 0.0, 0.5 - 0.2j)
        frame = gen_symbols(Allocation.full(128), GRID, 1, 1, seed=0, n_blocks=3)
        rx = receive(Scene(((p,),)), frame, 2, GRID, UlaConfig(4))
        blocks = recover_blocks(rx, frame, GRID, 32)
        assert [b for b, _ in blocks] == [7]
        expect = p.amp * np.exp(2j * np.pi * 2 * 300.0 * GRID.block_period_s) * steering(4, 0.3)
        assert np.allclose(blocks[0][1][0], expect, atol=1e-6)

    def test_zero_scene(self):
        frame = gen_symbols(Allocation.full(128), GRID, 1, 1, seed=0)
        rx = receive(Scene(((),)), frame, 0, GRID, UlaConfig(4))
        assert recover_blocks(rx, frame, GRID, 32) == []

    def test_subcarrier_mismatch(self):
        frame = gen_symbols(Allocation.full(128), GRID, 1, 1, seed=0)
        rx = receive(Scene(((),)), frame, 0, GRID, UlaConfig(4))
        other = gen_symbols(Allocation.random(128, 64, seed=1), GRID, 1, 1, seed=0)
        with pytest.raises(ValueError):
            recover_blocks(rx, other, GRID, 32)

    def test_desk_scene_supports(self):
        scene = sample_scene([ClusterSpec(path_count_range=(4, 6)) for _ in range(4)], 3, grid=GRID)
        frame = gen_symbols(Allocation.full(128), GRID, 4, 1, seed=1)
        rx = receive(scene, frame, 0, GRID, UlaConfig(4))
        got = {b for b, _ in recover_blocks(rx, frame, GRID, 128)}
        assert got == {round(p.delay / GRID.delay_resolution_s) for p in scene.paths()}

    def test_unknown_solver(self):
        frame = gen_symbols(Allocation.full(128), GRID, 1, 1, seed=0)
        rx = receive(Scene(((),)), frame, 0, GRID, UlaConfig(4))
        with pytest.raises(ValueError):
            recover_blocks(rx, frame, GRID, 32, solver="lasso")


class TestClassify:
    def test_single_source(self):
        blk = np.zeros((4, 4), complex)
        blk[2] = steering(4, 0.2)
        out = classify_source(blk, 4, 1)
        assert [k for k, _ in out] == [2] and np.allclose(out[0][1], blk[2:3])

    def test_zero_block(self):
        assert classify_source(np.zeros((6, 4)), 3, 2) == []

    def test_two_sources_same_delay(self):
        blk = np.vstack([rank_one(1.0, 0.1, 0.4), rank_one(0.3j, -0.2, -0.5)])
        out = classify_source(blk, 2, 2)
        assert [k for k, _ in out] == [0, 1]
        assert np.allclose(out[1][1], rank_one(0.3j, -0.2, -0.5))

    def test_shape_error(self):
        with pytest.raises(ValueError):
            classify_source(np.zeros((5, 4)), 2, 2)


class TestExtractAngles:
    def test_rank_one(self):
        b = 0.7 * np.exp(1j * 1.1)
        aoa, aod, p = extract_angles(rank_one(b, -0.4, 0.6))
        assert aoa == pytest.approx(0.6, abs=1e-9)
        assert aod == pytest.approx(-0.4, abs=1e-9)
        assert p == pytest.approx(abs(b) ** 2, abs=1e-9)

    def test_broadside(self):
        aoa, aod, _ = extract_angles(rank_one(2.0, 0.0, 0.0))
        assert aoa == 0.0 and aod == 0.0

    def test_single_tx_unresolved_aod(self):
        aoa, aod, p = extract_angles(steering(4, 0.25))
        assert aoa == pytest.approx(0.25) and math.isnan(aod) and p == pytest.approx(1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-1.4, 1.4), st.floats(-1.4, 1.4), st.floats(0.01, 100), st.floats(-math.pi, math.pi))
    def test_scale_invariance(self, aoa, aod, mag, ph):
        B = rank_one(0.5 + 0.1j, aod, aoa)
        c = mag * np.exp(1j * ph)
        a1, d1, p1 = extract_angles(B)
        a2, d2, p2 = extract_angles(c * B)
        assert a2 == pytest.approx(a1, abs=1e-9) and d2 == pytest.approx(d1, abs=1e-9)
        assert p2 == pytest.approx(mag ** 2 * p1, rel=1e-9)

    def test_monte_carlo_20db(self):
        rng = np.random.default_rng(0)
        err = []
        for _ in range(1000):
            aoa = rng.uniform(-1.2, 1.2)
            B = rank_one(1.0, 0.0, aoa, 1, 4)
            B = B + 0.1 * (rng.standard_normal(B.shape) + 1j * rng.standard_normal(B.shape)) / np.sqrt(2)
            err.append(extract_angles(B)[0] - aoa)
        assert np.sqrt(np.mean(np.square(err))) < 0.05


GRID_512 = OfdmGrid(512, 1e8)  # T_s = 6.4 us


def doppler_series(fd, n_blocks, k=0, n_sources=1):
    s = BlockEstimateSeries(n_sources, 1)
    for t in range(n_blocks):
        blk = np.zeros((n_sources, 4), complex)
        blk[k] = 0.3 * np.exp(2j * np.pi * t * fd * GRID_512.block_period_s) * steering(4, 0.1)
        s.add(t, [(5, blk)])
    return s


class TestDoppler:
    def test_zero(self):
        assert extract_doppler(doppler_series(0.0, 4), 5, 0, GRID_512) == pytest.approx(0.0, abs=1e-6)

    def test_200hz(self):
        assert GRID_512.block_period_s == pytest.approx(6.4e-6)
        assert extract_doppler(doppler_series(200.0, 50), 5, 0, GRID_512) == pytest.approx(200.0, abs=0.5)

    def test_wraps(self):
        fmax = 1 / (2 * GRID_512.block_period_s)
        est = extract_doppler(doppler_series(fmax + 1000.0, 5), 5, 0, GRID_512)
        assert est == pytest.approx(-fmax + 1000.0, rel=1e-6) and abs(est) <= fmax

    def test_missing_pair(self):
        with pytest.raises(ValueError):
            extract_doppler(doppler_series(100.0, 1), 5, 0, GRID_512)
        with pytest.raises(ValueError):
            extract_doppler(doppler_series(100.0, 3, k=1, n_sources=2), 5, 0, GRID_512)

    def test_series_keys(self):
        assert doppler_series(1.0, 2, k=1, n_sources=3).keys() == [(5, 1)]


class TestThreshold:
    def test_all_below(self):
        ref = ThresholdReference(LinkBudget(), noise_power=1.0)
        est = [PathEstimate(3, 3e-8, 0.1, power=0.5)]
        assert threshold_paths(est, ref) == []

    def test_noiseless_true_paths_kept(self):
        budget = LinkBudget()
        est = [PathEstimate(i, d, 0.0, power=float(budget.expected_power(d)))
               for i, d in enumerate([2e-7, 4e-7, 6e-7])]
        assert threshold_paths(est, ThresholdReference(budget)) == est

    def test_monotone_in_delay(self):
        th = ThresholdReference(LinkBudget(), 1e-13).threshold(np.linspace(1e-7, 1e-6, 20))
        assert np.all(np.diff(th) <= 0)

    def test_downlink_range_cutoff(self):
        kept = {"near": [0, 0], "far": [0, 0]}
        for seed in range(4):
            cfg = ExperimentConfig(mode="downlink", scheme="direct").replace_path("scene.seed", seed)
            r = run_direct(cfg, 0)
            for i, p in enumerate(r.truth):
                d = p.delay * SPEED_OF_LIGHT
                key = "near" if d < 80 else "far" if d > 145 else None
                if key:
                    kept[key][0] += 1
                    kept[key][1] += r.report.truth_match[i] is not None
        assert kept["near"][1] >= 0.5 * kept["near"][0]
        assert kept["far"][1] <= 0.05 * kept["far"][0]


class TestSameDelay:
    def test_single_peak(self):
        out = same_delay_spectrum(rank_one(1.0, math.asin(0.25), math.asin(-0.5), 4, 4))
        assert len(out) == 1
        aoa, aod, p = out[0]
        assert abs(math.sin(aoa) + 0.5) <= 2 / 64 and abs(math.sin(aod) - 0.25) <= 2 / 64
        assert p == pytest.approx(1.0, rel=1e-6)

    def test_two_separated(self):
        B = rank_one(1.0, math.asin(0.5), math.asin(0.5), 4, 4) + rank_one(0.8, math.asin(-0.5), math.asin(-0.5), 4, 4)
        out = same_delay_spectrum(B)
        sins = sorted(round(math.sin(a), 2) for a, _, _ in out[:2])
        assert len(out) >= 2 and sins == [-0.5, 0.5]

    def test_merged_inside_rayleigh(self):
        B = rank_one(1.0, 0.0, 0.0, 4, 4) + rank_one(1.0, math.asin(0.1), math.asin(0.1), 4, 4)
        assert len(same_delay_spectrum(B)) == 1

    def test_needs_two_tx(self):
        with pytest.raises(ValueError):
            same_delay_spectrum(np.ones((1, 4)))

    def test_is_multipath(self):
        assert not is_multipath(rank_one(1.0, 0.2, 0.3))
        B = rank_one(1.0, math.asin(0.5), math.asin(0.5), 4, 4) + rank_one(0.8, math.asin(-0.5), math.asin(-0.5), 4, 4)
        assert is_multipath(B)
        assert not is_multipath(np.ones((1, 4)))


def test_pipeline_noiseless_recovery():
    scene = sample_scene([ClusterSpec(path_count_range=(6, 12)) for _ in range(4)], 5, grid=GRID)
    frame = gen_symbols(Allocation.full(128), GRID, 4, 1, seed=2, n_blocks=2)
    rx = [receive(scene, frame, t, GRID, UlaConfig(4)) for t in range(2)]
    est = estimate_direct(rx, frame, GRID, 128)
    got = {(e.delay_bin, e.source): e for e in est}
    assert len(got) == len(scene.paths())
    for p in scene.paths():
        e = got[(round(p.delay / GRID.delay_resolution_s), p.source)]
        assert abs(e.sin_aoa - math.sin(p.aoa)) < 1e-4
        assert abs(e.doppler_hz - p.doppler) < 1.0
        assert e.power == pytest.approx(p.power, rel=1e-4)


def test_pipeline_deterministic():
    scene = sample_scene([ClusterSpec(path_count_range=(3, 5))], 1, grid=GRID)
    frame = gen_symbols(Allocation.full(128), GRID, 1, 1, seed=2, n_blocks=2)
    rx = [receive(scene, frame, t, GRID, UlaConfig(4), 1e-14, seed=t) for t in range(2)]
    assert estimate_direct(rx, frame, GRID, 128) == estimate_direct(rx, frame, GRID, 128)
