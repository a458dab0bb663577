import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmnsense.scene import (ClusterSpec, LinkBudget, PathParams, Scene, UlaConfig, concat_links,
                            fixed_path_spec, free_space_loss_db, freq_channel, pathloss, sample_scene,
                            steering, time_channel)
from pmnsense.waveform import OfdmGrid

angles = st.floats(-1.5, 1.5)


def random_link(rng, n_paths, grid, on_grid=True, source=0):
    out = []
    for _ in range(n_paths):
        q = rng.integers(0, grid.n_subcarriers)
        tau = q / grid.bandwidth_hz if on_grid else rng.uniform(0, 1e-6)
        out.append(PathParams(tau, rng.uniform(-500, 500), rng.uniform(-1.4, 1.4), rng.uniform(-1.4, 1.4),
                              complex(rng.standard_normal(), rng.standard_normal()), source))
    return tuple(out)


class TestSteering:
    def test_single_element(self):
        assert np.allclose(steering(UlaConfig(1), 0.7), [1])

    def test_broadside_all_ones(self):
        assert np.allclose(steering(UlaConfig(4), 0.0), np.ones(4))

    def test_endfire_two_elements(self):
        assert np.allclose(steering(2, math.pi / 2), [1, -1])

    @given(st.integers(1, 16), angles)
    def test_unit_modulus(self, m, a):
        assert np.allclose(np.abs(steering(m, a)), 1.0)

    @given(angles)
    def test_adjacent_phase(self, a):
        v = steering(5, a)
        assert np.allclose(v[1:] / v[:-1], np.exp(1j * math.pi * math.sin(a)))

    def test_rejects_empty_array(self):
        with pytest.raises(ValueError):
            UlaConfig(0)


class TestPathParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            PathParams(-1e-9, 0, 0, 0, 1)
        with pytest.raises(ValueError):
            PathParams(0, 0, math.pi / 2, 0, 1)

    def test_power(self):
        assert PathParams(0, 0, 0, 0, 3 + 4j).power == pytest.approx(25)


class TestFreqChannel:
    grid = OfdmGrid(64, 1e8)

    def test_empty_link(self):
        H = freq_channel((), 3, 2, self.grid, UlaConfig(4), UlaConfig(2))
        assert H.shape == (4, 2) and not H.any()

    def test_identity_path(self):
        p = (PathParams(0, 0, 0, 0, 1),)
        for n in (0, 5, 63):
            for t in (0, 7):
                assert np.allclose(freq_channel(p, n, t, self.grid, UlaConfig(1), UlaConfig(1)), [[1]])

    def test_scalar_loop_oracle(self):
        rng = np.random.default_rng(1)
        link = random_link(rng, 3, self.grid, on_grid=False)
        rx, tx = UlaConfig(3), UlaConfig(2)
        f0, ts = self.grid.subcarrier_spacing_hz, self.grid.block_period_s
        for n in (0, 11, 40):
            for t in (0, 3):
                H = freq_channel(link, n, t, self.grid, rx, tx)
                for i in range(3):
                    for j in range(2):
                        ref = 0j
                        for p in link:
                            ref += (p.amp * np.exp(-2j * math.pi * n * p.delay * f0)
                                    * np.exp(2j * math.pi * t * p.doppler * ts)
                                    * np.exp(1j * math.pi * i * math.sin(p.aoa))
                                    * np.exp(1j * math.pi * j * math.sin(p.aod)))
                        assert H[i, j] == pytest.approx(ref, abs=1e-12)

    def test_vectorized_matches_scalar(self):
        link = random_link(np.random.default_rng(2), 4, self.grid)
        n = np.array([0, 3, 9])
        Hs = freq_channel(link, n, 1, self.grid, UlaConfig(4), UlaConfig(1))
        for i, k in enumerate(n):
            assert np.allclose(Hs[i], freq_channel(link, int(k), 1, self.grid, UlaConfig(4), UlaConfig(1)))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.integers(0, 4), st.integers(0, 4))
    def test_linear_in_paths(self, seed, la, lb):
        rng = np.random.default_rng(seed)
        a, b = random_link(rng, la, self.grid), random_link(rng, lb, self.grid)
        rx, tx = UlaConfig(3), UlaConfig(2)
        n = np.arange(8)
        tot = freq_channel(concat_links(a, b), n, 2, self.grid, rx, tx)
        parts = freq_channel(a, n, 2, self.grid, rx, tx) + freq_channel(b, n, 2, self.grid, rx, tx)
        assert np.allclose(tot, parts)


class TestTimeChannel:
    def test_empty(self):
        assert time_channel((), 0.0, UlaConfig(2), UlaConfig(2)) == []

    def test_static_path(self):
        p = PathParams(1e-7, 50.0, 0.3, -0.2, 2 - 1j)
        [(d, m)] = time_channel((p,), 0.0, UlaConfig(4), UlaConfig(2))
        assert d == p.delay
        assert np.allclose(m, p.amp * np.outer(steering(4, 0.3), steering(2, -0.2)))

    def test_dft_matches_freq_channel(self):
        grid = OfdmGrid(64, 1e8)
        link = random_link(np.random.default_rng(3), 5, grid)
        rx, tx = UlaConfig(3), UlaConfig(2)
        h = np.zeros((64, 3, 2), dtype=complex)
        for d, m in time_channel(link, 0.0, rx, tx):
            h[int(round(d * grid.bandwidth_hz))] += m
        H_fft = np.fft.fft(h, axis=0)
        H = freq_channel(link, np.arange(64), 0, grid, rx, tx)
        assert np.linalg.norm(H_fft - H) <= 1e-10 * np.linalg.norm(H)

    def test_negative_time(self):
        with pytest.raises(ValueError):
            time_channel((), -1.0, UlaConfig(1), UlaConfig(1))


class TestPathloss:
    @pytest.mark.parametrize("d,e,g", [(1, 2, 1), (1, 4, 1), (10, 2, 1e-2), (10, 4, 1e-4)])
    def test_values(self, d, e, g):
        assert pathloss(d, e) == pytest.approx(g)

    @pytest.mark.parametrize("d", [0, -3])
    def test_rejects_nonpositive(self, d):
        with pytest.raises(ValueError):
            pathloss(d, 2)

    def test_reference_loss(self):
        assert free_space_loss_db(2.35e9) == pytest.approx(39.86, abs=0.01)

    def test_budget_near_noise_at_145m(self):
        # downlink: received power per path at 145 m sits close to the -94 dBm thermal floor
        b = LinkBudget.for_mode("downlink")
        p_dbm = 10 * math.log10(b.expected_power(145 / 299_792_458.0)) + 30
        assert abs(p_dbm - (-94)) < 3


class TestSampleScene:
    def test_fixed_path(self):
        sc = sample_scene([fixed_path_spec(30.0, 20.0, 150.0)], 0, "uplink")
        [p] = sc.paths()
        assert p.delay == pytest.approx(30 / 299_792_458.0)
        assert p.aoa == pytest.approx(math.radians(20)) and p.aod == pytest.approx(math.radians(20))
        assert p.doppler == pytest.approx(150.0)

    def test_deterministic(self):
        a = sample_scene([ClusterSpec()] * 4, 7, "downlink")
        b = sample_scene([ClusterSpec()] * 4, 7, "downlink")
        assert a.to_json() == b.to_json()

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**31))
    def test_parameters_inside_spec(self, seed):
        spec = ClusterSpec()
        grid = OfdmGrid(512, 1e8)
        sc = sample_scene([spec] * 4, seed, "downlink", grid=grid)
        lo, hi = spec.distance_bounds()
        for link in sc.links:
            assert 10 <= len(link) <= 15
            bins = [round(p.delay * 1e8) for p in link]
            assert len(set(bins)) == len(bins)
            for p in link:
                d = p.delay * 299_792_458.0
                assert lo - 1.6 <= d <= hi + 1.6  # half a 3 m bin of quantization
                assert abs(p.aoa) <= math.radians(85) + 1e-12
                assert abs(p.aod) <= math.radians(85) + 1e-12
                assert p.delay * 1e8 == pytest.approx(round(p.delay * 1e8), abs=1e-9)

    def test_cluster_angle_span(self):
        spec = ClusterSpec(direction_offset_deg=(0, 0))
        sc = sample_scene([spec], 3, "uplink")
        for p in sc.paths():
            assert abs(math.degrees(p.aoa)) <= 22.5 + 1e-9

    def test_clutter_doppler_bounded(self):
        sc = sample_scene([ClusterSpec(clutter=True)], 1, "uplink", clutter_doppler_bound=0.05)
        assert all(p.is_clutter and abs(p.doppler) <= 0.05 for p in sc.paths())

    def test_infeasible_distinct_delays(self):
        spec = ClusterSpec(path_count_range=(10, 10), distance_span_m=(0, 3), distance_offset_m=(60, 60))
        with pytest.raises(ValueError):
            sample_scene([spec], 0, "uplink", grid=OfdmGrid(512, 1e8))

    def test_amplitudes_follow_pathloss(self):
        specs = [ClusterSpec(path_count_range=(15, 15))] * 40
        sc = sample_scene(specs, 5, "uplink")
        b = LinkBudget.for_mode("uplink")
        ratio = [p.power / b.expected_power(p.delay) for p in sc.paths()]
        assert np.mean(ratio) == pytest.approx(1.0, rel=0.15)  # CN(0, 1) fading around the budget

    def test_json_roundtrip(self):
        sc = sample_scene([ClusterSpec()] * 2, 2, "uplink")
        back = Scene.from_json(sc.to_json())
        assert back.paths() == sc.paths()

    def test_scene_rejects_fast_clutter(self):
        with pytest.raises(ValueError):
            Scene(((PathParams(0, 5.0, 0, 0, 1, 0, True),),), clutter_doppler_bound=1.0)

    def test_static_period_in_blocks(self):
        grid = OfdmGrid(512, 1e8)
        assert 0.0017 / grid.block_period_s == pytest.approx(265, abs=1)
