"""Chaotic-light synthesis, photon sampling, detector chain, full datasets."""

import hashlib

import numpy as np
import pytest

from hbtmux.core import (
    ChannelMap,
    DetectorConfig,
    SpectralChannel,
    default_channel_map,
)
from hbtmux.correlator import pair_histogram
from hbtmux.tagio import TagFileHeader, write_tags
from hbtmux.thermal import (
    SimConfig,
    apply_detector,
    sample_photons,
    simulate_channel_intensity,
    simulate_dataset,
)

CHAN = SpectralChannel("A", 0, 640.0, 0.040)


class TestIntensityTrace:
    def test_grid_and_unit_mean(self):
        dt, trace = simulate_channel_intensity(CHAN, mode_count=64,
                                               duration_ps=6000.0, seed=1)
        sigma_c = 2.7181247789  # both passbands in quadrature
        assert dt <= sigma_c / 10 + 1e-9
        assert trace.size == int(np.ceil(6000.0 / dt))
        assert trace.min() >= 0.0
        assert abs(trace.mean() - 1.0) < 0.05

    def test_single_mode_is_constant(self):
        _, trace = simulate_channel_intensity(CHAN, mode_count=1,
                                              duration_ps=500.0, seed=3)
        np.testing.assert_allclose(trace, 1.0, atol=1e-12)

    def test_deterministic(self):
        _, a = simulate_channel_intensity(CHAN, 64, 1000.0, seed=7)
        _, b = simulate_channel_intensity(CHAN, 64, 1000.0, seed=7)
        _, c = simulate_channel_intensity(CHAN, 64, 1000.0, seed=8)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_coarse_grid_rejected(self):
        with pytest.raises(ValueError):
            simulate_channel_intensity(CHAN, 64, 1000.0, seed=1, dt_ps=1.0)

    def test_ensemble_bunching_statistics(self):
        """Zero-lag intensity correlation doubles; it decays on the
        coherence scale (value 1.011 at three coherence times)."""
        g0 = []
        g3 = []
        lag = 30  # 3 sigma_c at dt = sigma_c / 10
        for seed in range(200):
            _, tr = simulate_channel_intensity(CHAN, 128, 2000 * 2.72, seed=seed)
            m = tr.mean()
            g0.append(np.mean(tr * tr) / m**2)
            g3.append(np.mean(tr[:-lag] * tr[lag:]) / m**2)
        assert np.mean(g0) == pytest.approx(2.0, abs=0.05)
        assert np.mean(g3) == pytest.approx(1.011, abs=0.01)


class TestSamplePhotons:
    def test_rate_closure_on_flat_trace(self):
        trace = np.ones(1_000_000)
        a, b = sample_photons(trace, dt_ps=10.0, rate_cps=1e9, arm_split=0.5,
                              seed=1)
        total = a.size + b.size
        # 2 * rate * duration with duration = 1e7 ps
        assert abs(total - 20000) < 3 * np.sqrt(20000)
        assert abs(a.size - total / 2) < 3 * np.sqrt(total) / 2

    def test_sorted_integer_output(self):
        trace = np.ones(100_000)
        a, b = sample_photons(trace, 10.0, 1e9, 0.5, seed=2)
        for arr in (a, b):
            assert arr.dtype == np.int64
            assert np.all(np.diff(arr) >= 0)
            assert arr.min() >= 0
            assert arr.max() < 1_000_000 * 10

    def test_split_extremes(self):
        trace = np.ones(100_000)
        a, b = sample_photons(trace, 10.0, 1e9, 1.0, seed=3)
        assert b.size == 0 and a.size > 0

    def test_deterministic(self):
        trace = np.ones(10_000)
        out1 = sample_photons(trace, 10.0, 1e9, 0.5, seed=5)
        out2 = sample_photons(trace, 10.0, 1e9, 0.5, seed=5)
        np.testing.assert_array_equal(out1[0], out2[0])
        np.testing.assert_array_equal(out1[1], out2[1])

    def test_bunching_shows_in_cross_pairs(self):
        """Photon pairs from one chaotic trace cluster at short delays."""
        chan = SpectralChannel("A", 0, 640.0, 0.002)  # sigma_c about 54 ps
        dt, trace = simulate_channel_intensity(chan, 64, 2_000_000.0, seed=9)
        a, b = sample_photons(trace, dt, 2e9, 0.5, seed=10)
        near = pair_histogram(a, b, window_ps=2000, bin_width_ps=20)
        center = near[near.size // 2 - 1 : near.size // 2 + 1].mean()
        floor = near[: near.size // 4].mean()
        assert center / floor > 1.4


def as_streams(pixel_times):
    return {p: np.asarray(t, dtype=np.int64) for p, t in pixel_times.items()}


class TestApplyDetector:
    def setup_method(self):
        self.cmap = default_channel_map(n_per_arm=3)  # A 0-2, B 3-5

    def run(self, streams, arm="A", duration_ps=1_000_000, seed=0, **det):
        detector = DetectorConfig(**det)
        return apply_detector(as_streams(streams), arm, detector, self.cmap,
                              duration_ps, seed)

    def test_ideal_arm_a_passthrough(self):
        tags = self.run({0: [10, 20], 2: [15]})
        assert list(tags["t"]) == [10, 15, 20]
        assert list(tags["pixel"]) == [0, 2, 0]

    def test_arm_b_gets_fiber_delay(self):
        tags = self.run({3: [100, 200]}, arm="B", fiber_delay_ps=5000.0)
        assert list(tags["t"]) == [5100, 5200]

    def test_static_offsets_shift_single_pixel(self):
        tags = self.run({0: [1000], 1: [1000]}, static_offset_ps={1: 250.0})
        by_pixel = {int(r["pixel"]): int(r["t"]) for r in tags}
        assert by_pixel == {0: 1000, 1: 1250}

    def test_dead_pixel_emits_nothing(self):
        tags = self.run({0: [10, 20], 1: [30]}, dead_pixels=(0,))
        assert list(tags["pixel"]) == [1]

    def test_pde_thins(self):
        n = 100_000
        tags = self.run({0: np.arange(n) * 10}, pde=0.5)
        assert abs(tags.size - n / 2) < 3 * np.sqrt(n * 0.25)

    def test_jitter_and_residual_add_in_quadrature(self):
        n = 200_000
        t0 = (np.arange(n, dtype=np.int64) + 1) * 1000
        tags = self.run({0: t0}, jitter_sigma_ps=40.0, offset_residual_ps=29.0,
                        duration_ps=n * 1000)
        spread = np.sort(tags["t"].astype(np.int64)) - t0
        expected = np.hypot(40.0, 29.0)
        assert np.std(spread) == pytest.approx(expected, rel=0.02)
        assert abs(np.mean(spread)) < 1.0

    def test_dark_counts_populate_live_pixels(self):
        duration = 1_000_000_000_000  # 1 s
        tags = self.run({}, dark_cps=1000.0, duration_ps=duration)
        # three live pixels on this arm at 1 kcps each
        assert abs(tags.size - 3000) < 3 * np.sqrt(3000)
        assert set(np.unique(tags["pixel"])) == {0, 1, 2}
        assert tags["t"].max() < duration

    def test_crosstalk_duplicates_into_neighbours(self):
        n = 1_000_000
        t0 = np.arange(n, dtype=np.int64) * 100
        tags = self.run({1: t0}, crosstalk_prob=0.002, duration_ps=n * 100)
        counts = dict(zip(*np.unique(tags["pixel"], return_counts=True)))
        assert counts[1] == n
        for neigh in (0, 2):
            assert abs(counts.get(neigh, 0) - 2000) < 140  # 3 sigma binomial
        # duplicates of duplicates would land two pixels away
        assert 3 not in counts

    def test_crosstalk_crosses_the_arm_seam(self):
        n = 200_000
        tags = self.run({2: np.arange(n) * 100}, crosstalk_prob=0.002,
                        duration_ps=n * 100)
        pixels = set(int(p) for p in np.unique(tags["pixel"]))
        assert 3 in pixels  # physically adjacent, wired to the other arm
        assert pixels <= set(self.cmap.pixels())  # no wraparound ids

    def test_crosstalk_timing_is_tight(self):
        n = 100_000
        t0 = np.arange(n, dtype=np.int64) * 1000
        tags = self.run({1: t0}, crosstalk_prob=0.01, duration_ps=n * 1000)
        dup = np.sort(tags["t"][tags["pixel"] == 2].astype(np.int64))
        parents = np.rint(dup / 1000.0).astype(np.int64) * 1000
        assert np.percentile(np.abs(dup - parents), 99) <= 20  # ~5 ps rms

    def test_output_sorted_and_deterministic(self):
        streams = {0: np.arange(5000) * 37, 1: np.arange(5000) * 41}
        a = self.run(streams, jitter_sigma_ps=40.0, crosstalk_prob=0.01,
                     dark_cps=100.0, seed=12)
        b = self.run(streams, jitter_sigma_ps=40.0, crosstalk_prob=0.01,
                     dark_cps=100.0, seed=12)
        assert np.all(np.diff(a["t"].astype(np.int64)) >= 0)
        np.testing.assert_array_equal(a, b)


class TestSimConfig:
    def test_mode_count_floor(self):
        with pytest.raises(ValueError):
            SimConfig(channel_map=default_channel_map(2), detector=DetectorConfig(),
                      rate_per_channel_cps=1e4, duration_s=0.1, seed=1, mode_count=4)

    def test_shared_groups_must_be_adjacent_ranks(self):
        cmap = default_channel_map(4)
        with pytest.raises(ValueError):
            SimConfig(channel_map=cmap, detector=DetectorConfig(),
                      rate_per_channel_cps=1e4, duration_s=0.1, seed=1,
                      shared_band_groups=((0, 2),))
        with pytest.raises(ValueError):
            SimConfig(channel_map=cmap, detector=DetectorConfig(),
                      rate_per_channel_cps=1e4, duration_s=0.1, seed=1,
                      shared_band_groups=((0, 1), (1, 2)))

    def test_from_toml(self, tmp_path):
        text = """
        [sim]
        rate_per_channel_cps = 50e3
        duration_s = 0.25
        seed = 99
        mode_count = 32

        [sim.channel_map]
        n_per_arm = 5

        [detector]
        jitter_sigma_ps = 40.0
        offset_residual_ps = 29.0
        pde = 0.5
        dark_cps = 100.0
        crosstalk_prob = 0.002
        """
        path = tmp_path / "sim.toml"
        path.write_text(text)
        cfg = SimConfig.from_toml(path)
        assert cfg.rate_per_channel_cps == 50e3
        assert cfg.seed == 99
        assert cfg.mode_count == 32
        assert cfg.channel_map.n_channels == 10
        assert cfg.detector.pde == 0.5

    def test_from_toml_external_map(self, tmp_path):
        map_path = tmp_path / "map.txt"
        map_path.write_text(default_channel_map(2).to_text())
        toml_path = tmp_path / "sim.toml"
        toml_path.write_text(
            f'[sim]\nrate_per_channel_cps = 1e4\nduration_s = 0.1\nseed = 1\n'
            f'channel_map = "{map_path}"\n'
        )
        cfg = SimConfig.from_toml(toml_path)
        assert cfg.channel_map == default_channel_map(2)


class TestSimulateDataset:
    def small_config(self, **kwargs):
        defaults = dict(
            channel_map=default_channel_map(n_per_arm=2),
            detector=DetectorConfig(),
            rate_per_channel_cps=1e4,
            duration_s=1.0,
            seed=42,
        )
        defaults.update(kwargs)
        return SimConfig(**defaults)

    def test_record_count_matches_rates(self):
        """Four channels at 10 kcps for one second: about 4e4 records."""
        header, tags = simulate_dataset(self.small_config())
        assert abs(tags.size - 40_000) < 3 * np.sqrt(40_000)
        assert header.record_count == tags.size
        assert header.pixel_count == 4

    def test_stream_sorted_and_pixels_mapped(self):
        _, tags = simulate_dataset(self.small_config())
        assert np.all(np.diff(tags["t"].astype(np.int64)) >= 0)
        assert set(np.unique(tags["pixel"])) <= {0, 1, 2, 3}

    def test_reruns_byte_identical(self, tmp_path):
        cfg = self.small_config(duration_s=0.2)
        digests = []
        for name in ("one.tags", "two.tags"):
            header, tags = simulate_dataset(cfg)
            path = tmp_path / name
            write_tags(header, tags, path)
            digests.append(hashlib.sha256(path.read_bytes()).hexdigest())
        assert digests[0] == digests[1]

    def test_channel_subset_reproduces_streams(self):
        """Dropping other channels does not perturb a pair's photons."""
        full = self.small_config(duration_s=0.3)
        sub_map = ChannelMap(channels=tuple(
            c for c in full.channel_map.channels if c.pixel in (0, 3)
        ))
        sub = self.small_config(duration_s=0.3, channel_map=sub_map)
        _, tags_full = simulate_dataset(full)
        _, tags_sub = simulate_dataset(sub)
        for pixel in (0, 3):
            t_full = tags_full["t"][tags_full["pixel"] == pixel]
            t_sub = tags_sub["t"][tags_sub["pixel"] == pixel]
            np.testing.assert_array_equal(t_full, t_sub)

    def test_shared_band_group_correlates_neighbour_channels(self):
        base = dict(
            channel_map=default_channel_map(n_per_arm=2),
            detector=DetectorConfig(fiber_delay_ps=5000.0),
            rate_per_channel_cps=1e8,
            duration_s=5e-4,
            seed=7,
            mode_count=32,
            coherence_sigma_ps=200.0,
        )
        # pairs are rank 0 = (0, 3) and rank 1 = (1, 2)
        shared = SimConfig(**base, shared_band_groups=((0, 1),))
        indep = SimConfig(**base)

        def mismatched_peak(cfg):
            _, tags = simulate_dataset(cfg)
            a = tags["t"][tags["pixel"] == 0].astype(np.int64)
            b = tags["t"][tags["pixel"] == 2].astype(np.int64)
            h = pair_histogram(a, b, window_ps=20000, bin_width_ps=100)
            centers = -20000 + (np.arange(h.size) + 0.5) * 100
            peak = h[np.abs(centers - 5000) < 300].mean()
            floor = h[np.abs(centers) > 10000].mean()
            return peak / floor

        assert mismatched_peak(shared) > 1.5
        assert mismatched_peak(indep) < 1.2

    def test_writes_file_when_destination_given(self, tmp_path):
        path = tmp_path / "run.tags"
        header, tags = simulate_dataset(self.small_config(duration_s=0.1),
                                        destination=path)
        assert path.exists()
        assert path.stat().st_size == 36 + 12 * tags.size
