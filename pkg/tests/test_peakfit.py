"""Bounded weighted fits of the bunching peak on normalized histograms."""

import numpy as np
import pytest

from hbtmux.core import OffsetTable, default_channel_map
from hbtmux.correlator import CorrelationJob, run_all_pairs
from hbtmux.peakfit import FitConstraints, FitResult, batch_fit, fit_peak, peak_model


def grid(window_ps=20000, bin_width_ps=20):
    n = 2 * window_ps // bin_width_ps
    return -window_ps + (np.arange(n) + 0.5) * bin_width_ps


def synth(centers, contrast, mu, sigma, baseline, rng=None,
          sine_amp=0.0, sine_period=8900.0, sine_phase=0.0):
    model = 1.0 + contrast * np.exp(-((centers - mu) ** 2) / (2 * sigma**2))
    if sine_amp:
        model = model + sine_amp * np.sin(2 * np.pi * centers / sine_period
                                          + sine_phase)
    if rng is None:
        return model
    return rng.poisson(model * baseline) / baseline


class TestFitPeak:
    def test_flat_input_gives_zero_contrast(self):
        centers = grid()
        res = fit_peak(centers, np.ones_like(centers), 1000.0, 5000.0)
        assert res.status == "converged"
        assert abs(res.contrast) < 1e-6

    def test_noiseless_recovery(self):
        centers = grid()
        values = synth(centers, 0.05, 5030.0, 72.0, 1000.0)
        res = fit_peak(centers, values, 1000.0, 5000.0)
        assert res.status == "converged"
        assert res.contrast == pytest.approx(0.05, abs=1e-6)
        assert res.mu_ps == pytest.approx(5030.0, abs=1e-3)
        assert res.sigma_ps == pytest.approx(72.0, abs=1e-3)
        assert res.background == 1.0

    def test_noisy_single_fit_within_errors(self):
        rng = np.random.default_rng(11)
        centers = grid()
        values = synth(centers, 0.03, 5000.0, 70.0, 1000.0, rng=rng)
        res = fit_peak(centers, values, 1000.0, 5000.0)
        assert res.ok
        assert res.contrast == pytest.approx(0.03, abs=5 * res.contrast_err)
        assert res.contrast_err > 0

    def test_pull_distribution_smoke(self):
        """Contrast pulls should be roughly standard normal."""
        rng = np.random.default_rng(5)
        centers = grid()
        pulls = []
        for _ in range(120):
            values = synth(centers, 0.03, 5000.0, 70.0, 1000.0, rng=rng)
            res = fit_peak(centers, values, 1000.0, 5000.0)
            assert res.ok
            pulls.append((res.contrast - 0.03) / res.contrast_err)
        pulls = np.array(pulls)
        assert abs(pulls.mean()) < 0.3
        assert 0.8 < pulls.std() < 1.2

    def test_narrow_peak_pins_sigma_at_lower_bound(self):
        centers = grid()
        values = synth(centers, 0.04, 5000.0, 50.0, 1000.0)
        res = fit_peak(centers, values, 1e6, 5000.0)
        assert res.sigma_ps == pytest.approx(60.0, abs=1e-9)
        assert "sigma" in res.at_bound
        assert res.status == "at_bound"

    def test_peak_just_outside_window_pins_mu(self):
        # reachable from the seed (tail overlaps) but past the allowed range
        centers = grid()
        values = synth(centers, 0.08, 5220.0, 75.0, 1000.0)
        res = fit_peak(centers, values, 1e6, 5000.0)
        assert res.mu_ps == pytest.approx(5200.0, abs=1e-9)
        assert "mu" in res.at_bound

    def test_large_contrast_pins_contrast(self):
        centers = grid()
        values = synth(centers, 0.25, 5000.0, 70.0, 1000.0)
        res = fit_peak(centers, values, 1e6, 5000.0)
        assert res.contrast == pytest.approx(0.10, abs=1e-9)
        assert "contrast" in res.at_bound

    def test_wide_open_constraints_fit_unit_contrast(self):
        wide = FitConstraints(contrast_bounds=(0.0, 1.5), sigma_bounds_ps=(20.0, 120.0))
        centers = grid()
        values = synth(centers, 1.0, 5000.0, 50.0, 1000.0)
        res = fit_peak(centers, values, 1e6, 5000.0, constraints=wide)
        assert res.status == "converged"
        assert res.contrast == pytest.approx(1.0, abs=1e-6)
        assert res.sigma_ps == pytest.approx(50.0, abs=1e-4)

    def test_cost_trace_strictly_decreasing(self):
        rng = np.random.default_rng(3)
        centers = grid()
        values = synth(centers, 0.05, 5080.0, 75.0, 500.0, rng=rng)
        res = fit_peak(centers, values, 500.0, 5000.0)
        trace = np.array(res.cost_trace)
        assert trace.size >= 2
        assert np.all(np.diff(trace) < 0)

    def test_error_scales_with_baseline_counts(self):
        rng = np.random.default_rng(17)
        centers = grid()
        errs = {}
        for b in (100.0, 10000.0):
            values = synth(centers, 0.03, 5000.0, 70.0, b, rng=rng)
            errs[b] = fit_peak(centers, values, b, 5000.0).contrast_err
        ratio = errs[100.0] / errs[10000.0]
        assert ratio == pytest.approx(10.0, rel=0.3)

    def test_rebinning_does_not_move_contrast(self):
        rng = np.random.default_rng(23)
        b = 1000.0
        centers20 = grid(bin_width_ps=20)
        counts20 = rng.poisson(synth(centers20, 0.03, 5000.0, 70.0, b) * b)
        res20 = fit_peak(centers20, counts20 / b, b, 5000.0)
        counts40 = counts20[0::2] + counts20[1::2]
        centers40 = grid(bin_width_ps=40)
        res40 = fit_peak(centers40, counts40 / (2 * b), 2 * b, 5000.0)
        assert abs(res20.contrast - res40.contrast) < res20.contrast_err

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError):
            fit_peak(grid(), np.ones(5), 100.0, 5000.0)


class TestSineTerm:
    def test_ripple_absorbed_by_sine_term(self):
        centers = grid()
        values = synth(centers, 0.04, 5000.0, 70.0, 1e6,
                       sine_amp=0.004, sine_period=8900.0, sine_phase=0.7)
        on = FitConstraints(include_sine=True)
        res = fit_peak(centers, values, 1e6, 5000.0, constraints=on)
        assert res.ok
        assert res.contrast == pytest.approx(0.04, abs=0.002)
        assert res.sine_amplitude == pytest.approx(0.004, rel=0.5)
        assert res.sine_period_ps == pytest.approx(8900.0, rel=0.15)

    def test_sine_off_reports_no_ripple_fields(self):
        centers = grid()
        res = fit_peak(centers, np.ones_like(centers), 1000.0, 5000.0)
        assert res.sine_amplitude == 0.0

    def test_sine_period_bounds_respected(self):
        on = FitConstraints(include_sine=True)
        centers = grid()
        values = synth(centers, 0.03, 5000.0, 70.0, 1e6,
                       sine_amp=0.004, sine_period=8900.0)
        res = fit_peak(centers, values, 1e6, 5000.0, constraints=on)
        lo, hi = on.sine_period_bounds_ps
        assert lo <= res.sine_period_ps <= hi


class TestConstraints:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"sigma_bounds_ps": (80.0, 60.0)},
            {"contrast_bounds": (0.2, 0.1)},
            {"mu_halfrange_ps": -5.0},
            {"sine_period_bounds_ps": (0.0, 100.0)},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            FitConstraints(**kwargs)

    def test_model_helper_matches_result(self):
        centers = grid()
        values = synth(centers, 0.05, 5030.0, 72.0, 1000.0)
        res = fit_peak(centers, values, 1000.0, 5000.0)
        np.testing.assert_allclose(peak_model(centers, res), values, atol=1e-5)


class TestBatchFit:
    def test_batch_over_histogram_set(self):
        cmap = default_channel_map(n_per_arm=2)  # A: 0,1  B: 2,3
        rng = np.random.default_rng(1)
        streams = {
            p: np.sort(rng.integers(0, 40_000_000, size=4000)).astype(np.int64)
            for p in (0, 1, 2)
        }  # pixel 3 missing on purpose
        job = CorrelationJob(pairs=((0, 3), (1, 2)), window_ps=4000, bin_width_ps=20)
        hset = run_all_pairs(streams, job, cmap)
        table = OffsetTable(delay_ps=0.0)
        results = batch_fit(hset, table)
        assert set(results) == {(0, 3), (1, 2)}
        assert results[(0, 3)].status == "no_data"
        assert results[(1, 2)].status in ("converged", "at_bound")

    def test_batch_never_raises_on_dead_histograms(self):
        cmap = default_channel_map(n_per_arm=1)
        streams = {0: np.zeros(0, np.int64), 1: np.zeros(0, np.int64)}
        job = CorrelationJob(pairs=((0, 1),), window_ps=4000, bin_width_ps=20)
        hset = run_all_pairs(streams, job, cmap)
        results = batch_fit(hset, OffsetTable())
        assert results[(0, 1)].status == "failed"
        assert results[(0, 1)].message != ""

    def test_nominal_mu_comes_from_offset_table(self):
        """A pair whose peak sits at the table's predicted center converges."""
        rng = np.random.default_rng(9)
        cmap = default_channel_map(n_per_arm=1)  # A: 0, B: 1
        base = np.sort(rng.integers(0, 10_000_000_000, size=200_000))
        # detector B sees the same events 6150 ps later, with 40 ps jitter
        late = base + 6150 + np.round(rng.normal(0.0, 40.0, base.size)).astype(np.int64)
        streams = {0: base.astype(np.int64), 1: np.sort(late)}
        job = CorrelationJob(pairs=((0, 1),), window_ps=20000, bin_width_ps=20)
        hset = run_all_pairs(streams, job, cmap)
        table = OffsetTable(offsets={1: 1150.0}, delay_ps=5000.0)
        res = batch_fit(hset, table, constraints=FitConstraints(
            contrast_bounds=(0.0, 1e6), sigma_bounds_ps=(1.0, 100.0)))[(0, 1)]
        assert res.ok
        assert res.mu_ps == pytest.approx(6150.0, abs=30.0)

    def test_result_is_dataclass_with_quality_fields(self):
        centers = grid()
        res = fit_peak(centers, np.ones_like(centers), 1000.0, 5000.0)
        assert isinstance(res, FitResult)
        assert res.dof == centers.size - 3
        assert res.chi2 >= 0.0
        assert res.n_iter >= 0
