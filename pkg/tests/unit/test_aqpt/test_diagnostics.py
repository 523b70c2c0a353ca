import json

import numpy as np
import pytest
from scipy import stats

from aqpt.apparatus import MODE_LOSSY, Calibration, CountRecord, MeasurementConfig
from aqpt.channels import ChannelSpec, make_channel, waveplate_chi
from aqpt.diagnostics import (
    ConvergenceTrace,
    TracePoint,
    aggregate_traces,
    chi_squared,
    fit_report,
    moving_average,
    plateau_detect,
    power_law_fit,
    r_dd,
)
from aqpt.errors import ValidationError
from aqpt.utils4tests import ALIGNED

GRID = np.round(10 ** (np.arange(40, 121) / 20.0))


def tp_record(cfg, n0, n1):
    return CountRecord(cfg, (n0, n1), b=n0 + n1)


class TestChiSquared:
    def setup_method(self):
        # p̂ = 1/2 for both outcomes at the aligned configuration
        self.half = waveplate_chi(45.0, np.pi / 2)

    def test_exact_counts_give_zero(self):
        assert chi_squared(tp_record(ALIGNED, 50, 50), self.half) == pytest.approx(0.0)

    def test_known_value(self):
        assert chi_squared(tp_record(ALIGNED, 60, 40), self.half) == pytest.approx(4.0)

    def test_mean_under_a_wrong_estimate(self):
        """
        With true p = 0.6 and p̂ = 0.5 at b = 100 the expected statistic is
        (b·(p − p̂)² + p(1 − p)) / (p̂(1 − p̂)) = 4.96.
        """
        k = np.arange(101)
        values = np.array(
            [chi_squared(tp_record(ALIGNED, n, 100 - n), self.half) for n in k]
        )
        expected = np.dot(stats.binom.pmf(k, 100, 0.6), values)
        assert expected == pytest.approx(4.96, abs=1e-9)

        draws = np.random.default_rng(0).binomial(100, 0.6, size=20000)
        sample = values[draws]
        tolerance = 3 * sample.std() / np.sqrt(draws.size)
        assert sample.mean() == pytest.approx(4.96, abs=tolerance)

    def test_mean_under_the_right_estimate_is_one(self):
        k = np.arange(1001)
        values = np.array(
            [chi_squared(tp_record(ALIGNED, n, 1000 - n), self.half) for n in k]
        )
        expected = np.dot(stats.binom.pmf(k, 1000, 0.5), values)
        assert expected == pytest.approx(1.0, abs=1e-9)

    def test_outcome_swap_invariance(self):
        """Turning the measurement HWP by 45° exchanges the two outcomes."""
        chi = make_channel(ChannelSpec.waveplate(30.0, 1.0))
        cfg = MeasurementConfig(10.0, 20.0, 30.0, 40.0)
        swapped = MeasurementConfig(10.0, 20.0, 30.0, 85.0)
        assert chi_squared(tp_record(cfg, 70, 30), chi) == pytest.approx(
            chi_squared(tp_record(swapped, 30, 70), chi)
        )

    def test_deterministic_outcome_is_floored(self):
        identity = make_channel(ChannelSpec.identity())
        value = chi_squared(tp_record(ALIGNED, 99, 1), identity)
        assert np.isfinite(value)
        assert value > 1e6

    def test_empty_block(self):
        assert chi_squared(tp_record(ALIGNED, 0, 0), self.half) == 0.0

    def test_lossy_record_uses_detection_rates(self):
        identity = make_channel(ChannelSpec.identity())
        cfg = MeasurementConfig(prep_hwp=22.5)
        rec = CountRecord(cfg, (30, 10), mode=MODE_LOSSY, t=1.0)
        value = chi_squared(rec, identity, Calibration((100.0, 100.0)))
        assert value == pytest.approx(10.0)

    def test_lossy_record_with_unequal_detectors(self):
        identity = make_channel(ChannelSpec.identity())
        cfg = MeasurementConfig(prep_hwp=22.5)
        rec = CountRecord(cfg, (30, 10), mode=MODE_LOSSY, t=1.0)
        # p̂ = (0.75, 0.25) matches the counts exactly
        value = chi_squared(rec, identity, Calibration((300.0, 100.0)))
        assert value == pytest.approx(0.0)


class TestPlateauDetect:
    def test_flat_series_hits_first_eligible_point(self):
        points = [(n, 1.0) for n in GRID[:20]]
        # 5-point smoothing, then 5 averaged slopes
        assert plateau_detect(points) == GRID[9]

    def test_pure_power_law_never_plateaus(self):
        assert plateau_detect([(n, 1.0 / n) for n in GRID]) is None

    def test_short_trace(self):
        assert plateau_detect([(n, 1.0) for n in GRID[:5]]) is None
        assert plateau_detect([(n, 1.0) for n in GRID[:9]]) is None

    def test_offset_power_law(self):
        """
        The local slope of 1 + 1000/N equals −0.25 at N = 3000; detection
        lands within a factor 3 of it.
        """
        points = [(n, 1.0 + 1000.0 / n) for n in GRID]
        n_star = plateau_detect(points)
        assert 1000.0 <= n_star <= 9000.0

    def test_threshold_monotonicity(self):
        points = [(n, 1.0 + 1000.0 / n) for n in GRID]
        loose = plateau_detect(points, slope_thresh=-0.5)
        strict = plateau_detect(points, slope_thresh=-0.1)
        assert loose <= strict

    def test_missing_values_are_skipped(self):
        points = [(n, None if i % 7 == 3 else 1.0) for i, n in enumerate(GRID[:30])]
        assert plateau_detect(points) is not None

    def test_moving_average(self):
        np.testing.assert_allclose(moving_average([1, 2, 3, 4], 2), [1.5, 2.5, 3.5])
        assert moving_average([1, 2], 3).size == 0
        with pytest.raises(ValidationError):
            moving_average([1.0], 0)


class TestPowerLawFit:
    def test_exact_power_law(self):
        fit = power_law_fit([(n, 3.0 * n**-0.9) for n in GRID])
        assert fit.C == pytest.approx(3.0, rel=1e-9)
        assert fit.alpha == pytest.approx(-0.9, abs=1e-9)
        assert fit.stderr_alpha == pytest.approx(0.0, abs=1e-9)
        assert fit.n_points == GRID.size

    def test_equivariance(self):
        rng = np.random.default_rng(4)
        points = [
            (n, 2.0 * n**-0.6 * np.exp(0.05 * rng.standard_normal())) for n in GRID
        ]
        base = power_law_fit(points)
        scaled_y = power_law_fit([(n, 7.0 * y) for n, y in points])
        scaled_n = power_law_fit([(10.0 * n, y) for n, y in points])
        assert scaled_y.C == pytest.approx(7.0 * base.C, rel=1e-9)
        assert scaled_y.alpha == pytest.approx(base.alpha, abs=1e-12)
        assert scaled_n.alpha == pytest.approx(base.alpha, abs=1e-12)

    def test_noisy_recovery(self):
        rng = np.random.default_rng(9)
        inside = 0
        for _ in range(100):
            points = [
                (n, 3.0 * n**-0.9 * np.exp(0.05 * rng.standard_normal()))
                for n in GRID
            ]
            fit = power_law_fit(points)
            inside += abs(fit.alpha + 0.9) <= 3.0 * fit.stderr_alpha
        assert inside >= 95

    def test_range(self):
        points = [(n, 1.0 / n) for n in GRID[:20]] + [(n, 5.0) for n in GRID[20:]]
        fit = power_law_fit(points, n_range=(GRID[0], GRID[19]))
        assert fit.alpha == pytest.approx(-1.0, abs=1e-9)
        assert fit.range == (GRID[0], GRID[19])

    def test_too_few_points(self):
        with pytest.raises(ValidationError):
            power_law_fit([(100, 1.0), (200, 0.5)])
        with pytest.raises(ValidationError):
            power_law_fit([(100, 1.0), (100, 0.5), (100, 0.2)])
        with pytest.raises(ValidationError):
            power_law_fit([(n, 1.0 / n) for n in GRID], n_range=(10.0, 5.0))

    def test_report(self):
        fit = power_law_fit([(n, 3.0 * n**-0.9) for n in GRID])
        report = json.loads(fit_report(fit))
        keys = {"C", "alpha", "stderr_C", "stderr_alpha", "n_points", "range"}
        assert set(report) == keys
        assert report["range"] == [GRID[0], GRID[-1]]


def test_r_dd():
    assert r_dd(0.01, 0.01) == pytest.approx(1.0)
    assert r_dd(0.04, 0.01) == pytest.approx(4.0)
    assert r_dd(None, 0.01) is None
    assert r_dd(0.01, 1e-16) is None


class TestTraces:
    def _trace(self, scale):
        return ConvergenceTrace(
            TracePoint(
                N=n, dist_size=scale / n, chi2_norm=1.0, ess=100.0, d2_truth=scale / n
            )
            for n in (100, 200, 500)
        )

    def test_strictly_increasing_n(self):
        trace = self._trace(1.0)
        with pytest.raises(ValidationError):
            trace.append(TracePoint(N=500, dist_size=0.1, chi2_norm=1.0, ess=1.0))

    def test_jsonl_lines(self):
        line = self._trace(1.0).to_jsonl().splitlines()[0]
        order = ["N", "d2_truth", "dist_size", "chi2_norm", "r_dd", "ess"]
        assert list(json.loads(line)) == order
        assert json.loads(line)["r_dd"] is None

    def test_write_and_read(self, tmp_path):
        trace = self._trace(2.0)
        path = str(tmp_path / "trace.jsonl")
        trace.write(path)
        again = ConvergenceTrace.read(path)
        assert again.to_jsonl() == trace.to_jsonl()
        np.testing.assert_array_equal(again.n_values, [100, 200, 500])

    def test_read_errors(self, tmp_path):
        with pytest.raises(ValidationError):
            ConvergenceTrace.read(str(tmp_path / "missing.jsonl"))
        with pytest.raises(ValidationError):
            ConvergenceTrace.from_jsonl('{"N": 1}\n')
        with pytest.raises(ValidationError):
            ConvergenceTrace.from_jsonl("not json\n")

    def test_column_and_series(self):
        trace = self._trace(1.0)
        assert np.isnan(trace.column("r_dd")).all()
        assert trace.series("dist_size")[0] == (100, 0.01)
        with pytest.raises(ValidationError):
            trace.column("nope")

    def test_aggregation(self):
        rows = aggregate_traces([self._trace(1.0), self._trace(3.0)])
        assert [row["N"] for row in rows] == [100, 200, 500]
        first = rows[0]
        assert first["n_runs"] == 2
        assert first["dist_size"] == pytest.approx(0.02)
        assert first["dist_size_stderr"] == pytest.approx(0.01)
        assert first["r_dd"] is None

    def test_single_run_aggregation_is_the_run(self):
        trace = self._trace(1.0)
        rows = aggregate_traces([trace])
        for row, point in zip(rows, trace):
            assert row["d2_truth"] == pytest.approx(point.d2_truth)
            assert row["d2_truth_stderr"] == 0.0

    def test_nothing_to_aggregate(self):
        with pytest.raises(ValidationError):
            aggregate_traces([])
