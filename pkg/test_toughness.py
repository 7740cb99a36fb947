#!/usr/bin/env python3
"""Tests for J traces, effective toughness and the worst-case objective"""

import math

import numpy as np
import pytest

from microstructure_geometry import SCENARIOS
from toughness import (
    EmptyWindowError,
    JSample,
    JTrace,
    MissingScenarioError,
    ToughnessReport,
    effective_toughness,
    read_trace,
    smoothed_j,
    worst_case_objective,
    write_trace,
)


def make_trace(tip_x, J):
    trace = JTrace()
    for k, (x, j) in enumerate(zip(tip_x, J)):
        trace.append(JSample(step=k + 1, t=0.01 * k, tip_x=float(x), tip_y=0.0, crack_length=float(x), J=float(j)))
    return trace


class TestJTrace:
    def test_rejects_non_finite_j(self):
        trace = JTrace()
        with pytest.raises(ValueError):
            trace.append(JSample(step=1, t=0.0, tip_x=1.0, tip_y=0.0, crack_length=1.0, J=math.nan))

    def test_rejects_repeated_step(self):
        trace = make_trace([1.0], [1.0])
        with pytest.raises(ValueError):
            trace.append(JSample(step=1, t=0.1, tip_x=2.0, tip_y=0.0, crack_length=2.0, J=1.0))

    def test_backtracked_step_may_repeat_time(self):
        trace = make_trace([10.0], [1.0])
        trace.append(JSample(step=2, t=0.0, tip_x=11.0, tip_y=0.0, crack_length=11.0, J=1.0))
        assert [s.step for s in trace.samples] == [1, 2]

    def test_csv_carries_config_hash(self, tmp_path):
        trace = make_trace(np.linspace(50, 60, 5), np.ones(5))
        path = write_trace(trace, tmp_path / "trace.csv", config_hash="abc123def456")
        assert path.read_text().splitlines()[0] == "# config_hash: abc123def456"
        loaded = read_trace(path)
        assert len(loaded) == 5
        np.testing.assert_allclose(loaded.J, trace.J)


class TestEffectiveToughness:
    def test_constant_trace(self):
        trace = make_trace(np.linspace(40, 90, 51), np.full(51, 2.3))
        report = effective_toughness(trace, (50.0, 80.0), half_width=3)
        assert report.G_eff == pytest.approx(2.3, abs=1e-12)
        assert report.n_samples == 31

    def test_single_spike_is_averaged(self):
        J = np.ones(41)
        J[20] = 10.0
        trace = make_trace(np.linspace(45, 85, 41), J)
        report = effective_toughness(trace, (50.0, 80.0), half_width=3)
        assert report.G_eff == pytest.approx((10.0 + 6.0) / 7.0, abs=1e-12)

    def test_smoothing_shrinks_at_trace_ends(self):
        trace = make_trace([1.0, 2.0, 3.0], [1.0, 2.0, 6.0])
        smoothed = smoothed_j(trace, half_width=3)
        np.testing.assert_allclose(smoothed, [3.0, 3.0, 3.0])

    def test_samples_outside_window_do_not_leak(self):
        tip_x = np.arange(47.0, 81.0)
        J = np.where(tip_x < 50.0, 20.0, 1.0)
        report = effective_toughness(make_trace(tip_x, J), (50.0, 80.0), half_width=3)
        assert report.n_samples == 31
        assert report.G_eff == pytest.approx(1.0, abs=1e-12)

    def test_window_edges_use_shrunken_average(self):
        tip_x = np.arange(50.0, 81.0)
        J = np.ones(31)
        J[-1] = 8.0
        padded = make_trace(np.concatenate([tip_x, [81.0, 82.0, 83.0]]), np.concatenate([J, [50.0, 50.0, 50.0]]))
        report = effective_toughness(padded, (50.0, 80.0), half_width=3)
        assert report.G_eff == pytest.approx((8.0 + 3.0) / 4.0, abs=1e-12)

    def test_tip_never_reaches_window(self):
        trace = make_trace(np.linspace(5, 40, 10), np.ones(10))
        with pytest.raises(EmptyWindowError):
            effective_toughness(trace, (50.0, 80.0))

    def test_empty_trace(self):
        with pytest.raises(EmptyWindowError):
            effective_toughness(JTrace(), (50.0, 80.0))

    def test_report_rejects_negative_toughness(self):
        with pytest.raises(ValueError):
            ToughnessReport(G_eff=-0.1, window=(50.0, 80.0))


class TestWorstCase:
    def test_minimum_over_scenarios(self):
        values = dict(zip(SCENARIOS, [1.2, 0.9, 1.5, 1.1]))
        assert worst_case_objective(values) == pytest.approx(0.9)

    def test_accepts_reports(self):
        reports = {w: ToughnessReport(G_eff=1.0 + w, window=(50.0, 80.0)) for w in SCENARIOS}
        assert worst_case_objective(reports) == pytest.approx(1.0)

    def test_missing_scenario(self):
        with pytest.raises(MissingScenarioError):
            worst_case_objective({0.0: 1.0, 0.25: 1.0, 0.5: 1.0})

    def test_failed_scenario(self):
        with pytest.raises(MissingScenarioError):
            worst_case_objective({0.0: 1.0, 0.25: None, 0.5: 1.0, 0.75: 1.0})
