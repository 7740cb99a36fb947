#!/usr/bin/env python3
"""Tests for the GP surrogate, batch UCB acquisition, constrained DE proposals, trust region and campaigns"""

import logging

import numpy as np
import pytest

from bayes_optimizer import (
    BOSettings,
    CampaignRecord,
    DEConfig,
    Evaluation,
    GaussianProcess,
    GPSurrogate,
    InfeasibleSeedError,
    TrustRegionSettings,
    acquisition,
    evaluate_designs,
    propose_batch,
    resize_box,
    rng_streams,
    run_campaign,
    sample_feasible,
    update_trust_region,
)
from microstructure_geometry import SCENARIOS

UNIT_SQUARE = np.array([[0.0, 1.0], [0.0, 1.0]])


def toy_toughness(x, w):
    return 2.0 - (x[0] - 0.7) ** 2 - (x[1] - 0.4) ** 2 - 0.2 * w * x[0]


def toy_clearance(x):
    return 1.0 - x[0] - x[1]


class QuadraticSurrogate:
    """Deterministic composite samples of a concave quadratic"""

    def __init__(self, peak):
        self.peak = np.asarray(peak)

    def composite_samples(self, batches, base_samples):
        values = 1.0 - np.sum((batches - self.peak) ** 2, axis=-1)
        return np.repeat(values[:, None, :], len(base_samples), axis=1)


@pytest.fixture
def line_surrogate():
    return GPSurrogate.fit(np.array([[0.0], [1.0]]), np.array([[1.0], [3.0]]), np.array([[0.0, 1.0]]),
                           scenarios=(0.0,), rng=np.random.default_rng(0), restarts=2)


class TestGaussianProcess:
    def test_interpolates_training_points(self, line_surrogate):
        mean, var = line_surrogate.predict(np.array([[0.0], [1.0]]))
        np.testing.assert_allclose(mean[:, 0], [1.0, 3.0], atol=1e-6)
        assert np.all(var < 1e-5)

    def test_reverts_to_mean_far_away(self, line_surrogate):
        mean, var = line_surrogate.predict(np.array([[1000.0]]))
        gp = line_surrogate.models[0]
        assert mean[0, 0] == pytest.approx(2.0, abs=1e-6)
        assert var[0, 0] == pytest.approx(gp.variance * gp.y_std ** 2, rel=1e-6)

    def test_joint_moments_match_full_covariance(self, line_surrogate):
        gp = line_surrogate.models[0]
        batch = np.array([[0.2], [0.5], [0.9]])
        mean, cov = gp.predict(batch, full_cov=True)
        joint_mean, joint_cov = gp.joint_moments(batch[None])
        np.testing.assert_allclose(joint_mean[0], mean, atol=1e-12)
        np.testing.assert_allclose(joint_cov[0], cov, atol=1e-12)
        np.testing.assert_allclose(cov, cov.T, atol=1e-12)
        assert np.linalg.eigvalsh(cov).min() > -1e-8

    def test_constant_outputs_fall_back_to_prior(self, caplog):
        gp = GaussianProcess(np.array([[0.1], [0.4], [0.8]]), np.full(3, 2.5))
        with caplog.at_level(logging.WARNING):
            gp.fit(np.random.default_rng(0))
        assert gp.degenerate
        assert "prior hyperparameters" in caplog.text
        mean, _ = gp.predict(np.array([[0.6]]))
        assert mean[0] == pytest.approx(2.5)

    def test_needs_two_distinct_points(self):
        with pytest.raises(ValueError):
            GPSurrogate.fit(np.array([[0.5], [0.5]]), np.array([[1.0], [1.0]]), np.array([[0.0, 1.0]]),
                            scenarios=(0.0,))

    def test_failed_runs_are_skipped(self):
        X = np.array([[0.0], [0.5], [1.0]])
        Y = np.array([[1.0, 2.0], [np.nan, 2.5], [3.0, 3.0]])
        surrogate = GPSurrogate.fit(X, Y, np.array([[0.0, 1.0]]), scenarios=(0.0, 0.5))
        assert len(surrogate.models[0].X) == 2
        assert len(surrogate.models[1].X) == 3


class TestAcquisition:
    def test_zero_beta_at_training_point(self, line_surrogate):
        assert acquisition(line_surrogate, np.array([[0.0]]), beta=0.0) == pytest.approx(1.0, abs=1e-4)

    def test_zero_beta_is_posterior_mean(self, line_surrogate):
        z = np.random.default_rng(3).standard_normal((64, 1, 1))
        base = np.concatenate([z, -z])
        mean, _ = line_surrogate.predict(np.array([[0.5]]))
        assert acquisition(line_surrogate, np.array([[0.5]]), 0.0, base) == pytest.approx(mean[0, 0], abs=1e-10)

    def test_exploration_bonus(self, line_surrogate):
        X = np.array([[0.5]])
        assert acquisition(line_surrogate, X, 4.0) > acquisition(line_surrogate, X, 0.0)

    def test_duplicate_point_adds_nothing(self, line_surrogate):
        base = np.random.default_rng(0).standard_normal((256, 1, 2))
        single = acquisition(line_surrogate, np.array([[0.4]]), 4.0, base)
        double = acquisition(line_surrogate, np.array([[0.4], [0.4]]), 4.0, base)
        assert double == pytest.approx(single, rel=1e-3, abs=1e-6)


class TestProposals:
    def test_de_finds_quadratic_peak(self):
        config = DEConfig(population_factor=15, batch_size=1, maxiter=300, tol=1e-10)
        batch = propose_batch(QuadraticSurrogate([0.3, 0.6]), UNIT_SQUARE, 0.0, config, 0.0,
                              np.zeros((4, 1, 1)), np.random.default_rng(0), clearance_fn=lambda x: 1.0)
        assert batch.shape == (1, 2)
        np.testing.assert_allclose(batch[0], [0.3, 0.6], atol=1e-2)

    def test_batch_is_feasible(self):
        config = DEConfig(population_factor=5, batch_size=2, maxiter=50)
        batch = propose_batch(QuadraticSurrogate([0.8, 0.5]), UNIT_SQUARE, 0.0, config, 0.0,
                              np.zeros((4, 1, 2)), np.random.default_rng(1), clearance_fn=lambda x: 0.5 - x[0])
        assert batch.shape == (2, 2)
        assert np.all(batch[:, 0] <= 0.5)

    def test_seed_sampling_within_bounds(self):
        points = sample_feasible(UNIT_SQUARE, 50, toy_clearance, 0.0, np.random.default_rng(0))
        assert points.shape == (50, 2)
        assert np.all(points.sum(axis=1) <= 1.0)

    def test_infeasible_region(self):
        with pytest.raises(InfeasibleSeedError) as info:
            sample_feasible(UNIT_SQUARE, 5, lambda x: -1.0, 0.0, np.random.default_rng(0), budget_factor=10)
        assert info.value.feasible_fraction == 0.0


class TestTrustRegion:
    settings = TrustRegionSettings(gamma_down=0.7, gamma_up=1.3, floor=0.1)

    def test_contracts_around_center(self):
        box = resize_box(UNIT_SQUARE, np.array([0.5, 0.5]), False, UNIT_SQUARE, self.settings)
        np.testing.assert_allclose(box, [[0.15, 0.85], [0.15, 0.85]])

    def test_box_is_shifted_inside_global_bounds(self):
        box = resize_box(UNIT_SQUARE, np.array([0.95, 0.05]), False, UNIT_SQUARE, self.settings)
        np.testing.assert_allclose(box, [[0.3, 1.0], [0.0, 0.7]])

    def test_edge_floor_and_cap(self):
        small = np.array([[0.45, 0.55], [0.45, 0.55]])
        box = resize_box(small, np.array([0.5, 0.5]), False, UNIT_SQUARE, self.settings)
        np.testing.assert_allclose(box[:, 1] - box[:, 0], 0.1)
        box = resize_box(UNIT_SQUARE, np.array([0.5, 0.5]), True, UNIT_SQUARE, self.settings)
        np.testing.assert_allclose(box, UNIT_SQUARE)

    def test_inverse_factors_restore_edges(self):
        settings = TrustRegionSettings(gamma_down=0.7, gamma_up=1.0 / 0.7, floor=0.1)
        global_bounds = np.array([[0.0, 10.0], [-5.0, 5.0]])
        box = np.array([[2.0, 8.0], [-2.0, 2.0]])
        shrunk = resize_box(box, np.array([5.0, 0.0]), False, global_bounds, settings)
        restored = resize_box(shrunk, np.array([5.0, 0.0]), True, global_bounds, settings)
        np.testing.assert_allclose(restored[:, 1] - restored[:, 0], box[:, 1] - box[:, 0], atol=1e-12)

    def test_recenters_on_incumbent(self):
        record = CampaignRecord(global_bounds=UNIT_SQUARE, bounds=UNIT_SQUARE.copy(), scenarios=(0.0,))
        record.evaluations = [Evaluation(0, [0.2, 0.2], {0.0: 1.0}), Evaluation(1, [0.6, 0.4], {0.0: 2.0})]
        box = update_trust_region(record, False, self.settings)
        np.testing.assert_allclose(box.mean(axis=1), [0.6, 0.4])

    def test_disabled_or_empty_keeps_bounds(self):
        record = CampaignRecord(global_bounds=UNIT_SQUARE, bounds=UNIT_SQUARE.copy(), scenarios=(0.0,))
        np.testing.assert_allclose(update_trust_region(record, False), UNIT_SQUARE)
        record.evaluations = [Evaluation(0, [0.2, 0.2], {0.0: 1.0})]
        np.testing.assert_allclose(update_trust_region(record, False, TrustRegionSettings(enabled=False)),
                                   UNIT_SQUARE)


class TestRecord:
    def test_incumbent_ignores_incomplete_designs(self):
        record = CampaignRecord(global_bounds=UNIT_SQUARE, bounds=UNIT_SQUARE.copy(), scenarios=(0.0, 0.5))
        record.evaluations = [
            Evaluation(0, [0.1, 0.1], {0.0: 1.0, 0.5: 0.8}),
            Evaluation(1, [0.2, 0.2], {0.0: 5.0, 0.5: None}, errors={0.5: "solver failed"}),
            Evaluation(2, [0.3, 0.3], {0.0: 0.8, 0.5: 1.4}),
        ]
        assert record.best.design_id == 0
        assert record.best_value == pytest.approx(0.8)
        X, Y = record.training_data()
        assert X.shape == (3, 2)
        assert np.isnan(Y[1, 1])

    def test_empty_record(self):
        record = CampaignRecord(global_bounds=UNIT_SQUARE, bounds=UNIT_SQUARE.copy())
        assert record.best is None
        assert record.best_value == -np.inf

    def test_failed_simulations_are_recorded(self):
        def evaluator(x, w):
            if w == 0.5:
                raise RuntimeError("backtracking exhausted")
            return np.nan if w == 0.75 else 1.0

        results = evaluate_designs(evaluator, np.array([[0.1, 0.2]]), SCENARIOS)
        values, errors = results[0]
        assert values == {0.0: 1.0, 0.25: 1.0, 0.5: None, 0.75: None}
        assert "backtracking exhausted" in errors[0.5]


def test_rng_streams_are_reproducible():
    first, again, later = rng_streams(7, 3), rng_streams(7, 3), rng_streams(7, 4)
    assert first["de"].random() == again["de"].random()
    assert first["mc"].random() != later["mc"].random()
    assert first["init"].random() != first["fit"].random()


CAMPAIGN_SETTINGS = BOSettings(n_initial=10, iterations=25, beta=4.0, n_mc=64, gp_restarts=1)
CAMPAIGN_DE = DEConfig(population_factor=2, batch_size=2, maxiter=20)


def test_campaign_reaches_grid_optimum(tmp_path):
    record = run_campaign(toy_toughness, global_bounds=UNIT_SQUARE, z_min=0.0, budget=25,
                          settings=CAMPAIGN_SETTINGS, de=CAMPAIGN_DE, clearance_fn=toy_clearance, seed=5,
                          checkpoint=tmp_path / "campaign.yaml")
    assert len(record.evaluations) == 60
    assert all(toy_clearance(np.array(e.x)) >= 0.0 for e in record.evaluations)

    grid = np.linspace(0.0, 1.0, 200)
    g0, g1 = np.meshgrid(grid, grid)
    worst = np.min([toy_toughness((g0, g1), w) for w in SCENARIOS], axis=0)
    optimum = worst[g0 + g1 <= 1.0].max()
    assert record.best_value >= 0.98 * optimum

    best = record.convergence_frame()["best"].to_numpy()
    assert np.all(np.diff(best) >= 0.0)
    assert (tmp_path / "campaign.yaml").exists()


def test_resumed_campaign_matches_uninterrupted_run(tmp_path):
    settings = BOSettings(n_initial=6, n_mc=32, gp_restarts=1)
    de = DEConfig(population_factor=2, batch_size=2, maxiter=10)
    kwargs = dict(global_bounds=UNIT_SQUARE, z_min=0.0, settings=settings, de=de, clearance_fn=toy_clearance, seed=11)

    full = run_campaign(toy_toughness, budget=3, **kwargs)
    run_campaign(toy_toughness, budget=2, checkpoint=tmp_path / "campaign.yaml", **kwargs)
    resumed = run_campaign(toy_toughness, budget=3, record=CampaignRecord.load(tmp_path / "campaign.yaml"), **kwargs)

    assert resumed.iteration == full.iteration == 3
    np.testing.assert_array_equal(np.array([e.x for e in resumed.evaluations]),
                                  np.array([e.x for e in full.evaluations]))
    np.testing.assert_allclose(resumed.bounds, full.bounds)
