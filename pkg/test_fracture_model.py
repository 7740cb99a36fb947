#!/usr/bin/env python3
"""Tests for the degradation, crack geometric function and elastic laws"""

import math

import numpy as np
import pytest

from fracture_model import (
    MaterialParams,
    degradation,
    elastic_energy_density,
    geometric,
    interface_energy,
    lame,
    normalization_constant,
    reference_damage_profile,
    stress,
)


@pytest.fixture
def material():
    return MaterialParams()


class TestDegradation:
    def test_end_values(self, material):
        g, _, _ = degradation(np.array([0.0, 1.0]), material)
        np.testing.assert_allclose(g, [1.0, 0.0], atol=1e-14)

    def test_midpoint(self, material):
        g, _, _ = degradation(0.5, material)
        assert float(g) == pytest.approx(0.207481, abs=1e-6)

    def test_monotone_decreasing(self, material):
        _, dg, _ = degradation(np.linspace(0.0, 0.99, 100), material)
        assert np.all(dg < 0.0)

    @pytest.mark.parametrize("alpha", [0.05, 0.3, 0.6, 0.9])
    def test_derivatives_match_finite_differences(self, material, alpha):
        h = 1e-6
        g, dg, ddg = degradation(alpha, material)
        g_plus, dg_plus, _ = degradation(alpha + h, material)
        g_minus, dg_minus, _ = degradation(alpha - h, material)
        assert float(dg) == pytest.approx(float(g_plus - g_minus) / (2 * h), rel=1e-6)
        assert float(ddg) == pytest.approx(float(dg_plus - dg_minus) / (2 * h), rel=1e-5)


class TestGeometricFunction:
    def test_values(self):
        w, dw = geometric(np.array([0.0, 0.5, 1.0]))
        np.testing.assert_allclose(w, [0.0, 0.75, 1.0])
        np.testing.assert_allclose(dw, [2.0, 1.0, 0.0])

    def test_normalization_constant_is_pi(self):
        assert normalization_constant() == pytest.approx(math.pi, abs=1e-10)


class TestElasticity:
    def test_lame_constants(self):
        lam, mu = lame(1.0, 0.3)
        assert lam == pytest.approx(0.576923, rel=1e-5)
        assert mu == pytest.approx(0.384615, rel=1e-5)

    def test_isotropic_strain_energy(self):
        psi = elastic_energy_density(0.01 * np.eye(2), 1.0, 0.3)
        assert float(psi) == pytest.approx(1.92308e-4, rel=1e-5)

    def test_energy_is_quadratic(self, rng):
        strain = rng.normal(size=(5, 2, 2))
        strain = 0.5 * (strain + np.swapaxes(strain, 1, 2))
        np.testing.assert_allclose(elastic_energy_density(2.0 * strain, 1.0, 0.3),
                                   4.0 * elastic_energy_density(strain, 1.0, 0.3))

    def test_stress_is_symmetric(self, rng):
        strain = rng.normal(size=(2, 2))
        strain = 0.5 * (strain + strain.T)
        sigma = stress(strain, 5.0, 0.3)
        np.testing.assert_allclose(sigma, sigma.T)

    def test_interface_spring(self):
        energy, traction = interface_energy(np.array([0.01, 0.0]), 100.0)
        assert float(energy) == pytest.approx(0.005)
        np.testing.assert_allclose(traction, [1.0, 0.0])


class TestReferenceProfile:
    def test_values(self):
        eps = 0.5
        values = reference_damage_profile(np.array([0.0, math.pi * eps / 4, math.pi * eps / 2, 2.0]), eps)
        np.testing.assert_allclose(values, [1.0, 0.292893, 0.0, 0.0], atol=1e-6)


class TestMaterialParams:
    def test_rejects_non_positive_length_scale(self):
        with pytest.raises(ValueError):
            MaterialParams(eps=0.0)

    def test_rejects_incompressible_poisson_ratio(self):
        with pytest.raises(ValueError):
            MaterialParams(nu=0.5)
