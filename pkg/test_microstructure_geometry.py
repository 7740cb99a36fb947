#!/usr/bin/env python3
"""Tests for design vectors, inclusion layouts, level sets and clearance"""

import math

import numpy as np
import pytest

from microstructure_geometry import (
    DESIGN_BOUNDS,
    RVE_WIDTH,
    SETUP_A,
    SETUP_B,
    DesignVector,
    Ellipse,
    InclusionLayout,
    Rectangle,
    build_layout,
    clearance,
    design_clearance,
    is_feasible,
    level_set,
    pair_clearances,
    tile_layout,
)


@pytest.fixture
def domain():
    return Rectangle.centered_on_crack(100.0, 30.0)


class TestDesignVector:
    def test_presets_within_bounds(self):
        assert SETUP_A.within_bounds()
        assert SETUP_B.within_bounds()

    def test_array_order(self):
        x = DesignVector.from_array(np.arange(9.0))
        assert x.x1 == 0.0 and x.x9 == 8.0
        np.testing.assert_array_equal(x.to_array(), np.arange(9.0))

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            DesignVector.from_array([0.0] * 8)

    def test_out_of_bounds(self):
        assert not SETUP_A.with_values(x9=20.0).within_bounds()
        assert DESIGN_BOUNDS.shape == (9, 2)


class TestBuildLayout:
    def test_setup_a_is_circles(self, domain):
        layout = build_layout(SETUP_A, 0.0, domain)
        assert len(layout) > 0
        assert all(e.radii == (2.5, 2.5) for e in layout.ellipses)
        assert layout.rve == (RVE_WIDTH, 6.0)

    def test_crack_offset_shifts_lattice(self, domain):
        x = SETUP_A.with_values(x9=10.0)
        base = build_layout(x, 0.0, domain)
        shifted = build_layout(x, 0.5, domain)
        for a, b in zip(base.tile, shifted.tile):
            assert b.center[0] == pytest.approx(a.center[0])
            assert b.center[1] == pytest.approx(a.center[1] + 5.0)

    def test_covers_domain(self, domain):
        layout = build_layout(SETUP_A, 0.25, domain)
        centers = np.array([e.center for e in layout.ellipses])
        assert centers[:, 0].min() <= domain.x0 and centers[:, 0].max() >= domain.x1
        assert centers[:, 1].min() <= domain.y0 and centers[:, 1].max() >= domain.y1

    def test_rejects_unknown_offset(self, domain):
        with pytest.raises(ValueError):
            build_layout(SETUP_A, 0.3, domain)

    def test_rejects_out_of_bounds_design(self, domain):
        with pytest.raises(ValueError):
            build_layout(SETUP_A.with_values(x3=1.0), 0.0, domain)

    def test_interior_strip(self, domain):
        layout = build_layout(SETUP_A, 0.0, domain).interior(domain, 1.5)
        assert len(layout) > 0
        for e in layout.ellipses:
            hx, hy = e.half_extents()
            assert e.center[0] - hx >= domain.x0 + 1.5
            assert e.center[1] + hy <= domain.y1 - 1.5


class TestLevelSet:
    def test_circle_distances(self):
        layout = InclusionLayout.from_ellipses([Ellipse(center=(0.0, 0.0), radii=(2.5, 2.5))])
        assert level_set(layout, np.array([0.0, 0.0])) == pytest.approx(-2.5)
        assert level_set(layout, np.array([2.5, 0.0])) == pytest.approx(0.0, abs=1e-12)
        assert level_set(layout, np.array([4.0, 0.0])) == pytest.approx(1.5)

    def test_zero_on_ellipse_boundary(self):
        ellipse = Ellipse(center=(1.0, 2.0), radii=(3.0, 1.5), orientation=0.4)
        values = ellipse.level_set(ellipse.boundary_points(64))
        np.testing.assert_allclose(values, 0.0, atol=1e-9)

    def test_sign_matches_containment(self, rng):
        ellipse = Ellipse(center=(0.0, 0.0), radii=(4.0, 2.0), orientation=0.7)
        points = rng.uniform(-6.0, 6.0, size=(200, 2))
        inside = ellipse.contains(points)
        assert np.all(ellipse.level_set(points)[inside] < 0.0)
        assert np.all(ellipse.level_set(points)[~inside] >= 0.0)

    def test_vectorized_over_points(self):
        layout = InclusionLayout.from_ellipses([Ellipse(center=(0.0, 0.0), radii=(1.0, 1.0)),
                                                Ellipse(center=(10.0, 0.0), radii=(1.0, 1.0))])
        values = level_set(layout, np.array([[0.0, 0.0], [10.0, 2.0], [5.0, 0.0]]))
        np.testing.assert_allclose(values, [-1.0, 1.0, 4.0])


class TestClearance:
    def test_separated_circles(self):
        layout = InclusionLayout.from_ellipses([Ellipse(center=(0.0, 0.0), radii=(2.5, 2.5)),
                                                Ellipse(center=(10.0, 0.0), radii=(2.5, 2.5))])
        assert clearance(layout) == pytest.approx(5.0, abs=1e-3)

    def test_coincident_circles_report_penetration(self):
        circle = Ellipse(center=(0.0, 0.0), radii=(2.5, 2.5))
        layout = InclusionLayout.from_ellipses([circle, circle])
        assert clearance(layout) == pytest.approx(-5.0, abs=1e-3)

    def test_setup_a_pair_classes(self):
        gaps = pair_clearances(tile_layout(SETUP_A))
        assert gaps["set1-set1"] == pytest.approx(1.0, abs=1e-3)
        assert gaps["set2-set2"] == pytest.approx(1.0, abs=1e-3)
        assert gaps["set1-set2"] == pytest.approx(math.hypot(7.5, 3.0) - 5.0, abs=1e-3)

    def test_setup_a_clearance(self):
        assert design_clearance(SETUP_A) == pytest.approx(1.0, abs=1e-3)

    def test_clearance_ignores_crack_offset(self):
        x = SETUP_A.with_values(x9=10.0)
        gaps = [clearance(build_layout(x, w, Rectangle(0.0, 0.0, RVE_WIDTH, 10.0))) for w in (0.0, 0.5)]
        assert gaps[0] == pytest.approx(gaps[1], abs=1e-9)

    def test_single_inclusion_has_no_clearance(self):
        with pytest.raises(ValueError):
            clearance(InclusionLayout.from_ellipses([Ellipse(center=(0.0, 0.0), radii=(1.0, 1.0))]))

    def test_feasibility(self):
        assert is_feasible(SETUP_A, 0.5)
        assert not is_feasible(SETUP_A, 1.5)
        assert not is_feasible(SETUP_A.with_values(x1=0.0, x2=0.0), 0.0)
