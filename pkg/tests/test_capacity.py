import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from capdrum import geometry as G
from capdrum.capacity import (
    ball_potential,
    capacity_grid,
    capacity_wos,
    layer_potential,
    layer_volume,
)
from capdrum.constants import InvalidParameterError, ball_capacity, fundamental_solution

FOUR_PI = 4 * math.pi


def two_sphere_capacity(a, d, terms=60):
    """Two equal conducting spheres at one potential, by image charges (cosh b = d / 2a)."""
    b = math.acosh(d / (2 * a))
    s = sum((-1) ** (k + 1) / math.sinh(k * b) for k in range(1, terms))
    return FOUR_PI * 2 * a * math.sinh(b) * s


def test_image_series_limits():
    # far apart: close to twice a single ball, first correction 1/(1 + a/d)
    assert two_sphere_capacity(1, 1e4) == pytest.approx(8 * math.pi, rel=2e-4)
    assert two_sphere_capacity(1, 10) == pytest.approx(8 * math.pi / 1.1, rel=2e-3)


@pytest.fixture(scope="module")
def ball16():
    mask = G.ball_mask(G.Ball((0, 0, 0), 1.0), 1 / 16)
    est, field_ = capacity_grid(mask)
    return mask, est, field_


def test_ball_grid_h16(ball16):
    _, est, _ = ball16
    assert est.value == pytest.approx(FOUR_PI, rel=0.05)
    # the coarse comparison brackets the error
    assert abs(est.value - FOUR_PI) <= est.error_indicator + 0.02 * FOUR_PI
    assert est.value <= ball_capacity(3, est.details["hull_radius"])


def test_potential_invariants(ball16):
    mask, est, field_ = ball16
    assert field_.values.min() >= 0 and field_.values.max() <= 1
    assert est.details["max_principle_violation"] < 1e-6
    assert est.details["residual"] <= 1e-8
    on_mask = field_.on_grid(mask)[mask.occupancy]
    assert np.all(on_mask == 1.0)


def test_matched_far_field(ball16):
    _, est, _ = ball16
    # the outer data scale converges to the capacity itself
    s = est.details["solve"]
    assert s["matched_scale"] == pytest.approx(est.value, rel=0.02)


def test_empty_mask():
    m = G.CompactMask(np.zeros(3), 0.1, np.zeros((3, 3, 3), bool))
    est, field_ = capacity_grid(m)
    assert est.value == 0 and field_ is None
    assert capacity_wos(m, 10).value == 0


def test_bad_arguments(ball16):
    mask = ball16[0]
    with pytest.raises(InvalidParameterError):
        capacity_grid(mask, outer_factor=2)
    with pytest.raises(InvalidParameterError):
        capacity_wos(mask, 0)
    with pytest.raises(InvalidParameterError):
        capacity_wos(mask, 10, probe_radii=(1.1, 3.0))


def test_single_cell_warning():
    occ = np.zeros((1, 1, 1), bool)
    occ[0, 0, 0] = True
    est, _ = capacity_grid(G.CompactMask(np.zeros(3), 0.1, occ), error_estimate=False)
    assert "degenerate-mask" in est.warnings
    assert 0 < est.value < ball_capacity(3, 0.1)


def test_two_distant_balls():
    h = 1 / 16
    spec = G.union(G.ball((-5, 0, 0), 1.0), G.ball((5, 0, 0), 1.0))
    mask = G.compact_mask(spec, h)
    est, _ = capacity_grid(mask, error_estimate=False)
    exact = two_sphere_capacity(1.0, 10.0)
    assert est.value == pytest.approx(exact, rel=0.03)
    # interaction lowers the capacity below twice a single ball
    assert est.value < 8 * math.pi


def test_cube_grid_vs_wos():
    h = 1 / 16
    mask = G.compact_mask(G.box((0, 0, 0), (1, 1, 1)), h)
    grid, _ = capacity_grid(mask)
    wos = capacity_wos(mask, 20000, seed=1)
    # cube of side 1 (the cell centres span [0,1]^3): 4 pi * 0.6607
    assert grid.value == pytest.approx(FOUR_PI * 0.66068, rel=0.04)
    assert abs(grid.value - wos.value) <= 3 * math.hypot(grid.error_indicator, wos.error_indicator)


def test_wos_deterministic():
    mask = G.ball_mask(G.Ball((0, 0, 0), 0.5), 1 / 8)
    a = capacity_wos(mask, 3000, seed=7, batch=1000)
    b = capacity_wos(mask, 3000, seed=7, batch=1000)
    c = capacity_wos(mask, 3000, seed=8, batch=1000)
    assert a.value == b.value and a.error_indicator == b.error_indicator
    assert a.value != c.value


def test_grid_scaling():
    occ = G.ball_mask(G.Ball((0, 0, 0), 0.5), 1 / 8).occupancy
    a, _ = capacity_grid(G.CompactMask(np.zeros(3), 1 / 8, occ), error_estimate=False)
    b, _ = capacity_grid(G.CompactMask(np.zeros(3), 1 / 4, occ), error_estimate=False)
    assert b.value == pytest.approx(2 * a.value, rel=1e-6)


def test_grid_monotone_nested_balls():
    h = 1 / 16
    vals = [capacity_grid(G.ball_mask(G.Ball((0, 0, 0), r), h), error_estimate=False)[0].value
            for r in (0.25, 0.5, 0.75)]
    assert vals[0] < vals[1] < vals[2]


def test_ball_potential_values():
    assert ball_potential(1.0, 1.0, 3) == 1.0
    assert ball_potential(1.0, 2.0, 3) == 0.5
    assert ball_potential(1.0, 1e12, 3) < 1e-11
    with pytest.raises(InvalidParameterError):
        ball_potential(0.0, 1.0, 3)


def test_layer_potential_branches():
    # hand evaluation of the three branches at n = 3, r1 = 1/2, r2 = 1
    assert layer_potential(0.5, 1, 0.0, 3) == pytest.approx(0.375, abs=1e-15)
    assert layer_potential(0.5, 1, 0.75, 3) == pytest.approx(-0.5625 / 6 + 0.5 - 0.125 / 2.25, abs=1e-15)
    assert layer_potential(0.5, 1, 0.75, 3) == pytest.approx(0.350694, abs=1e-6)
    assert layer_potential(0.5, 1, 2.0, 3) == pytest.approx(0.875 / 6, abs=1e-15)
    with pytest.raises(InvalidParameterError):
        layer_potential(1.0, 1.0, 0.5, 3)


@given(st.floats(0.05, 2.0), st.floats(1.05, 3.0), st.integers(3, 8))
def test_layer_potential_c1(r1, ratio, n):
    r2 = r1 * ratio
    for r in (r1, r2):
        lo, hi = layer_potential(r1, r2, r * (1 - 1e-13), n), layer_potential(r1, r2, r * (1 + 1e-13), n)
        assert abs(lo - hi) <= 1e-12 * max(1.0, abs(lo))
        d = 1e-6 * r
        left = (layer_potential(r1, r2, r, n) - layer_potential(r1, r2, r - d, n)) / d
        right = (layer_potential(r1, r2, r + d, n) - layer_potential(r1, r2, r, n)) / d
        assert abs(left - right) <= 1e-4 * max(1.0, abs(left))


@given(st.floats(0.1, 1.0), st.floats(1.5, 4.0), st.floats(2.0, 20.0))
def test_layer_far_field_is_point_charge(r1, ratio, far):
    r2 = r1 * ratio
    y = far * r2
    assert layer_potential(r1, r2, y, 3) == pytest.approx(layer_volume(r1, r2, 3) * fundamental_solution(3, y))
