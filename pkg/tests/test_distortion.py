import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from drmpg.distortion import DistortionFn, Family, all_families

from conftest import ALL_G, TABLE_G

GRID = np.linspace(0.0, 1.0, 1001)
INTERIOR = GRID[1:-1]


def test_table_values():
    assert DistortionFn("dual_power", 2)(0.5) == pytest.approx(0.75, abs=1e-15)
    assert DistortionFn("logarithmic", 1)(0.5) == pytest.approx(math.log(1.5) / math.log(2), rel=1e-14)
    assert DistortionFn("quadratic", 0.5)(0.5) == pytest.approx(1.5 * 0.5 - 0.125, abs=1e-15)
    assert DistortionFn("exponential", 1)(0.5) == pytest.approx(
        (1 - math.exp(-0.5)) / (1 - math.exp(-1)), rel=1e-14)
    assert DistortionFn("square_root", 1)(0.5) == pytest.approx(
        (math.sqrt(1.5) - 1) / (math.sqrt(2) - 1), rel=1e-14)


@pytest.mark.parametrize("g", ALL_G, ids=str)
def test_boundary_values(g):
    assert g(0.0) == pytest.approx(0.0, abs=1e-15)
    assert g(1.0) == pytest.approx(1.0, abs=1e-15)


def test_derivative_values():
    assert DistortionFn("dual_power", 2).deriv(0.0) == 2.0
    assert DistortionFn("logarithmic", 1).deriv(0.0) == pytest.approx(1 / math.log(2), rel=1e-14)
    assert DistortionFn.identity().deriv(0.37) == 1.0
    assert DistortionFn("dual_power", 2).second_deriv(0.5) == pytest.approx(-2.0)
    assert DistortionFn("quadratic", 1).second_deriv(0.2) == -2.0
    assert DistortionFn("quadratic", 1).second_deriv(0.9) == -2.0
    assert DistortionFn.identity().second_deriv(0.3) == 0.0


def test_right_derivative_at_zero():
    assert DistortionFn("dual_power", 3).right_deriv_zero() == 3.0
    assert DistortionFn.identity().right_deriv_zero() == 1.0
    assert DistortionFn("exponential", 1).right_deriv_zero() == pytest.approx(
        1 / (1 - math.exp(-1)), rel=1e-14)


def test_bound_constants_values():
    assert DistortionFn("dual_power", 2).bound_constants() == (2.0, 2.0)
    assert DistortionFn.identity().bound_constants() == (1.0, 0.0)
    gp, gpp = DistortionFn("quadratic", 0.5).bound_constants()
    assert gp == pytest.approx(1.5) and gpp == pytest.approx(1.0)


@pytest.mark.parametrize("g", ALL_G, ids=str)
def test_range_and_monotone_on_grid(g):
    v = g(GRID)
    assert np.all(v >= 0) and np.all(v <= 1)
    assert np.all(np.diff(v) >= 0)


@pytest.mark.parametrize("g", ALL_G, ids=str)
def test_derivative_matches_finite_differences(g):
    h = 1e-6 * np.maximum(1.0, np.abs(INTERIOR))
    fd = (g(INTERIOR + h) - g(INTERIOR - h)) / (2 * h)
    np.testing.assert_allclose(g.deriv(INTERIOR), fd, rtol=1e-6)


@pytest.mark.parametrize("g", TABLE_G, ids=str)
def test_second_derivative_matches_finite_differences(g):
    s = INTERIOR[(INTERIOR > 1e-3) & (INTERIOR < 1 - 1e-3)]
    h = 1e-6
    fd = (g.deriv(s + h) - g.deriv(s - h)) / (2 * h)
    np.testing.assert_allclose(g.second_deriv(s), fd, rtol=1e-5)


@pytest.mark.parametrize("g", ALL_G, ids=str)
def test_bound_constants_dominate_grid(g):
    gp, gpp = g.bound_constants()
    assert np.all(np.abs(g.deriv(GRID)) <= gp * (1 + 1e-12))
    assert np.all(np.abs(g.second_deriv(INTERIOR)) <= gpp * (1 + 1e-12))


@pytest.mark.parametrize("g", TABLE_G, ids=str)
def test_concave(g):
    assert np.all(g.second_deriv(INTERIOR) <= 0)


@pytest.mark.parametrize("family,r", [
    ("dual_power", 1.5), ("quadratic", -0.1), ("quadratic", 1.2), ("exponential", 0.0),
    ("square_root", -1.0), ("logarithmic", 0.0), ("logarithmic", float("inf")),
])
def test_parameter_domain_rejected(family, r):
    with pytest.raises(ValueError):
        DistortionFn(family, r)


def test_argument_domain():
    g = DistortionFn("logarithmic", 1)
    assert g(1.0 + 1e-13) == 1.0
    with pytest.raises(ValueError):
        g(1.0 + 1e-9)
    with pytest.raises(ValueError):
        g.deriv(-0.01)


def test_unknown_family():
    with pytest.raises(ValueError):
        DistortionFn("cvar", 0.5)


def test_serialization_round_trip():
    for g in all_families():
        assert DistortionFn.from_dict(g.to_dict()) == g
    assert DistortionFn("DualPower", 3).family is Family.DUAL_POWER


@given(st.sampled_from(["dual_power", "quadratic", "exponential", "square_root", "logarithmic"]),
       st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.01, 20.0))
def test_monotone_for_any_valid_parameter(family, s1, s2, raw_r):
    r = {"dual_power": 2.0 + raw_r, "quadratic": min(raw_r, 1.0)}.get(family, raw_r)
    g = DistortionFn(family, r)
    lo, hi = sorted((s1, s2))
    assert g(lo) <= g(hi) + 1e-15
    assert g.second_deriv(0.5) <= 0
