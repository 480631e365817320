import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imp_pricing.utility import (LogUtility, PowerUtility, UtilityFunction, conjugate,
                                 risk_aversion, utility_from_spec)

KINDS = [LogUtility(), PowerUtility(0.5), PowerUtility(-1.0), PowerUtility(0.9), PowerUtility(-3.0)]
IDS = [repr(u) for u in KINDS]


class _NumericLog(UtilityFunction):
    # log without closed-form conjugate, to exercise the numeric fallback
    def U(self, x):
        return np.log(x)

    def dU(self, x):
        return 1 / np.asarray(x, dtype=float)

    def d2U(self, x):
        return -1 / np.asarray(x, dtype=float) ** 2


@pytest.mark.parametrize("u,x,expected", [
    (LogUtility(), 7.0, 1.0),
    (PowerUtility(0.5), 3.0, 0.5),
    (PowerUtility(-1.0), 0.01, 2.0),
    (PowerUtility(-1.0), 250.0, 2.0),
])
def test_risk_aversion_examples(u, x, expected):
    assert risk_aversion(u, x) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("x", [0.0, -1.0])
def test_risk_aversion_rejects_nonpositive(x):
    with pytest.raises(ValueError):
        risk_aversion(LogUtility(), x)


def test_conjugate_examples():
    assert conjugate(LogUtility(), 1.0)[0] == pytest.approx(-1.0, abs=1e-15)
    assert conjugate(LogUtility(), 3.0)[0] == pytest.approx(-np.log(3.0) - 1, abs=1e-15)
    # U = x^(1/2)/(1/2) = 2 sqrt(x)
    assert conjugate(PowerUtility(0.5), 1.0)[0] == pytest.approx(1.0, abs=1e-15)
    assert conjugate(PowerUtility(0.5), 4.0)[0] == pytest.approx(0.25, abs=1e-15)
    v, dv = conjugate(PowerUtility(-1.0), 4.0)
    # U = -1/x: x* = 1/2, V = -2 - 2
    assert (v, dv) == pytest.approx((-4.0, -0.5), abs=1e-14)


@pytest.mark.parametrize("y", [0.0, -2.0])
def test_conjugate_rejects_nonpositive(y):
    with pytest.raises(ValueError):
        conjugate(LogUtility(), y)


@pytest.mark.parametrize("u", KINDS, ids=IDS)
def test_fenchel_inequality(u):
    rng = np.random.default_rng(3)
    x = np.exp(rng.uniform(np.log(1e-3), np.log(1e3), 1000))
    y = np.exp(rng.uniform(np.log(1e-3), np.log(1e3), 1000))
    lhs = u.U(x)
    rhs = u.V(y) + x * y
    assert np.all(lhs <= rhs + 1e-9 * np.maximum(1, np.abs(rhs)))
    tight = u.V(u.dU(x)) + x * u.dU(x)
    np.testing.assert_allclose(tight, lhs, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("u", KINDS, ids=IDS)
def test_second_derivative_matches_differences(u):
    x = np.logspace(-3, 3, 41)
    h = 1e-5 * x
    fd = (u.dU(x + h) - u.dU(x - h)) / (2 * h)
    np.testing.assert_allclose(u.d2U(x), fd, rtol=1e-6)


@pytest.mark.parametrize("u", KINDS, ids=IDS)
def test_conjugate_derivatives(u):
    y = np.logspace(-2, 2, 17)
    h = 1e-5 * y
    np.testing.assert_allclose(u.dV(y), (u.V(y + h) - u.V(y - h)) / (2 * h), rtol=1e-7)
    np.testing.assert_allclose(u.d2V(y), (u.dV(y + h) - u.dV(y - h)) / (2 * h), rtol=1e-6)
    np.testing.assert_allclose(u.dU(u.inverse_marginal(y)), y, rtol=1e-12)


@pytest.mark.parametrize("u", KINDS, ids=IDS)
def test_monotone_concave_inada(u):
    x = np.logspace(-6, 6, 50)
    assert np.all(u.dU(x) > 0) and np.all(u.d2U(x) < 0)
    assert u.dU(1e-8) > 1 > u.dU(1e8)
    # slow for gamma near 1, but unbounded at 0 and vanishing at infinity
    with np.errstate(over="ignore"):
        assert u.dU(1e-300) > 1e29 and u.dU(1e300) < 1e-29


@pytest.mark.parametrize("u", KINDS, ids=IDS)
def test_constant_relative_risk_aversion(u):
    expected = 1.0 if isinstance(u, LogUtility) else 1 - u.gamma
    x = np.logspace(-4, 4, 9)
    np.testing.assert_allclose(u.risk_aversion(x), expected, rtol=1e-13)
    np.testing.assert_allclose(u.risk_tolerance(x), x / expected, rtol=1e-13)


@pytest.mark.parametrize("gamma", [0.1, 0.5, 0.9])
def test_asymptotic_elasticity_below_one(gamma):
    u = PowerUtility(gamma)
    x = 1e8
    assert x * u.dU(x) / u.U(x) == pytest.approx(gamma, rel=1e-12)
    assert x * u.dU(x) / u.U(x) < 1


@settings(max_examples=200, deadline=None)
@given(x=st.floats(1e-3, 1e3), y=st.floats(1e-3, 1e3), gamma=st.floats(-5, 0.95))
def test_fenchel_property(x, y, gamma):
    if abs(gamma) < 1e-3:
        gamma = 0.5
    u = PowerUtility(gamma)
    assert u.U(x) <= u.V(y) + x * y + 1e-9 * max(1.0, abs(u.V(y) + x * y))


def test_numeric_conjugate_fallback_agrees_with_closed_form():
    num, ref = _NumericLog(), LogUtility()
    y = np.array([0.1, 1.0, 7.0])
    np.testing.assert_allclose(num.inverse_marginal(y), ref.inverse_marginal(y), rtol=1e-10)
    np.testing.assert_allclose(num.V(y), ref.V(y), rtol=1e-10)
    np.testing.assert_allclose(num.d2V(y), ref.d2V(y), rtol=1e-8)


def test_spec_round_trip():
    assert utility_from_spec('{"kind": "log"}') == LogUtility()
    assert utility_from_spec({"kind": "power", "gamma": 0.5}) == PowerUtility(0.5)
    for u in KINDS:
        assert utility_from_spec(u.spec()) == u


@pytest.mark.parametrize("spec", [{"kind": "power", "gamma": 1.0}, {"kind": "power", "gamma": 0},
                                  {"kind": "power"}, {"kind": "exp"}, {}, "[]"])
def test_spec_rejects(spec):
    with pytest.raises(ValueError):
        utility_from_spec(spec)
