import numpy as np
import pytest

from imp_pricing.market import Claim
from imp_pricing.oracle import (OracleConfig, central_difference, check_indifference,
                                conjugate_by_maximization, dual_direct, marginal_price,
                                sensitivity_fd, step_robustness)
from imp_pricing.pricing import davis_price
from imp_pricing.solver import solve_dual
from imp_pricing.utility import LogUtility, PowerUtility

from generators import MixedUtility, random_model

LOG = LogUtility()


def test_central_difference_richardson():
    f = np.sin
    plain = central_difference(f, 0.1, 0)
    refined = central_difference(f, 0.1, 2)
    assert abs(refined - 1.0) < abs(plain - 1.0) / 1e3


@pytest.mark.parametrize("kw", [{"x_step": 1e-2}, {"q_step": 1e-8}, {"richardson": -1}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        OracleConfig(**kw)


class TestMarginalPrice:
    def test_trinomial_matches_davis(self, trinomial):
        p = marginal_price(trinomial, LOG, 1.0)
        assert p[0] == pytest.approx(2 / 9, abs=1e-6)
        assert p[0] == pytest.approx(davis_price(trinomial, LOG, 1.0)[0], abs=1e-6)

    @pytest.mark.parametrize("q", [0.0, 0.4, -0.2])
    def test_replicable_claim_price_independent_of_q(self, binomial, q):
        p = marginal_price(binomial, PowerUtility(-1.0), 1.0, [q])
        assert p[0] == pytest.approx(1 / 3, abs=1e-7)

    @pytest.mark.parametrize("q", [0.0, 0.3])
    def test_constant_claim(self, two_period, q):
        c = Claim("c", np.full(two_period.tree.n_leaves, 2.0))
        assert marginal_price(two_period, LOG, 1.0, [q], [c])[0] == pytest.approx(2.0, abs=1e-7)

    def test_indifference(self, two_period):
        u = PowerUtility(0.5)
        q = np.array([0.1, -0.05])
        p = marginal_price(two_period, u, 1.0, q)
        assert check_indifference(two_period, u, 1.0, q, p)

    def test_indifference_detects_wrong_price(self, trinomial):
        assert not check_indifference(trinomial, LOG, 1.0, [0.0], [0.5], radius=0.2, tol=1e-10)


class TestSensitivityFD:
    def test_trinomial(self, trinomial):
        p_prime, D = sensitivity_fd(trinomial, LOG, 1.0)
        assert D[0, 0] == pytest.approx(-2 / 81, abs=1e-5)
        assert abs(p_prime[0]) < 1e-5

    def test_complete_binomial(self, binomial):
        _, D = sensitivity_fd(binomial, LOG, 1.0)
        assert abs(D[0, 0]) < 1e-8

    def test_offset_claims_rank_one(self, two_claims):
        _, D = sensitivity_fd(two_claims, LOG, 1.0)
        assert abs(D[0, 1] - D[1, 0]) < 1e-6
        s = np.linalg.svd(D, compute_uv=False)
        assert s[1] < 1e-6

    def test_symmetric_on_multi_claim_model(self):
        model = random_model(2, 1, 4, 2, 2)
        _, D = sensitivity_fd(model, PowerUtility(0.5), 1.0)
        assert abs(D[0, 1] - D[1, 0]) < 1e-6 * max(1.0, np.abs(D).max())

    def test_step_robustness_gate(self, trinomial):
        rob = step_robustness(trinomial, LOG, 1.0)
        assert rob.passed
        assert rob.relative_gap < 1e-4


class TestDualOracles:
    @pytest.mark.parametrize("u", [LOG, PowerUtility(0.5), PowerUtility(-1.0), MixedUtility()])
    def test_direct_minimization_matches_foc(self, trinomial, u):
        for y in (0.5, 1.0, 2.0):
            direct = dual_direct(trinomial, u, y)
            foc = solve_dual(trinomial, u, y)
            np.testing.assert_allclose(direct.density, foc.density, atol=1e-7)
            assert direct.value == pytest.approx(foc.value, abs=1e-10)

    def test_conjugacy_by_maximization(self, two_period):
        u = PowerUtility(-1.0)
        for y in (0.5, 1.0, 2.0):
            sup, _ = conjugate_by_maximization(two_period, u, y)
            assert solve_dual(two_period, u, y).value == pytest.approx(sup, abs=1e-6)
