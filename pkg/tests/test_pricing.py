import numpy as np
import pytest

from imp_pricing.market import Claim
from imp_pricing.oracle import sensitivity_fd
from imp_pricing.pricing import (RiskToleranceUnavailable, davis_price, kw_decomposition,
                                 linearized_equilibrium, risk_tolerance, sensitivity, taylor_check)
from imp_pricing.solver import solve_primal, value_derivatives
from imp_pricing.utility import LogUtility, PowerUtility

from generators import MixedUtility, random_model

LOG = LogUtility()


class TestDavisPrice:
    def test_trinomial_call(self, trinomial):
        qhat = solve_primal(trinomial, LOG, 1.0).pricing_measure.leaf_probabilities
        assert davis_price(trinomial, LOG, 1.0)[0] == pytest.approx(qhat @ [1, 0, 0], abs=1e-14)
        assert davis_price(trinomial, LOG, 1.0)[0] == pytest.approx(2 / 9, abs=1e-12)

    @pytest.mark.parametrize("u", [LOG, PowerUtility(0.5), PowerUtility(-1.0), MixedUtility()])
    def test_complete_binomial_is_utility_free(self, binomial, u):
        assert davis_price(binomial, u, 1.0)[0] == pytest.approx(1 / 3, abs=1e-12)

    def test_constant_claim(self, two_period):
        c = Claim("c", np.full(two_period.tree.n_leaves, 3.5))
        assert davis_price(two_period, PowerUtility(-1.0), 2.0, [c])[0] == pytest.approx(3.5, abs=1e-12)


class TestRiskTolerance:
    def test_log_is_optimal_wealth(self, two_period):
        rt = risk_tolerance(two_period, LOG, 1.4)
        sol = solve_primal(two_period, LOG, 1.4)
        assert rt.exists
        np.testing.assert_allclose(rt.process.values, sol.wealth.values, rtol=1e-10)
        assert rt.R0 == pytest.approx(1.4, rel=1e-12)
        np.testing.assert_allclose(rt.measure.leaf_probabilities, two_period.tree.leaf_probabilities,
                                   atol=1e-10)

    @pytest.mark.parametrize("gamma", [0.5, -1.0])
    def test_power_is_scaled_optimal_wealth(self, two_period, gamma):
        u = PowerUtility(gamma)
        rt = risk_tolerance(two_period, u, 0.8)
        sol = solve_primal(two_period, u, 0.8)
        np.testing.assert_allclose(rt.process.values, sol.wealth.values / (1 - gamma), rtol=1e-8)
        assert rt.R0 == pytest.approx(0.8 / (1 - gamma), rel=1e-10)
        assert rt.measure.leaf_probabilities.sum() == pytest.approx(1.0, abs=1e-10)

    def test_terminal_matches_target(self, two_period):
        rt = risk_tolerance(two_period, PowerUtility(0.5), 1.0)
        np.testing.assert_allclose(rt.R_T, rt.target, rtol=1e-8)
        assert rt.residual < 1e-8

    @pytest.mark.parametrize("u", [LOG, PowerUtility(0.5), PowerUtility(-1.0), MixedUtility()])
    def test_complete_binomial_always_exists(self, binomial, u):
        assert risk_tolerance(binomial, u, 1.0).exists

    def test_mixed_utility_on_trinomial_missing(self, trinomial):
        rt = risk_tolerance(trinomial, MixedUtility(), 1.0)
        assert not rt.exists
        assert rt.process is None and rt.measure is None
        assert rt.residual > 1e-3

    def test_R0_matches_value_derivatives(self, two_period):
        u = MixedUtility()
        rt = risk_tolerance(two_period, u, 1.0)
        if rt.exists:
            d1, d2 = value_derivatives(two_period, u, 1.0)
            assert rt.R0 == pytest.approx(-d1 / d2, rel=1e-5)


class TestKW:
    def test_trinomial_hand_normal_equations(self, trinomial):
        rt = risk_tolerance(trinomial, LOG, 1.0)
        kw = kw_decomposition(trinomial, rt)[0]
        # Q^R = P uniform; R-units at the leaves are 1/X_T
        X = np.array([1.5, 1.0, 0.75])
        fR = np.array([1.0, 0, 0]) / X
        dB = 1 / X - 1
        dS = np.array([2.0, 1.0, 0.5]) / X - 1
        dP = fR - fR.mean()
        A = np.column_stack([dB, dS])
        beta = np.linalg.lstsq(A.T @ A / 3, A.T @ dP / 3, rcond=None)[0]
        M = A @ beta
        np.testing.assert_allclose(kw.discounted_payoff, [2 / 3, 0, 0], atol=1e-12)
        assert kw.price[0] == pytest.approx(2 / 9, abs=1e-12)
        np.testing.assert_allclose(kw.M_T - kw.price[0], M, atol=1e-10)
        np.testing.assert_allclose(kw.M_T - kw.price[0], [1 / 3, 0, -1 / 3], atol=1e-10)
        np.testing.assert_allclose(kw.N_T, [1 / 9, -2 / 9, 1 / 9], atol=1e-10)
        assert kw.orthogonality_error < 1e-10

    def test_replicable_and_constant_claims_have_no_residual(self, two_period):
        rt = risk_tolerance(two_period, PowerUtility(-1.0), 1.0)
        ST = two_period.prices[two_period.tree.leaves, 0]
        claims = [Claim("stock", 3 * ST - 1), Claim("const", np.full(len(ST), 2.0))]
        for k in kw_decomposition(two_period, rt, claims):
            np.testing.assert_allclose(k.N_T, 0.0, atol=1e-10)

    def test_numeraire_identity(self, two_period):
        u = PowerUtility(0.5)
        rt = risk_tolerance(two_period, u, 1.0)
        p = davis_price(two_period, u, 1.0)
        for k, pi in zip(kw_decomposition(two_period, rt), p):
            assert rt.measure.expectation(k.discounted_payoff) == pytest.approx(pi, abs=1e-9)

    def test_orthogonality_multi_asset(self):
        model = random_model(8, 2, 4, 2, 3)
        rt = risk_tolerance(model, LOG, 1.0)
        for k in kw_decomposition(model, rt):
            assert k.orthogonality_error < 1e-10

    def test_refuses_without_R(self, trinomial):
        rt = risk_tolerance(trinomial, MixedUtility(), 1.0)
        with pytest.raises(RiskToleranceUnavailable):
            kw_decomposition(trinomial, rt)


class TestSensitivity:
    def test_trinomial_D(self, trinomial):
        rep = sensitivity(trinomial, LOG, 1.0)
        assert rep.method == "formula" and not rep.fallback
        assert rep.D[0, 0] == pytest.approx(-2 / 81, abs=1e-8)
        np.testing.assert_allclose(rep.residual_terminal[0], [1 / 9, -2 / 9, 1 / 9], atol=1e-10)
        assert abs(rep.p_prime[0]) < 1e-5

    def test_trinomial_D_against_oracle(self, trinomial):
        rep = sensitivity(trinomial, LOG, 1.0)
        _, D_fd = sensitivity_fd(trinomial, LOG, 1.0)
        assert abs(rep.D[0, 0] - D_fd[0, 0]) <= 1e-5

    def test_complete_model_D_vanishes(self, binomial):
        claims = [binomial.claims[0], Claim("put", np.array([0.0, 0.5]))]
        rep = sensitivity(binomial, PowerUtility(-1.0), 1.0, claims)
        np.testing.assert_allclose(rep.D, 0.0, atol=1e-9)

    def test_duplicated_claims_rank_one(self, trinomial):
        f = trinomial.claims[0]
        rep = sensitivity(trinomial, LOG, 1.0, [f, Claim("copy", f.payoffs.copy())])
        d = -2 / 81
        np.testing.assert_allclose(rep.D, [[d, d], [d, d]], atol=1e-8)
        assert np.linalg.matrix_rank(rep.D, tol=1e-8) == 1
        assert rep.symmetry_gap < 1e-12

    def test_nsd_and_symmetric_on_multi_claim_model(self):
        model = random_model(8, 2, 4, 2, 3)
        rep = sensitivity(model, PowerUtility(0.5), 1.0)
        assert rep.symmetry_gap < 1e-7
        assert rep.max_eigenvalue <= 1e-8

    def test_replicable_claim_row_is_zero(self):
        model = random_model(3, 2, 3, 1, 3, replicable_claim=True)
        rep = sensitivity(model, PowerUtility(-1.0), 1.0)
        np.testing.assert_allclose(rep.D[0], 0.0, atol=1e-8)
        np.testing.assert_allclose(rep.D[:, 0], 0.0, atol=1e-8)

    @pytest.mark.parametrize("u", [LOG, PowerUtility(0.5), PowerUtility(-1.0)])
    def test_price_locally_independent_of_capital(self, two_period, u):
        rep = sensitivity(two_period, u, 1.0)
        np.testing.assert_allclose(rep.p_prime, 0.0, atol=1e-5)

    def test_fallback_when_R_missing(self, trinomial):
        rep = sensitivity(trinomial, MixedUtility(), 1.0)
        assert rep.fallback and rep.method == "oracle"
        assert rep.residual_terminal is None
        assert rep.D[0, 0] < 0


@pytest.fixture(scope="module")
def report(trinomial):
    return sensitivity(trinomial, LOG, 1.0)


class TestEquilibrium:
    def test_no_trade_at_marginal_price(self, report):
        res = linearized_equilibrium(report, 1.0, [2 / 9])
        assert res.q[0] == pytest.approx(0.0, abs=1e-6)

    def test_buy_below_marginal_price(self, report):
        res = linearized_equilibrium(report, 1.0, [1 / 9])
        # p' is ~1e-12 here, so the scalar closed form applies
        assert res.q[0] == pytest.approx((1 / 9 - 2 / 9) / (-2 / 81), rel=1e-5)
        assert res.q[0] == pytest.approx(4.5, rel=1e-5)
        assert not res.least_norm

    def test_sign_matches_price_gap(self, report):
        for pt in np.linspace(0.0, 1 / 3, 21):
            q = linearized_equilibrium(report, 1.0, [pt]).q[0]
            gap = report.davis_price[0] - pt
            if abs(gap) > 1e-6:
                assert np.sign(q) == np.sign(gap)

    def test_two_claims_offset_by_constant(self, two_claims):
        f1, f2 = (c.payoffs for c in two_claims.claims)
        c = 0.5
        np.testing.assert_allclose(f1, f2 + c)
        rep = sensitivity(two_claims, LOG, 1.0)
        assert np.linalg.matrix_rank(rep.D, tol=1e-8) == 1
        p1, p2 = rep.davis_price
        # trade prices closer together than the constant: f1 is cheap relative to f2
        res = linearized_equilibrium(rep, 1.0, [p1 - 0.05, p2])
        assert res.least_norm
        assert res.unbounded_direction is not None
        v = res.unbounded_direction
        assert v[0] > 0 > v[1]
        assert v[0] == pytest.approx(-v[1], rel=1e-6)

    def test_singular_without_least_norm_raises(self, two_claims):
        rep = sensitivity(two_claims, LOG, 1.0)
        with pytest.raises(np.linalg.LinAlgError):
            linearized_equilibrium(rep, 1.0, rep.davis_price, allow_least_norm=False)

    def test_shape_mismatch(self, report):
        with pytest.raises(ValueError):
            linearized_equilibrium(report, 1.0, [0.1, 0.2])


class TestTaylor:
    def test_trinomial_log(self, trinomial):
        rep = taylor_check(trinomial, LOG, 1.0)
        # log is homogeneous: X_T(x + dx) = X_T(x)(1 + dx/x) exactly
        assert all(abs(g) <= rep.roundoff_floor for g in rep.gaps)
        assert rep.scaling_ok and rep.minimum_ok and rep.competitors_ok
        rt = risk_tolerance(trinomial, LOG, 1.0)
        assert rep.quad_coefficient == pytest.approx(1 / rt.R0, rel=1e-10)

    def test_bond_competitor(self, trinomial):
        rt = risk_tolerance(trinomial, LOG, 1.0)
        qhat = rt.solve.pricing_measure.leaf_probabilities
        assert qhat @ (1 / rt.R_T) >= 1 / rt.R0 - 1e-12

    def test_cubic_scaling_with_varying_risk_aversion(self):
        # complete one-period model: R exists for any utility, gaps are genuinely O(dx^3)
        model = random_model(13, 1, 2, 1, 0)
        u = MixedUtility()
        rep = taylor_check(model, u, 1.0, steps=(1e-1, 1e-2))
        assert rep.gaps[0] > 100 * rep.roundoff_floor
        assert rep.gaps[0] / rep.gaps[1] > 8
        assert rep.scaling_ok and rep.minimum_ok and rep.competitors_ok

    def test_requires_R(self, trinomial):
        with pytest.raises(RiskToleranceUnavailable):
            taylor_check(trinomial, MixedUtility(), 1.0)
