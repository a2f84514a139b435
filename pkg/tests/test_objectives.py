"""Tests for the gradient oracles, softmax helpers and Monte Carlo objective values."""

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from langevin_risk.errors import ContractViolation
from langevin_risk.objectives import (
    OBJECTIVES,
    PortfolioObjective,
    PortfolioParameter,
    QuantileObjective,
    VarCvarObjective,
    objective_value_mc,
    portfolio_grad,
    quantile_grad,
    softmax_jacobian,
    softmax_weights,
    var_cvar_grad,
)

logits = st.lists(st.floats(-30, 30), min_size=2, max_size=6)


def _se(x):
    x = np.asarray(x, dtype=float)
    return x.std(ddof=1) / math.sqrt(x.size)


class TestQuantileGrad:
    def test_indicator_on(self):
        assert quantile_grad(0.0, -1.0, QuantileObjective(0.95, 0.0)) == pytest.approx(0.05, abs=1e-15)

    def test_indicator_off(self):
        assert quantile_grad(0.0, 1.0, QuantileObjective(0.95, 0.0)) == -0.95

    def test_strict_boundary(self):
        assert quantile_grad(0.7, 0.7, QuantileObjective(0.3, 0.0)) == -0.3

    def test_root_at_published_quantile(self):
        obj = QuantileObjective(0.95, 0.0)
        rng = np.random.default_rng(0)
        xs = rng.normal(0, math.sqrt(1 / (1 - 0.25)), 10**5)
        h = np.array([quantile_grad(1.89, x, obj) for x in xs])
        assert abs(h.mean()) < 3 * _se(h)
        # 1.89 is rounded: its true mean gradient is -8.4e-4, visible at 1e6 draws,
        # so the large-sample check uses the unrounded quantile
        xs = rng.normal(0, math.sqrt(4 / 3), 10**6)
        h = obj.oracle().batch([1.644853626951472 * math.sqrt(4 / 3)], xs[:, None])[:, 0]
        assert abs(h.mean()) < 3 * _se(h)

    def test_invalid_level(self):
        with pytest.raises(ContractViolation):
            QuantileObjective(1.0)
        with pytest.raises(ContractViolation):
            QuantileObjective(0.5, -1e-3)


class TestVarCvarGrad:
    def test_tail(self):
        assert var_cvar_grad(0.0, 1.0, VarCvarObjective(0.95, 0.0)) == pytest.approx(-19.0, rel=1e-12)

    def test_no_tail(self):
        assert var_cvar_grad(5.0, 1.0, VarCvarObjective(0.95, 0.0)) == 1.0

    def test_ties_count_in_tail(self):
        assert var_cvar_grad(1.0, 1.0, VarCvarObjective(0.5, 0.0)) == pytest.approx(-1.0)

    def test_root_at_normal_var(self):
        xs = np.random.default_rng(1).standard_normal(10**6)
        h = 1 - (xs >= 1.645) / 0.05
        assert abs(h.mean()) < 3 * _se(h)

    def test_payoff(self):
        obj = VarCvarObjective(0.9, 0.0, payoff=lambda x: -x)
        assert var_cvar_grad(0.0, -2.0, obj) == pytest.approx(-9.0)
        assert obj.oracle().kernel is None

    def test_convex_in_theta(self):
        xs = np.random.default_rng(2).standard_normal(10**5)
        grid = np.linspace(-3, 3, 61)
        means = [np.mean(1 - (xs >= t) / 0.05) for t in grid]
        assert np.all(np.diff(means) >= 0)


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(softmax_weights([0, 0]), [0.5, 0.5], atol=1e-15)
        np.testing.assert_allclose(softmax_weights([0, 0, 0, 0]), [0.25] * 4, atol=1e-15)

    def test_high_precision(self):
        mpmath.mp.dps = 40
        e = mpmath.e
        np.testing.assert_allclose(softmax_weights([1, 0]), [float(e / (e + 1)), float(1 / (e + 1))], rtol=1e-15)
        np.testing.assert_allclose(softmax_weights([1, 0]), [0.731059, 0.268941], atol=1e-6)

    @given(logits)
    def test_simplex(self, w):
        g = softmax_weights(w)
        assert np.all(g >= 0) and np.all(g <= 1)
        assert abs(g.sum() - 1) <= 1e-12

    def test_overflow_safe(self):
        g = softmax_weights([1000.0, 0.0])
        assert np.all(np.isfinite(g)) and g[0] == 1.0

    def test_jacobian_symmetric_point(self):
        jac = softmax_jacobian([0.0, 0.0])
        assert jac[0, 0] == pytest.approx(0.25)
        assert jac[1, 0] == pytest.approx(-0.25)

    @given(logits)
    def test_jacobian_columns_sum_to_zero(self, w):
        jac = softmax_jacobian(w)
        assert np.all(np.abs(jac.sum(axis=0)) <= 1e-12)
        assert np.all(np.diag(jac) >= 0)
        off = jac[~np.eye(len(w), dtype=bool)]
        assert np.all(off <= 0)

    @pytest.mark.parametrize("w", [[1.0, 0.0, -1.0], [0.3, -2.0], [2.0, 1.0, 0.5, -3.0]])
    def test_jacobian_finite_differences(self, w):
        h = 1e-6
        w = np.asarray(w)
        fd = np.empty((len(w), len(w)))
        for j in range(len(w)):
            e = np.zeros(len(w))
            e[j] = h
            fd[:, j] = (softmax_weights(w + e) - softmax_weights(w - e)) / (2 * h)
        np.testing.assert_allclose(softmax_jacobian(w), fd, atol=1e-6, rtol=0)


class TestPortfolioGrad:
    obj = PortfolioObjective(0.95, 0.0)

    def test_no_tail(self):
        out = portfolio_grad(PortfolioParameter(1.0, (0.3, -0.2)), [0.0, 0.0], self.obj)
        np.testing.assert_allclose(out, [1.0, 0.0, 0.0], atol=1e-15)

    def test_symmetric_point(self):
        out = portfolio_grad(PortfolioParameter(0.0, (0.0, 0.0)), [2.0, 0.0], self.obj)
        jac = softmax_jacobian([0.0, 0.0])
        ghat = jac.T @ np.array([2.0, 0.0])
        np.testing.assert_allclose(ghat, [0.5, -0.5])
        np.testing.assert_allclose(out, [-19.0, 10.0, -10.0], rtol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractViolation):
            portfolio_grad(PortfolioParameter(0.0, (0.0, 0.0)), [1.0, 2.0, 3.0], self.obj)
        with pytest.raises(ContractViolation):
            portfolio_grad(PortfolioParameter(0.0, (0.0, 0.0, 0.0)), [1.0, 2.0], self.obj)

    def test_kernel_matches_reference(self):
        obj = PortfolioObjective(0.9, 1e-3, 3)
        oracle = obj.oracle()
        rng = np.random.default_rng(4)
        out = np.empty(4)
        for _ in range(200):
            theta = rng.normal(size=4)
            x = rng.normal(size=3) * 3
            oracle.kernel(theta, x, oracle.params, out)
            ref = portfolio_grad(PortfolioParameter.from_vector(theta), x, obj)
            np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(oracle.batch(theta, x[None, :])[0], ref, rtol=1e-12, atol=1e-14)

    def test_parameter_round_trip(self):
        p = PortfolioParameter.from_weights(1.5, [0.2, 0.3, 0.5])
        np.testing.assert_allclose(p.weights, [0.2, 0.3, 0.5], rtol=1e-14)
        assert abs(sum(p.w)) < 1e-12
        np.testing.assert_array_equal(PortfolioParameter.from_vector(p.to_vector()).to_vector(), p.to_vector())
        with pytest.raises(ContractViolation):
            PortfolioParameter(0.0, (1.0,))

    def test_published_optimum_is_stationary(self):
        """Mean gradient vanishes at the weight 0.11 / VaR 1.617 reported for N(1,4), N(0,1)."""
        obj = PortfolioObjective(0.95)
        rng = np.random.default_rng(5)
        xs = np.column_stack([rng.normal(1, 2, 10**6), rng.normal(0, 1, 10**6)])
        p = PortfolioParameter.from_weights(1.617, [0.11, 0.89])
        h = obj.oracle().batch(p.to_vector(), xs)
        for j in range(3):
            assert abs(h[:, j].mean()) < 3 * _se(h[:, j]), j


class TestDecomposition:
    @settings(max_examples=200)
    @given(
        st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 0.99), st.floats(0, 1e-2),
    )
    def test_scalar_oracles(self, theta, x, level, gamma):
        for obj, bound in ((QuantileObjective(level, gamma), 1.0), (VarCvarObjective(level, gamma), 1 / (1 - level))):
            oracle = obj.oracle()
            f, g = oracle.split(np.array([theta]), np.array([x]))
            h = oracle.grad(np.array([theta]), np.array([x]))
            np.testing.assert_allclose(f + g, h, rtol=1e-12, atol=1e-12)
            assert np.all(np.abs(g) <= bound * (1 + 1e-12))
            np.testing.assert_array_equal(oracle.g_bound(np.array([x])), [bound])

    @settings(max_examples=200)
    @given(
        st.lists(st.floats(-5, 5), min_size=3, max_size=3),
        st.lists(st.floats(-50, 50), min_size=2, max_size=2),
        st.floats(0.01, 0.99),
    )
    def test_portfolio_oracle(self, theta, x, qb):
        oracle = PortfolioObjective(qb, 1e-3).oracle()
        theta, x = np.array(theta), np.array(x)
        f, g = oracle.split(theta, x)
        np.testing.assert_allclose(f + g, oracle.grad(theta, x), rtol=1e-10, atol=1e-10)
        bound = oracle.g_bound(x)
        assert bound[0] == pytest.approx((2 - qb) / (1 - qb))
        np.testing.assert_allclose(bound[1:], np.abs(x).sum() / (1 - qb))
        assert np.all(np.abs(g) <= bound * (1 + 1e-12))
        ghat = softmax_jacobian(theta[1:]).T @ x
        assert np.all(np.abs(ghat) <= np.abs(x).sum() * (1 + 1e-12))


class TestUnbiasedGradient:
    """E[H] against a central difference of the plug-in objective on the same draws."""

    @staticmethod
    def _check(obj, points, xs, h=1e-4):
        oracle = obj.oracle()
        for p in points:
            p = np.asarray(p, dtype=float)
            grads = oracle.batch(p, xs)
            for j in range(len(p)):
                e = np.zeros(len(p))
                e[j] = h
                # per-sample difference quotients so both estimates carry a standard error
                per = (_per_sample_value(obj, p + e, xs) - _per_sample_value(obj, p - e, xs)) / (2 * h)
                combined = math.sqrt(_se(grads[:, j]) ** 2 + _se(per) ** 2)
                assert abs(grads[:, j].mean() - per.mean()) < 3 * combined + 1e-12, (p, j)

    def test_quantile(self):
        rng = np.random.default_rng(10)
        xs = rng.normal(0, 1.2, (2 * 10**5, 1))
        self._check(QuantileObjective(0.9, 1e-3), rng.uniform(-2, 2, (5, 1)), xs)

    def test_var_cvar(self):
        rng = np.random.default_rng(11)
        xs = rng.standard_t(5, (2 * 10**5, 1))
        self._check(VarCvarObjective(0.95, 1e-3), rng.uniform(0, 3, (5, 1)), xs)

    def test_portfolio(self):
        rng = np.random.default_rng(12)
        xs = np.column_stack([rng.normal(1, 2, 2 * 10**5), rng.normal(0, 1, 2 * 10**5)])
        pts = np.column_stack([rng.uniform(0.5, 3, 5), rng.uniform(-2, 2, (5, 2))])
        self._check(PortfolioObjective(0.95, 1e-3), pts, xs)


def _per_sample_value(obj, p, xs):
    if isinstance(obj, QuantileObjective):
        z = xs[:, 0] - p[0]
        return np.where(z >= 0, obj.q * z, (obj.q - 1) * z) + obj.gamma * p[0] ** 2
    if isinstance(obj, VarCvarObjective):
        return p[0] + np.maximum(xs[:, 0] - p[0], 0) / (1 - obj.q_bar) + obj.gamma * p[0] ** 2
    port = xs @ softmax_weights(p[1:])
    return p[0] + np.maximum(port - p[0], 0) / (1 - obj.q_bar) + obj.gamma * p @ p


class TestObjectiveValue:
    def test_nonpositive_samples(self):
        assert objective_value_mc(0.0, VarCvarObjective(0.95, 0.0), [-1.0, -2.0, 0.0]) == 0.0

    def test_single_sample(self):
        assert objective_value_mc(0.0, VarCvarObjective(0.95, 0.0), [1.0]) == pytest.approx(20.0)

    def test_normal_cvar(self):
        xs = np.random.default_rng(13).standard_normal(10**7)
        assert objective_value_mc(1.645, VarCvarObjective(0.95, 0.0), xs) == pytest.approx(2.062, abs=0.005)

    def test_portfolio_matches_per_sample(self):
        rng = np.random.default_rng(14)
        xs = rng.normal(size=(1000, 2))
        obj = PortfolioObjective(0.9, 0.01)
        p = np.array([0.3, 0.5, -0.5])
        assert objective_value_mc(p, obj, xs) == pytest.approx(_per_sample_value(obj, p, xs).mean(), rel=1e-12)

    def test_empty(self):
        with pytest.raises(ContractViolation):
            objective_value_mc(0.0, VarCvarObjective(0.95), [])

    def test_registry(self):
        assert set(OBJECTIVES) == {"quantile", "var-cvar", "portfolio"}

    def test_constants_need_positive_gamma(self):
        with pytest.raises(ContractViolation):
            QuantileObjective(0.5, 0.0).assumption_constants()
        c = QuantileObjective(0.95, 1e-6).assumption_constants(2.0)
        assert c.a_dissip == 1e-6 and c.l1 == 2e-6 and c.k1_bound == 1.0
        c = PortfolioObjective(0.95, 1e-8).assumption_constants()
        assert c.k1_bound == pytest.approx(1.05 / 0.05)
