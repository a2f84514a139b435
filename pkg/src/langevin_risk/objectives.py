"""Stochastic gradients for quantile, VaR/CVaR and portfolio CVaR problems.

Each objective exposes its per-sample gradient as a plain numpy function (the
readable reference), as a numba kernel for the chain loop, and as a
:class:`~langevin_risk.sgld.GradientOracle` carrying the ``F + G`` split and
the bound on ``|G|``. Indicator conventions follow the printed formulas:
the quantile gradient uses ``x < theta``; the VaR/CVaR and portfolio
gradients use ``f(x) >= theta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numba as nb
import numpy as np

from .errors import ContractViolation
from .sgld import AssumptionConstants, GradientOracle, as_point

GAMMA_QUANTILE = 1e-6
GAMMA_CVAR = 1e-8


def _check_level(name: str, value: float) -> None:
    if not 0 < value < 1:
        raise ContractViolation(f"{name} must lie in (0, 1), got {value}")


def _check_gamma(gamma: float) -> None:
    # gamma = 0 is allowed for evaluating gradients; the theory constants need gamma > 0
    if not (gamma >= 0 and math.isfinite(gamma)):
        raise ContractViolation(f"gamma must be nonnegative and finite, got {gamma}")


def _dissipative(gamma: float) -> None:
    if not gamma > 0:
        raise ContractViolation("the assumption constants need gamma > 0 (dissipativity comes from the penalty)")


def _finite(*values) -> None:
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ContractViolation("non-finite input")


# --- quantile -------------------------------------------------------------


@dataclass(frozen=True)
class QuantileObjective:
    """Pinball loss ``E[l_q(X - theta)] + gamma * theta**2``."""

    q: float
    gamma: float = GAMMA_QUANTILE

    def __post_init__(self):
        _check_level("q", self.q)
        _check_gamma(self.gamma)

    def value(self, theta, samples) -> float:
        theta = float(np.asarray(theta).reshape(-1)[0])
        z = np.asarray(samples, dtype=float).reshape(-1) - theta
        loss = np.where(z >= 0, self.q * z, (self.q - 1) * z)
        return float(loss.mean() + self.gamma * theta**2)

    def assumption_constants(self, e_k_rho: float = 1.0) -> AssumptionConstants:
        _dissipative(self.gamma)
        g = self.gamma
        return AssumptionConstants(
            rho=0.0, l1=2 * g, l2=0.0, k1_bound=1.0, l_clc=2 * g + 1.0,
            a_dissip=g, b_dissip=self.q**2 / (4 * g), e_k_rho=e_k_rho,
        )

    def oracle(self, e_k_rho: float | None = None) -> GradientOracle:
        q, g = self.q, self.gamma

        def split(theta, x):
            t = float(np.asarray(theta).reshape(-1)[0])
            return np.array([-q + 2 * g * t]), np.array([1.0 if float(np.asarray(x).reshape(-1)[0]) < t else 0.0])

        return GradientOracle(
            name="quantile", dim=1, data_dim=1,
            grad=lambda theta, x: np.array([quantile_grad(np.asarray(theta).reshape(-1)[0], np.asarray(x).reshape(-1)[0], self)]),
            grad_batch=lambda theta, xs: (-q + (xs[:, 0] < theta[0]) + 2 * g * theta[0])[:, None],
            split=split,
            g_bound=lambda x: np.ones(1),
            kernel=_quantile_kernel,
            params=np.array([q, g]),
            constants=None if e_k_rho is None else self.assumption_constants(e_k_rho),
        )


def quantile_grad(theta: float, x: float, obj: QuantileObjective) -> float:
    """``-q + 1{x < theta} + 2 gamma theta``."""
    _finite(theta, x)
    return -obj.q + (1.0 if x < theta else 0.0) + 2 * obj.gamma * theta


@nb.njit(nogil=True, cache=True)
def _quantile_kernel(theta, x, params, out):
    out[0] = -params[0] + (1.0 if x[0] < theta[0] else 0.0) + 2 * params[1] * theta[0]


# --- single-asset VaR / CVaR -----------------------------------------------


@dataclass(frozen=True)
class VarCvarObjective:
    """``V(theta) = E[theta + (f(X) - theta)_+ / (1 - q_bar)] + gamma * theta**2``.

    ``payoff`` is a vectorised scalar function ``f``; ``None`` is the identity
    and is the only payoff the compiled loop handles.
    """

    q_bar: float
    gamma: float = GAMMA_CVAR
    payoff: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        _check_level("q_bar", self.q_bar)
        _check_gamma(self.gamma)

    def f(self, x):
        x = np.asarray(x, dtype=float)
        return x if self.payoff is None else np.asarray(self.payoff(x), dtype=float)

    def value(self, theta, samples) -> float:
        theta = float(np.asarray(theta).reshape(-1)[0])
        fx = self.f(np.asarray(samples, dtype=float).reshape(-1))
        return float(theta + np.maximum(fx - theta, 0.0).mean() / (1 - self.q_bar) + self.gamma * theta**2)

    def assumption_constants(self, e_k_rho: float = 1.0, density_bound: float = 1.0) -> AssumptionConstants:
        _dissipative(self.gamma)
        g, qb = self.gamma, self.q_bar
        return AssumptionConstants(
            rho=0.0, l1=2 * g, l2=0.0, k1_bound=1 / (1 - qb), l_clc=2 * g + density_bound / (1 - qb),
            a_dissip=g, b_dissip=qb**2 / (4 * g * (1 - qb) ** 2), e_k_rho=e_k_rho,
        )

    def oracle(self, e_k_rho: float | None = None, density_bound: float = 1.0) -> GradientOracle:
        qb, g = self.q_bar, self.gamma

        def batch(theta, xs):
            tail = self.f(xs[:, 0]) >= theta[0]
            return (1 - tail / (1 - qb) + 2 * g * theta[0])[:, None]

        def split(theta, x):
            t = float(np.asarray(theta).reshape(-1)[0])
            tail = float(self.f(np.asarray(x).reshape(-1)[0])) >= t
            return np.array([-qb / (1 - qb) + 2 * g * t]), np.array([(1.0 - tail) / (1 - qb)])

        return GradientOracle(
            name="var-cvar", dim=1, data_dim=1,
            grad=lambda theta, x: np.array([var_cvar_grad(np.asarray(theta).reshape(-1)[0], np.asarray(x).reshape(-1)[0], self)]),
            grad_batch=batch,
            split=split,
            g_bound=lambda x: np.array([1 / (1 - qb)]),
            kernel=_var_cvar_kernel if self.payoff is None else None,
            params=np.array([qb, g]),
            constants=None if e_k_rho is None else self.assumption_constants(e_k_rho, density_bound),
        )


def var_cvar_grad(theta: float, x: float, obj: VarCvarObjective) -> float:
    """``1 - 1{f(x) >= theta} / (1 - q_bar) + 2 gamma theta``."""
    _finite(theta, x)
    tail = 1.0 if float(obj.f(x)) >= theta else 0.0
    return 1.0 - tail / (1 - obj.q_bar) + 2 * obj.gamma * theta


@nb.njit(nogil=True, cache=True)
def _var_cvar_kernel(theta, x, params, out):
    tail = 1.0 if x[0] >= theta[0] else 0.0
    out[0] = 1.0 - tail / (1.0 - params[0]) + 2 * params[1] * theta[0]


# --- portfolio -------------------------------------------------------------


def softmax_weights(w) -> np.ndarray:
    """``exp(w_i) / sum_j exp(w_j)`` with the maximum logit subtracted first."""
    w = np.asarray(w, dtype=float)
    _finite(w)
    e = np.exp(w - w.max())
    return e / e.sum()


def softmax_jacobian(w) -> np.ndarray:
    """Matrix ``J[i, j] = d g_i / d w_j`` of the softmax weights."""
    w = np.asarray(w, dtype=float)
    _finite(w)
    e = np.exp(w - w.max())
    s = e.sum()
    jac = -np.outer(e, e) / s**2
    np.fill_diagonal(jac, e * (s - e) / s**2)
    return jac


@dataclass(frozen=True)
class PortfolioParameter:
    """VaR level ``theta`` and unconstrained logits ``w`` of the asset weights."""

    theta: float
    w: tuple[float, ...]

    def __post_init__(self):
        w = tuple(float(v) for v in np.asarray(self.w, dtype=float).reshape(-1))
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "theta", float(self.theta))
        if len(w) < 2:
            raise ContractViolation("a portfolio needs at least two assets")
        _finite(self.theta, w)

    @classmethod
    def from_vector(cls, v) -> "PortfolioParameter":
        v = np.asarray(v, dtype=float).reshape(-1)
        return cls(v[0], tuple(v[1:]))

    @classmethod
    def from_weights(cls, theta: float, weights: Sequence[float]) -> "PortfolioParameter":
        """Logits whose softmax equals ``weights``, centred to sum to zero."""
        logw = np.log(np.asarray(weights, dtype=float))
        return cls(theta, tuple(logw - logw.mean()))

    def to_vector(self) -> np.ndarray:
        return np.array((self.theta, *self.w))

    @property
    def weights(self) -> np.ndarray:
        return softmax_weights(self.w)


@dataclass(frozen=True)
class PortfolioObjective:
    """``V = E[theta + (sum_i g_i(w) X_i - theta)_+ / (1 - q_bar)] + gamma |(theta, w)|^2``."""

    q_bar: float
    gamma: float = GAMMA_CVAR
    n_assets: int = 2

    def __post_init__(self):
        _check_level("q_bar", self.q_bar)
        _check_gamma(self.gamma)
        if int(self.n_assets) != self.n_assets or self.n_assets < 2:
            raise ContractViolation(f"n_assets must be an integer >= 2, got {self.n_assets}")

    def _param(self, param) -> PortfolioParameter:
        if not isinstance(param, PortfolioParameter):
            param = PortfolioParameter.from_vector(param)
        if len(param.w) != self.n_assets:
            raise ContractViolation(f"expected {self.n_assets} logits, got {len(param.w)}")
        return param

    def value(self, param, samples) -> float:
        param = self._param(param)
        xs = np.asarray(samples, dtype=float).reshape(-1, self.n_assets)
        port = xs @ param.weights
        vec = param.to_vector()
        return float(param.theta + np.maximum(port - param.theta, 0.0).mean() / (1 - self.q_bar) + self.gamma * vec @ vec)

    def assumption_constants(self, e_k_rho: float = 1.0, l_clc: float = 1.0) -> AssumptionConstants:
        _dissipative(self.gamma)
        g, qb = self.gamma, self.q_bar
        return AssumptionConstants(
            rho=0.0, l1=2 * g, l2=0.0, k1_bound=(2 - qb) / (1 - qb), l_clc=l_clc,
            a_dissip=2 * g, b_dissip=0.0, e_k_rho=e_k_rho,
        )

    def oracle(self, e_k_rho: float | None = None, l_clc: float = 1.0) -> GradientOracle:
        qb, g, n = self.q_bar, self.gamma, self.n_assets

        def batch(theta, xs):
            e = np.exp(theta[1:] - theta[1:].max())
            wts = e / e.sum()
            port = xs @ wts
            tail = (port >= theta[0]).astype(float)
            out = np.empty((len(xs), n + 1))
            out[:, 0] = 1 - tail / (1 - qb) + 2 * g * theta[0]
            ghat = xs @ softmax_jacobian(theta[1:])
            out[:, 1:] = ghat * (tail / (1 - qb))[:, None] + 2 * g * theta[1:]
            return out

        def split(theta, x):
            p = PortfolioParameter.from_vector(theta)
            x = np.asarray(x, dtype=float)
            tail = float(x @ p.weights >= p.theta)
            ghat = softmax_jacobian(p.w).T @ x
            f = 2 * g * np.asarray(theta, dtype=float)
            gpart = np.concatenate(([1 - tail / (1 - qb)], ghat * tail / (1 - qb)))
            return f, gpart

        def bound(x):
            s = np.abs(np.asarray(x, dtype=float)).sum()
            return np.concatenate(([(2 - qb) / (1 - qb)], np.full(n, s / (1 - qb))))

        return GradientOracle(
            name="portfolio", dim=n + 1, data_dim=n,
            grad=lambda theta, x: portfolio_grad(PortfolioParameter.from_vector(theta), x, self),
            grad_batch=batch,
            split=split,
            g_bound=bound,
            kernel=_portfolio_kernel,
            params=np.array([qb, g]),
            constants=None if e_k_rho is None else self.assumption_constants(e_k_rho, l_clc),
        )


def portfolio_grad(param: PortfolioParameter, x, obj: PortfolioObjective) -> np.ndarray:
    """Gradient ``(H_theta, H_w1, ..., H_wn)`` for one joint draw of asset values."""
    param = obj._param(param)
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != obj.n_assets:
        raise ContractViolation(f"expected {obj.n_assets} asset values, got {x.shape[0]}")
    _finite(x)
    qb, g = obj.q_bar, obj.gamma
    w = np.asarray(param.w)
    tail = 1.0 if x @ softmax_weights(w) >= param.theta else 0.0
    ghat = softmax_jacobian(w).T @ x
    if __debug__:
        assert np.all(np.abs(ghat) <= np.abs(x).sum() * (1 + 1e-12) + 1e-300)
    out = np.empty(obj.n_assets + 1)
    out[0] = 1.0 - tail / (1 - qb) + 2 * g * param.theta
    out[1:] = ghat * tail / (1 - qb) + 2 * g * w
    return out


@nb.njit(nogil=True, cache=True)
def _portfolio_kernel(theta, x, params, out):
    n = theta.shape[0] - 1
    m = theta[1]
    for j in range(2, n + 1):
        if theta[j] > m:
            m = theta[j]
    s = 0.0
    for j in range(n):
        out[1 + j] = math.exp(theta[1 + j] - m)
        s += out[1 + j]
    port = 0.0
    for j in range(n):
        out[1 + j] /= s
        port += out[1 + j] * x[j]
    scale = (1.0 if port >= theta[0] else 0.0) / (1.0 - params[0])
    out[0] = 1.0 - scale + 2 * params[1] * theta[0]
    for j in range(n):
        # sum_i (d g_i / d w_j) x_i = g_j (x_j - sum_i g_i x_i)
        out[1 + j] = out[1 + j] * (x[j] - port) * scale + 2 * params[1] * theta[1 + j]


# --- deterministic toy oracle ---------------------------------------------


@nb.njit(nogil=True, cache=True)
def _linear_kernel(theta, x, params, out):
    for j in range(theta.shape[0]):
        out[j] = params[0] * theta[j]


def linear_oracle(c: float = 1.0, dim: int = 1) -> GradientOracle:
    """Deterministic gradient ``H(theta) = c * theta`` of ``U = c |theta|^2 / 2``."""
    return GradientOracle(
        name="linear", dim=dim, data_dim=0,
        grad=lambda theta, x: c * np.asarray(theta, dtype=float),
        grad_batch=lambda theta, xs: np.tile(c * theta, (len(xs), 1)),
        split=lambda theta, x: (c * np.asarray(theta, dtype=float), np.zeros(dim)),
        g_bound=lambda x: np.zeros(dim),
        kernel=_linear_kernel,
        params=np.array([float(c)]),
    )


Objective = Union[QuantileObjective, VarCvarObjective, PortfolioObjective]

OBJECTIVES = {
    "quantile": QuantileObjective,
    "var-cvar": VarCvarObjective,
    "portfolio": PortfolioObjective,
}


def objective_value_mc(param, obj: Objective, samples) -> float:
    """Plug-in Monte Carlo estimate of the objective at ``param``."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ContractViolation("objective_value_mc needs at least one sample")
    return obj.value(param, samples)
