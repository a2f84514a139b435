"""Wasserstein diagnostics and log-log rate fits for SGLD convergence studies."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import brentq

from .distributions import Ar1Spec, DistributionSpec, reference_var
from .errors import ContractViolation, DivergedChainError
from .objectives import QuantileObjective, VarCvarObjective
from .sgld import (
    GradientOracle,
    SampleSet,
    SgldConfig,
    as_point,
    chain_config,
    data_generator,
    run_chain,
    sample_pi_beta,
)

CSV_SCHEMA_RATE = "langevin_risk/rate-points/v1"


def wasserstein_p_1d(a, b, p: int = 1) -> float:
    """Exact ``W_p`` between two equal-size empirical measures on the line.

    The monotone coupling (sorted against sorted) is optimal in one
    dimension, so no transport problem needs solving.
    """
    if p not in (1, 2):
        raise ContractViolation(f"p must be 1 or 2, got {p}")
    a = np.sort(np.asarray(a, dtype=float).reshape(-1))
    b = np.sort(np.asarray(b, dtype=float).reshape(-1))
    if a.size == 0 or b.size == 0:
        raise ContractViolation("samples must be nonempty")
    if a.size != b.size:
        raise ContractViolation(f"sample sizes differ: {a.size} vs {b.size}")
    d = np.abs(a - b)
    if p == 1:
        return float(d.mean())
    # scale by the largest gap so squaring neither underflows nor overflows
    m = float(d.max())
    if m == 0:
        return 0.0
    return m * float(math.sqrt(np.mean((d / m) ** 2)))


@dataclass(frozen=True)
class RatePoint:
    """Distance to the reference law at one step size."""

    lam: float
    w_distance: float
    n_chains: int
    seed: int

    def __post_init__(self):
        if not self.w_distance >= 0:
            raise ContractViolation(f"w_distance must be >= 0, got {self.w_distance}")


def fit_loglog_slope(points: Sequence[RatePoint]) -> tuple[float, float]:
    """Least-squares line through ``(log lam, log W)``; returns ``(slope, intercept)``."""
    if len(points) < 2:
        raise ContractViolation("need at least two rate points")
    lams = np.array([p.lam for p in points], dtype=float)
    dists = np.array([p.w_distance for p in points], dtype=float)
    if np.unique(lams).size != lams.size:
        raise ContractViolation("step sizes must be distinct")
    if np.any(dists <= 0):
        raise ContractViolation("distances must be positive to fit a log-log line (degenerate data)")
    slope, intercept = np.polyfit(np.log(lams), np.log(dists), 1)
    return float(slope), float(intercept)


class GibbsReference1D:
    """Exact sampler for a one-dimensional ``pi_beta`` given its mean gradient.

    ``log pi_beta = -beta * U`` up to a constant, and ``U`` is rebuilt on a
    fine grid by integrating ``mean_grad`` from the minimiser outwards. The
    grid spans ``span`` standard deviations of the Laplace approximation.
    """

    def __init__(
        self,
        mean_grad: Callable[[np.ndarray], np.ndarray],
        beta: float,
        bracket: tuple[float, float],
        span: float = 12.0,
        points: int = 20001,
        seed: int = 0,
    ):
        if not (beta > 0 and math.isfinite(beta)):
            raise ContractViolation(f"beta must be positive and finite, got {beta}")
        h = lambda t: float(np.asarray(mean_grad(np.array([t])))[0])
        self.mode = brentq(h, *bracket, xtol=1e-14)
        eps = max(1e-8, 1e-6 * abs(self.mode))
        curv = (h(self.mode + eps) - h(self.mode - eps)) / (2 * eps)
        if not curv > 0:
            raise ContractViolation("mean gradient must be increasing at its root")
        self.laplace_sd = 1.0 / math.sqrt(beta * curv)
        grid = self.mode + np.linspace(-span, span, points) * self.laplace_sd
        u = cumulative_trapezoid(np.asarray(mean_grad(grid), dtype=float), grid, initial=0.0)
        logp = -beta * (u - u.min())
        dens = np.exp(logp)
        cdf = cumulative_trapezoid(dens, grid, initial=0.0)
        self._grid = grid
        self._cdf = cdf / cdf[-1]
        self.seed = int(seed)

    def __call__(self, n: int) -> np.ndarray:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))
        return np.interp(rng.random(int(n)), self._cdf, self._grid)


def gibbs_reference(
    objective: QuantileObjective | VarCvarObjective,
    spec: DistributionSpec | Ar1Spec,
    beta: float,
    seed: int = 0,
) -> GibbsReference1D:
    """Exact ``pi_beta`` sampler for a one-dimensional objective.

    The mean gradient is written through the data CDF, using the stationary
    law for an AR(1) stream.
    """
    law = spec.stationary_law() if isinstance(spec, Ar1Spec) else spec
    if isinstance(objective, QuantileObjective):
        q, g = objective.q, objective.gamma
        h = lambda t: -q + law.cdf(t) + 2 * g * t
        centre = reference_var(law, q)
    elif isinstance(objective, VarCvarObjective):
        if objective.payoff is not None:
            raise ContractViolation("exact reference needs the identity payoff")
        qb, g = objective.q_bar, objective.gamma
        h = lambda t: 1 - (1 - law.cdf(t)) / (1 - qb) + 2 * g * t
        centre = reference_var(law, qb)
    else:
        raise ContractViolation(f"no exact reference for {type(objective).__name__}")
    width = 10.0 * (abs(centre) + 10.0)
    return GibbsReference1D(h, beta, (centre - width, centre + width), seed=seed)


def stationary_reference(
    config: SgldConfig,
    oracle: GradientOracle,
    stream_factory: Callable[[np.random.Generator], object],
    chains: int,
    stride: int,
) -> SampleSet:
    """Pool every ``stride``-th post-burn-in iterate of a few long chains.

    A cheap stand-in for many independent chains when the reference step
    size is tiny: after burn-in each recorded iterate is a draw from the
    chain's stationary law, and ``stride`` controls their correlation.
    """
    if int(chains) != chains or chains < 1:
        raise ContractViolation(f"chains must be a positive integer, got {chains}")
    master = config.seed
    parts = []
    for i in range(int(chains)):
        stream = stream_factory(data_generator(master, i))
        parts.append(run_chain(chain_config(config, master, i), oracle, stream, stride=stride).iterates)
    return SampleSet(np.concatenate(parts), master, config)


Reference = Union[SampleSet, np.ndarray, SgldConfig, Callable[[int], np.ndarray]]


@dataclass
class RateResult:
    """Rate points, fitted slope and the reference used."""

    points: list[RatePoint]
    slope: float
    intercept: float
    coordinate: int
    reference: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "coordinate": self.coordinate,
            "reference": self.reference,
            "config": self.config,
            "points": [
                {"lambda": p.lam, "w1_distance": p.w_distance, "n_chains": p.n_chains, "seed": p.seed}
                for p in self.points
            ],
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema: {CSV_SCHEMA_RATE}\n")
            writer = csv.writer(fh)
            writer.writerow(["lambda", "w1_distance", "n_chains", "seed", "log_lambda", "log_w1"])
            for p in self.points:
                logw = math.log(p.w_distance) if p.w_distance > 0 else float("-inf")
                writer.writerow([repr(p.lam), repr(p.w_distance), p.n_chains, p.seed, repr(math.log(p.lam)), repr(logw)])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def _match_size(ref: np.ndarray, n: int, seed: int) -> np.ndarray:
    if ref.size < n:
        raise ContractViolation(f"reference has {ref.size} samples, need {n}")
    if ref.size == n:
        return ref
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    return ref[np.sort(rng.choice(ref.size, n, replace=False))]


def rate_experiment(
    oracle: GradientOracle,
    stream_factory: Callable[[np.random.Generator], object],
    lambdas: Sequence[float],
    n_chains: int,
    reference: Reference,
    *,
    beta: float,
    theta0,
    horizon: float | None = None,
    iterations: int | None = None,
    coordinate: int = 0,
    seed: int = 0,
    workers: int = 1,
) -> RateResult:
    """Measure ``W_1`` to a reference law at each step size and fit the rate.

    Every step size runs ``n_chains`` chains to terminal. With ``horizon``
    each chain runs ``ceil(horizon / lam)`` steps, so all step sizes cover
    the same continuous time; otherwise every chain runs ``iterations``
    steps. All step sizes share the master ``seed``.

    ``reference`` may be precomputed samples, an :class:`SgldConfig` for a
    finer-step run (same oracle, stream and chain count), or a callable
    ``n -> samples`` drawing from a known target.
    """
    lambdas = [float(l) for l in lambdas]
    if len(lambdas) < 2:
        raise ContractViolation("need at least two step sizes")
    if len(set(lambdas)) != len(lambdas):
        raise ContractViolation("step sizes must be distinct")
    if (horizon is None) == (iterations is None):
        raise ContractViolation("give exactly one of horizon and iterations")
    if not 0 <= coordinate < oracle.dim:
        raise ContractViolation(f"coordinate {coordinate} out of range for dimension {oracle.dim}")
    theta0 = tuple(as_point(theta0, oracle.dim, "theta0"))

    if isinstance(reference, SgldConfig):
        ref_set = sample_pi_beta(reference, oracle, stream_factory, n_chains, workers)
        ref = ref_set.coordinate(coordinate)
        ref_info = {"kind": "sgld", **reference.to_dict()}
    elif isinstance(reference, SampleSet):
        ref = _match_size(reference.coordinate(coordinate), n_chains, seed)
        ref_info = {"kind": "samples", "master_seed": reference.master_seed, **reference.config.to_dict()}
    elif isinstance(reference, np.ndarray):
        arr = reference if reference.ndim == 1 else reference[:, coordinate]
        ref = _match_size(np.asarray(arr, dtype=float), n_chains, seed)
        ref_info = {"kind": "samples"}
    elif callable(reference):
        ref = np.asarray(reference(n_chains), dtype=float).reshape(-1)
        ref_info = {"kind": "analytic", "sampler": type(reference).__name__, "seed": getattr(reference, "seed", None)}
    else:
        raise ContractViolation(f"unsupported reference type {type(reference).__name__}")

    points = []
    for lam in lambdas:
        n = math.ceil(round(horizon / lam, 9)) if horizon is not None else int(iterations)
        cfg = SgldConfig(lam, beta, n, theta0, 0, seed)
        try:
            sample = sample_pi_beta(cfg, oracle, stream_factory, n_chains, workers)
        except DivergedChainError as exc:
            raise DivergedChainError(exc.iteration, exc.chain, exc.partial, lam) from exc
        points.append(RatePoint(lam, wasserstein_p_1d(sample.coordinate(coordinate), ref, 1), int(n_chains), int(seed)))
    slope, intercept = fit_loglog_slope(points)
    config = {
        "lambdas": lambdas,
        "n_chains": int(n_chains),
        "beta": beta,
        "theta0": list(theta0),
        "horizon": horizon,
        "iterations": iterations,
        "seed": int(seed),
        "oracle": oracle.name,
    }
    return RateResult(points, slope, intercept, coordinate, ref_info, config)
