"""Brute-force reference computations used to judge the Langevin estimates."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .distributions import DistributionSpec
from .errors import ContractViolation
from .sgld import GradientOracle, as_point

CSV_SCHEMA_GRID = "langevin_risk/grid-curve/v1"


def _samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size == 0:
        raise ContractViolation("need at least one sample")
    return x


def _order_index(q: float, n: int) -> int:
    if not 0 < q < 1:
        raise ContractViolation(f"level must lie in (0, 1), got {q}")
    # round first so that e.g. 0.95 * 100 counts as exactly 95
    return max(1, math.ceil(round(q * n, 9)))


def empirical_quantile(samples, q: float) -> float:
    """Lower empirical quantile: the ``ceil(q N)``-th smallest sample (1-based)."""
    x = _samples(samples)
    k = _order_index(q, x.size)
    return float(np.partition(x, k - 1)[k - 1])


def empirical_cvar(samples, q_bar: float) -> float:
    """Plug-in CVaR ``t + mean((x - t)_+) / (1 - q_bar)`` at the empirical quantile ``t``."""
    x = _samples(samples)
    t = empirical_quantile(x, q_bar)
    return t + float(np.maximum(x - t, 0.0).mean()) / (1 - q_bar)


def _cvar_with_se(x: np.ndarray, q_bar: float) -> tuple[float, float, float]:
    t = empirical_quantile(x, q_bar)
    terms = t + np.maximum(x - t, 0.0) / (1 - q_bar)
    return float(terms.mean()), t, float(terms.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


@dataclass
class GridSearchResult:
    """CVaR over a grid of two-asset weights and its minimiser."""

    w_star: float
    var_star: float
    cvar_star: float
    curve: np.ndarray
    cvar_se: float = 0.0
    seed: int = 0
    mc_samples: int = 0
    specs: tuple[str, str] = ("", "")
    q_bar: float = 0.95
    std_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def summary(self) -> dict:
        return {
            "w_star": self.w_star,
            "var_star": self.var_star,
            "cvar_star": self.cvar_star,
            "cvar_se": self.cvar_se,
            "seed": self.seed,
            "mc_samples": self.mc_samples,
            "grid": int(self.curve.shape[0]),
            "q_bar": self.q_bar,
            "specs": list(self.specs),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema: {CSV_SCHEMA_GRID}\n")
            writer = csv.writer(fh)
            writer.writerow(["weight", "cvar"])
            for w, c in self.curve:
                writer.writerow([repr(float(w)), repr(float(c))])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def grid_search_cvar(
    spec1: DistributionSpec,
    spec2: DistributionSpec,
    q_bar: float,
    grid: int = 100,
    mc_samples: int = 10**7,
    seed: int = 0,
    workers: int = 1,
) -> GridSearchResult:
    """Minimise CVaR of ``g X1 + (1 - g) X2`` over ``g`` on an even grid of [0, 1].

    One sample matrix is drawn and reweighted at every grid point, so the
    curve carries common random numbers and its argmin is stable.
    """
    if int(grid) != grid or grid < 2:
        raise ContractViolation(f"grid must be an integer >= 2, got {grid}")
    if mc_samples < 10**4:
        raise ContractViolation(f"mc_samples must be >= 1e4, got {mc_samples}")
    if not 0 < q_bar < 1:
        raise ContractViolation(f"q_bar must lie in (0, 1), got {q_bar}")
    ss = np.random.SeedSequence(int(seed))
    r1, r2 = (np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(2))
    x1 = np.asarray(spec1.sample(r1, int(mc_samples)), dtype=float)
    x2 = np.asarray(spec2.sample(r2, int(mc_samples)), dtype=float)
    weights = np.linspace(0.0, 1.0, int(grid))

    def at(g: float) -> tuple[float, float, float]:
        return _cvar_with_se(g * x1 + (1 - g) * x2, q_bar)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(at, weights))
    else:
        rows = [at(g) for g in weights]
    cvars = np.array([r[0] for r in rows])
    best = int(np.argmin(cvars))
    return GridSearchResult(
        w_star=float(weights[best]),
        var_star=rows[best][1],
        cvar_star=float(cvars[best]),
        curve=np.column_stack([weights, cvars]),
        cvar_se=rows[best][2],
        seed=int(seed),
        mc_samples=int(mc_samples),
        specs=(str(spec1), str(spec2)),
        q_bar=q_bar,
        std_errors=np.array([r[2] for r in rows]),
    )


@dataclass
class ClcEstimate:
    """Monte Carlo estimates of ``E|H(a, X) - H(b, X)| / |a - b|`` per parameter pair."""

    max_ratio: float
    ratios: np.ndarray
    std_errors: np.ndarray
    distances: np.ndarray


def validate_clc(
    oracle: GradientOracle,
    stream_factory: Callable[[np.random.Generator], object],
    theta_pairs: Sequence[tuple],
    draws: int = 10**5,
    seed: int = 0,
) -> ClcEstimate:
    """Estimate the conditional Lipschitz ratio of ``oracle`` over ``theta_pairs``.

    Both members of a pair see the same data draws. The result is a
    diagnostic: a ratio that stays finite and stable as the pairs shrink is
    evidence for the property, not a proof of it.
    """
    if draws < 10**4:
        raise ContractViolation(f"draws must be >= 1e4, got {draws}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    stream = stream_factory(rng)
    xs = stream.take(int(draws)) if oracle.data_dim else np.zeros((int(draws), 0))
    ratios, errors, dists = [], [], []
    for a, b in theta_pairs:
        a = as_point(a, oracle.dim)
        b = as_point(b, oracle.dim)
        dist = float(np.linalg.norm(a - b))
        if dist == 0:
            raise ContractViolation("parameter pairs must be distinct")
        diff = np.linalg.norm(oracle.batch(a, xs) - oracle.batch(b, xs), axis=1) / dist
        ratios.append(diff.mean())
        errors.append(diff.std(ddof=1) / math.sqrt(diff.size))
        dists.append(dist)
    ratios_arr = np.array(ratios)
    return ClcEstimate(float(ratios_arr.max()), ratios_arr, np.array(errors), np.array(dists))
