"""Langevin iteration engine.

A chain repeats ``theta <- theta - lam * H(theta, x) + sqrt(2 lam / beta) * xi``
with one fresh data vector ``x`` and one fresh standard normal vector ``xi``
per step. Oracles that ship a numba kernel run through a compiled loop;
anything else falls back to a plain Python loop over :func:`sgld_step`.
Both paths consume the generators in the same order, so for oracles whose
kernel mirrors the Python gradient they yield bit-identical chains.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, NamedTuple, Optional, Sequence

import numba as nb
import numpy as np

from .distributions import DataStream, _fill
from .errors import ContractViolation, DivergedChainError

logger = logging.getLogger(__name__)

#: Stand-in for an infinite inverse temperature (pure stochastic gradient descent).
BETA_SGD = 1e30

_NOISE, _DATA, _READOUT = 0, 1, 2

ParameterPoint = np.ndarray


class StepSizeWarning(UserWarning):
    """The step size exceeds the theoretical admissible bound."""


def as_point(theta, dim: int | None = None, name: str = "theta") -> np.ndarray:
    arr = np.array(theta, dtype=np.float64, ndmin=1)
    if arr.ndim != 1:
        raise ContractViolation(f"{name} must be a vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ContractViolation(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class SgldConfig:
    """Step size, inverse temperature, horizon and seeding of one chain."""

    lam: float
    beta: float
    iterations: int
    theta0: tuple[float, ...]
    burn_in: int = 0
    seed: int = 0

    def __post_init__(self):
        theta0 = tuple(float(v) for v in np.atleast_1d(np.asarray(self.theta0, dtype=float)))
        object.__setattr__(self, "theta0", theta0)
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ContractViolation(f"lambda must be positive and finite, got {self.lam}")
        if not self.beta > 0:
            raise ContractViolation(f"beta must be positive, got {self.beta}")
        if math.isinf(self.beta):
            raise ContractViolation(f"beta = inf is not supported; pass a large finite value such as {BETA_SGD:g}")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ContractViolation(f"iterations must be a positive integer, got {self.iterations}")
        if int(self.burn_in) != self.burn_in or not 0 <= self.burn_in < self.iterations:
            raise ContractViolation(f"burn_in must satisfy 0 <= burn_in < iterations, got {self.burn_in}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ContractViolation(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        object.__setattr__(self, "iterations", int(self.iterations))
        object.__setattr__(self, "burn_in", int(self.burn_in))
        object.__setattr__(self, "seed", int(self.seed))
        as_point(theta0, name="theta0")

    @property
    def dim(self) -> int:
        return len(self.theta0)

    @property
    def noise_scale(self) -> float:
        return math.sqrt(2.0 * self.lam / self.beta)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["theta0"] = list(self.theta0)
        return d


@dataclass(frozen=True)
class AssumptionConstants:
    """Constants an oracle declares for the convergence theory.

    ``k1_bound`` bounds the discontinuous part of the gradient (it may be an
    expectation surrogate when the bound depends on the data); ``e_k_rho`` is
    ``E[(1 + 2|X|)^(4 rho + 4)]`` under the data law.
    """

    rho: float
    l1: float
    l2: float
    k1_bound: float
    l_clc: float
    a_dissip: float
    b_dissip: float
    e_k_rho: float = 1.0

    def __post_init__(self):
        for name in ("rho", "l1", "l2", "k1_bound", "l_clc", "a_dissip", "b_dissip", "e_k_rho"):
            value = getattr(self, name)
            if not value >= 0:
                raise ContractViolation(f"{name} must be nonnegative, got {value}")
        if not self.a_dissip > 0:
            raise ContractViolation("a_dissip must be positive")
        if not self.l_clc > 0:
            raise ContractViolation("l_clc must be positive")
        if not self.e_k_rho >= 1:
            raise ContractViolation(f"e_k_rho must be >= 1, got {self.e_k_rho}")


@dataclass(frozen=True)
class GradientOracle:
    """A stochastic gradient ``H(theta, x) = F(theta, x) + G(theta, x)``.

    Parameters
    ----------
    grad
        ``(theta, x) -> H`` for one data vector.
    grad_batch
        Optional ``(theta, xs) -> (len(xs), dim)`` array of gradients.
    split
        Optional ``(theta, x) -> (F, G)``.
    g_bound
        Optional ``x -> K1`` bounding ``|G|`` coordinatewise.
    kernel, params
        Optional numba function ``kernel(theta, x, params, out)`` writing ``H``
        into ``out``; enables the compiled chain loop.
    """

    name: str
    dim: int
    data_dim: int
    grad: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_batch: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    split: Optional[Callable[[np.ndarray, np.ndarray], tuple]] = None
    g_bound: Optional[Callable[[np.ndarray], np.ndarray]] = None
    kernel: Any = None
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))
    constants: Optional[AssumptionConstants] = None

    def batch(self, theta, xs) -> np.ndarray:
        theta = as_point(theta, self.dim)
        xs = np.asarray(xs, dtype=float).reshape(len(xs), self.data_dim)
        if self.grad_batch is not None:
            return np.asarray(self.grad_batch(theta, xs), dtype=float).reshape(len(xs), self.dim)
        return np.array([self.grad(theta, x) for x in xs], dtype=float).reshape(len(xs), self.dim)

    def with_constants(self, constants: AssumptionConstants) -> "GradientOracle":
        return replace(self, constants=constants)


@dataclass
class ChainTrace:
    """Recorded post-burn-in iterates of one chain.

    ``iterates[k]`` is the state after step ``steps[k]``; the last recorded
    step is always the final one, so ``terminal == iterates[-1]``.
    """

    iterates: np.ndarray
    steps: np.ndarray
    config: SgldConfig
    stride: int

    @property
    def terminal(self) -> np.ndarray:
        return self.iterates[-1]


@dataclass
class SampleSet:
    """Terminal points of independent chains, one row per chain."""

    points: np.ndarray
    master_seed: int
    config: SgldConfig

    def __len__(self) -> int:
        return self.points.shape[0]

    def coordinate(self, j: int = 0) -> np.ndarray:
        return self.points[:, j]


def sgld_step(theta, lam: float, beta: float, grad, noise) -> np.ndarray:
    """One Langevin update ``theta - lam * grad + sqrt(2 lam / beta) * noise``."""
    theta = as_point(theta)
    grad = as_point(grad, theta.shape[0], "grad")
    noise = as_point(noise, theta.shape[0], "noise")
    if not (lam > 0 and beta > 0 and math.isfinite(lam) and math.isfinite(beta)):
        raise ContractViolation(f"need finite lambda > 0 and beta > 0, got {lam}, {beta}")
    return theta - lam * grad + math.sqrt(2.0 * lam / beta) * noise


_BLOCK = 4096


@nb.njit(nogil=True)
def _run_compiled(grad, theta, n, stride, lam, scale, params, drng, kinds, dparams, state, nrng, trace, g):
    n_rec = trace.shape[0]
    first = n - (n_rec - 1) * stride
    rec = 0
    d = theta.shape[0]
    m = kinds.shape[0]
    block = np.zeros((min(_BLOCK, n), max(m, 1)))
    pos = block.shape[0]
    for k in range(1, n + 1):
        if pos == block.shape[0]:
            # draw exactly the rows still needed so the stream ends where a step-by-step run would
            rows = min(block.shape[0], n - k + 1)
            if m > 0:
                _fill(drng, kinds, dparams, state, block[:rows])
            pos = 0
        x = block[pos]
        pos += 1
        grad(theta, x, params, g)
        for j in range(d):
            if not np.isfinite(g[j]):
                return k
        for j in range(d):
            theta[j] = theta[j] - lam * g[j] + scale * nrng.standard_normal()
        for j in range(d):
            if not np.isfinite(theta[j]):
                return k
        if k >= first and (k - first) % stride == 0:
            for j in range(d):
                trace[rec, j] = theta[j]
            rec += 1
    return 0


def derive_seed(master_seed: int, chain: int, purpose: int) -> int:
    """64-bit seed for one sub-stream (noise, data or read-out) of one chain."""
    ss = np.random.SeedSequence([int(master_seed), int(chain), int(purpose)])
    return int(ss.generate_state(1, np.uint64)[0])


def noise_generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def check_step_size(lam: float, constants: AssumptionConstants | None) -> None:
    if constants is None:
        return
    bound = lambda_max_nonconvex(constants).sharp
    if lam > bound:
        warnings.warn(f"lambda={lam:g} exceeds the admissible step size {bound:.3g}", StepSizeWarning, stacklevel=3)


def run_chain(config: SgldConfig, oracle: GradientOracle, stream, stride: int | None = None) -> ChainTrace:
    """Iterate the Langevin update ``config.iterations`` times.

    ``stream`` supplies one data vector per step (``next()``; a
    :class:`~langevin_risk.distributions.DataStream` also enables the compiled
    loop). The Gaussian noise comes from a generator seeded by
    ``config.seed``. Every ``stride``-th post-burn-in iterate is recorded,
    counted back from the final step; the default records the terminal only.
    """
    theta = as_point(config.theta0, oracle.dim, "theta0")
    span = config.iterations - config.burn_in
    stride = span if stride is None else int(stride)
    if stride < 1:
        raise ContractViolation(f"stride must be >= 1, got {stride}")
    stream_dim = getattr(stream, "dim", oracle.data_dim)
    if stream_dim != oracle.data_dim:
        raise ContractViolation(f"stream yields {stream_dim}-vectors, oracle expects {oracle.data_dim}")
    check_step_size(config.lam, oracle.constants)

    n_rec = span // stride
    trace = np.empty((n_rec, oracle.dim))
    steps = config.iterations - stride * np.arange(n_rec - 1, -1, -1)
    nrng = noise_generator(config.seed)
    scale = config.noise_scale

    if oracle.kernel is not None and isinstance(stream, DataStream):
        g = np.zeros(oracle.dim)
        status = _run_compiled(
            oracle.kernel, theta, config.iterations, stride, config.lam, scale, oracle.params,
            stream.rng, stream.kinds, stream.params, stream.state, nrng, trace, g,
        )
        if status:
            raise DivergedChainError(int(status))
    else:
        first = config.iterations - (n_rec - 1) * stride
        rec = 0
        for k in range(1, config.iterations + 1):
            x = stream.next() if oracle.data_dim else np.zeros(0)
            h = np.asarray(oracle.grad(theta, x), dtype=float).reshape(oracle.dim)
            if not np.all(np.isfinite(h)):
                raise DivergedChainError(k)
            theta = theta - config.lam * h + scale * nrng.standard_normal(oracle.dim)
            if not np.all(np.isfinite(theta)):
                raise DivergedChainError(k)
            if k >= first and (k - first) % stride == 0:
                trace[rec] = theta
                rec += 1
    return ChainTrace(trace, steps, config, stride)


def chain_config(config: SgldConfig, master_seed: int, chain: int) -> SgldConfig:
    return replace(config, seed=derive_seed(master_seed, chain, _NOISE))


def data_generator(master_seed: int, chain: int) -> np.random.Generator:
    return noise_generator(derive_seed(master_seed, chain, _DATA))


def readout_generator(master_seed: int, chain: int) -> np.random.Generator:
    return noise_generator(derive_seed(master_seed, chain, _READOUT))


def sample_pi_beta(
    config: SgldConfig,
    oracle: GradientOracle,
    stream_factory: Callable[[np.random.Generator], Any],
    chains: int,
    workers: int = 1,
) -> SampleSet:
    """Run independent chains and collect their terminal points.

    Chain ``i`` draws noise and data from generators seeded by
    ``(config.seed, i)``, so the result does not depend on ``workers``.
    """
    if int(chains) != chains or chains < 1:
        raise ContractViolation(f"chains must be a positive integer, got {chains}")
    chains = int(chains)
    points = np.full((chains, oracle.dim), np.nan)
    master = config.seed

    def one(i: int) -> np.ndarray:
        stream = stream_factory(data_generator(master, i))
        try:
            return run_chain(chain_config(config, master, i), oracle, stream).terminal
        except DivergedChainError as exc:
            raise DivergedChainError(exc.iteration, chain=i) from exc

    with warnings.catch_warnings():
        # one step-size warning per run is enough
        check_step_size(config.lam, oracle.constants)
        warnings.simplefilter("ignore", StepSizeWarning)
        if workers <= 1:
            for i in range(chains):
                try:
                    points[i] = one(i)
                except DivergedChainError as exc:
                    raise DivergedChainError(exc.iteration, i, points[:i].copy(), config.lam) from exc
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(one, i) for i in range(chains)]
                failure = None
                for i, fut in enumerate(futures):
                    try:
                        points[i] = fut.result()
                    except DivergedChainError as exc:
                        failure = failure or exc
                if failure is not None:
                    done = points[~np.isnan(points).any(axis=1)]
                    raise DivergedChainError(failure.iteration, failure.chain, done, config.lam) from failure
    logger.debug("sampled %d chains at lambda=%g", chains, config.lam)
    return SampleSet(points, master, config)


class StepSizeBounds(NamedTuple):
    """Admissible step sizes: the compact bound and the sharper one it is deduced from."""

    compact: float
    sharp: float


def lambda_max_nonconvex(c: AssumptionConstants) -> StepSizeBounds:
    a, l1, ek = c.a_dissip, c.l1, c.e_k_rho
    if not a > 0:
        raise ContractViolation("a_dissip must be positive")
    if not ek > 0:
        raise ContractViolation("e_k_rho must be positive")
    compact = min(min(a, a ** (1 / 3)) / (24 * (1 + l1) ** 2 * ek), 1 / (4 * a))
    if l1 == 0:
        sharp = 1 / (4 * a)
    else:
        sharp = min(
            a / (24 * l1**2 * ek),
            a**0.5 / (8 * (l1**3 * ek) ** 0.5),
            a ** (1 / 3) / (32 * l1**4 * ek) ** (1 / 3),
            1 / (4 * a),
        )
    return StepSizeBounds(compact, sharp)


def lambda_max_convex(a_hat: float, l_clc: float, l1: float, e_k_rho: float) -> float:
    """Step-size bound when the whole gradient is strongly monotone."""
    if not a_hat > 0:
        raise ContractViolation("a_hat must be positive")
    if not l_clc > 0:
        raise ContractViolation("l_clc must be positive")
    if not e_k_rho > 0:
        raise ContractViolation("e_k_rho must be positive")
    first = 1 / (2 * (a_hat + l_clc))
    if l1 == 0:
        return first
    return min(first, a_hat / (4 * l1**2 * e_k_rho))
