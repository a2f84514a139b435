"""Experiment runners behind the command-line interface.

Each runner takes a resolved :class:`ExperimentConfig` and returns a
:class:`Report` that embeds the config, so a report fed back through
``--config`` reproduces itself.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Optional

import numpy as np

from . import __version__
from .distributions import Ar1Spec, DistributionSpec, parse_spec, reference_cvar, reference_var, stream_factory
from .errors import ContractViolation
from .metrics import gibbs_reference, rate_experiment, stationary_reference
from .objectives import (
    GAMMA_CVAR,
    GAMMA_QUANTILE,
    PortfolioObjective,
    QuantileObjective,
    VarCvarObjective,
    objective_value_mc,
    softmax_weights,
)
from .reference import grid_search_cvar
from .sgld import SgldConfig, chain_config, data_generator, readout_generator, run_chain, sample_pi_beta

COMMANDS = ("quantile", "var-cvar", "portfolio", "rate", "oracle-grid")
OBJECTIVE_NAMES = ("quantile", "var-cvar", "portfolio")
REFERENCES = ("auto", "gibbs", "sgld", "stationary")
SGLD_REF_LAMBDA = 1e-5

SCHEMAS = {
    "trace": "langevin_risk/quantile-trace/v1",
    "chains": "langevin_risk/var-cvar-chains/v1",
    "portfolio": "langevin_risk/portfolio-chains/v1",
    "rate": "langevin_risk/rate-points/v1",
    "grid": "langevin_risk/grid-curve/v1",
}


class ConfigError(ContractViolation):
    """An experiment config is malformed or violates a parameter constraint."""


@dataclass
class ExperimentConfig:
    """Every setting of one command after defaults, config file and flags are merged."""

    command: str
    objective: Optional[str] = None
    dist: tuple[str, ...] = ()
    lam: float = 1e-4
    beta: float = 1e8
    gamma: Optional[float] = None
    iters: int = 10**6
    burn_in: int = 0
    chains: int = 1
    seed: int = 0
    q: float = 0.95
    qbar: float = 0.95
    alpha: float = 0.5
    theta0: Optional[tuple[float, ...]] = None
    stride: Optional[int] = None
    grid: int = 100
    mc_samples: int = 10**7
    cvar_samples: int = 10**6
    lambdas: tuple[float, ...] = (2e-5, 5e-5, 1e-4, 2e-4)
    horizon: Optional[float] = None
    coordinate: Optional[int] = None
    reference: str = "auto"
    ref_lambda: Optional[float] = None
    ref_chains: int = 20
    ref_spacing: float = 2.5
    workers: int = 1
    paper_scale: bool = False
    out: Optional[str] = None
    format: str = "json"

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for k in ("dist", "theta0", "lambdas"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d


FIELD_NAMES = {f.name for f in fields(ExperimentConfig)}

# per-command defaults layered over the dataclass defaults
_DEFAULTS: dict[str, dict[str, Any]] = {
    "quantile": dict(objective="quantile", theta0=(3.0,), gamma=GAMMA_QUANTILE, burn_in=10**4, chains=1, stride=100),
    "var-cvar": dict(objective="var-cvar", dist=("normal:0,1",), theta0=(0.0,), gamma=GAMMA_CVAR, chains=1000),
    "portfolio": dict(objective="portfolio", dist=("normal:1,2", "normal:0,1"), gamma=GAMMA_CVAR, chains=1000),
    "rate": dict(objective="quantile", chains=2000),
    "oracle-grid": dict(dist=("normal:1,2", "normal:0,1")),
}
_PAPER_CHAINS = {"var-cvar": 10000, "portfolio": 10000, "rate": 5000}
_RATE_HORIZON = {"quantile": 150.0, "var-cvar": 10.0, "portfolio": 50.0}
_RATE_DIST = {"quantile": (), "var-cvar": ("normal:0,1",), "portfolio": ("normal:1,2", "normal:0,1")}
_RATE_THETA0 = {"quantile": (3.0,), "var-cvar": (0.0,)}
_GAMMA = {"quantile": GAMMA_QUANTILE, "var-cvar": GAMMA_CVAR, "portfolio": GAMMA_CVAR}


# --- parsing ----------------------------------------------------------------


def _floats(value, name: str) -> tuple[float, ...]:
    if isinstance(value, str):
        parts = [p for p in value.replace(",", " ").split() if p]
    elif isinstance(value, (list, tuple)):
        parts = list(value)
    else:
        parts = [value]
    try:
        return tuple(float(p) for p in parts)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: expected numbers, got {value!r}") from exc


def _int(value, name: str) -> int:
    try:
        f = float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: expected an integer, got {value!r}") from exc
    if not f.is_integer():
        raise ConfigError(f"{name}: expected an integer, got {value!r}")
    return int(f)


def _bool(value, name: str) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{name}: expected a boolean, got {value!r}")


_INT_FIELDS = {"iters", "burn_in", "chains", "seed", "stride", "grid", "mc_samples", "cvar_samples", "coordinate",
               "ref_chains", "workers"}
_FLOAT_FIELDS = {"lam", "beta", "gamma", "q", "qbar", "alpha", "horizon", "ref_lambda", "ref_spacing"}
_ALIASES = {"lambda": "lam", "iterations": "iters", "burnin": "burn_in", "dists": "dist", "output": "out"}


def coerce(key: str, value) -> tuple[str, Any]:
    """Map a config key (flag spelling allowed) and raw value to a typed field."""
    name = key.strip().lstrip("-").replace("-", "_").lower()
    name = _ALIASES.get(name, name)
    if name not in FIELD_NAMES:
        raise ConfigError(f"unknown config key {key!r}")
    if value is None:
        return name, None
    # errors quote the key as the user spelled it
    label = key.strip()
    if name in _INT_FIELDS:
        return name, _int(value, label)
    if name in _FLOAT_FIELDS:
        return name, _floats(value, label)[0] if not isinstance(value, (int, float)) else float(value)
    if name in ("theta0", "lambdas"):
        return name, _floats(value, label)
    if name == "dist":
        items = value.split() if isinstance(value, str) else list(value)
        return name, tuple(str(v) for v in items)
    if name == "paper_scale":
        return name, _bool(value, label)
    return name, str(value) if not isinstance(value, str) else value.strip()


def read_config_file(path: str) -> dict[str, Any]:
    """Read ``key = value`` text, or the ``config`` block of a JSON report.

    Repeated distributions go on one line separated by spaces, or on
    indented continuation lines.
    """
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON in {path}: {exc}") from exc
        data = data.get("config", data)
        return dict(coerce(k, v) for k, v in data.items())
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"config: cannot parse {path}: {exc}") from exc
    return dict(coerce(k, v) for k, v in parser["config"].items())


def resolve(command: str, file_values: dict[str, Any] | None = None, flag_values: dict[str, Any] | None = None) -> ExperimentConfig:
    """Layer command defaults, config-file values and flags (in that order) and validate."""
    if command not in COMMANDS:
        raise ConfigError(f"command: unknown command {command!r}")
    merged: dict[str, Any] = dict(_DEFAULTS[command])
    given: dict[str, Any] = {}
    for source in (file_values or {}, flag_values or {}):
        for k, v in source.items():
            if v is not None:
                given[k] = v
    given.pop("command", None)
    merged.update(given)
    if merged.get("paper_scale") and "chains" not in given and command in _PAPER_CHAINS:
        merged["chains"] = _PAPER_CHAINS[command]
    if command == "rate":
        obj = merged.get("objective") or "quantile"
        if obj not in OBJECTIVE_NAMES:
            raise ConfigError(f"objective: unknown objective {obj!r}")
        for key, table in (("horizon", _RATE_HORIZON), ("dist", _RATE_DIST), ("gamma", _GAMMA)):
            if key not in given:
                merged[key] = table[obj]
        if "theta0" not in given and obj in _RATE_THETA0:
            merged["theta0"] = _RATE_THETA0[obj]
        if "coordinate" not in given:
            merged["coordinate"] = 1 if obj == "portfolio" else 0
    cfg = ExperimentConfig(command=command, **merged)
    validate(cfg)
    return cfg


def _specs(cfg: ExperimentConfig) -> list:
    out = []
    for text in cfg.dist:
        try:
            out.append(parse_spec(text))
        except ContractViolation as exc:
            raise ConfigError(f"dist: {exc}") from exc
    return out


def validate(cfg: ExperimentConfig) -> None:
    """Enforce the numeric constraints of the underlying modules, naming the field."""

    def need(ok: bool, name: str, msg: str) -> None:
        if not ok:
            raise ConfigError(f"{name}: {msg}")

    need(cfg.lam > 0 and math.isfinite(cfg.lam), "lambda", "must be positive and finite")
    need(cfg.beta > 0 and math.isfinite(cfg.beta), "beta", "must be positive and finite (use 1e30 for pure SGD)")
    need(cfg.gamma is None or (cfg.gamma > 0 and math.isfinite(cfg.gamma)), "gamma", "must be positive")
    need(cfg.iters >= 1, "iters", "must be >= 1")
    need(0 <= cfg.burn_in < cfg.iters, "burn_in", "must satisfy 0 <= burn_in < iters")
    need(cfg.chains >= 1, "chains", "must be >= 1")
    need(0 <= cfg.seed < 2**64, "seed", "must be a 64-bit unsigned integer")
    need(0 < cfg.q < 1, "q", "must lie in (0, 1)")
    need(0 < cfg.qbar < 1, "qbar", "must lie in (0, 1)")
    need(abs(cfg.alpha) < 1, "alpha", "must satisfy |alpha| < 1")
    need(cfg.stride is None or cfg.stride >= 1, "stride", "must be >= 1")
    need(cfg.workers >= 1, "workers", "must be >= 1")
    need(cfg.cvar_samples >= 1, "cvar_samples", "must be >= 1")
    need(cfg.format in ("csv", "json"), "format", "must be csv or json")
    need(cfg.theta0 is None or all(math.isfinite(t) for t in cfg.theta0), "theta0", "must be finite")
    specs = _specs(cfg)
    if cfg.command in ("portfolio", "oracle-grid") or (cfg.command == "rate" and cfg.objective == "portfolio"):
        need(len(specs) == 2, "dist", f"{cfg.command} needs exactly two distributions")
        need(all(isinstance(s, DistributionSpec) for s in specs), "dist", "assets must be scalar laws, not ar1 streams")
    elif cfg.command in ("var-cvar", "quantile", "rate"):
        need(len(specs) <= 1, "dist", "this objective takes at most one distribution")
        if cfg.objective == "var-cvar":
            need(len(specs) == 1, "dist", "var-cvar needs one distribution")
    if cfg.command in ("oracle-grid", "portfolio"):
        need(cfg.grid >= 2, "grid", "must be >= 2")
        need(cfg.mc_samples >= 10**4, "mc_samples", "must be >= 1e4")
    if cfg.command == "rate":
        need(len(cfg.lambdas) >= 2, "lambdas", "need at least two step sizes")
        need(len(set(cfg.lambdas)) == len(cfg.lambdas), "lambdas", "step sizes must be distinct")
        need(all(l > 0 and math.isfinite(l) for l in cfg.lambdas), "lambdas", "must be positive")
        need(cfg.horizon is not None and cfg.horizon > 0, "horizon", "must be positive")
        need(cfg.reference in REFERENCES, "reference", f"must be one of {', '.join(REFERENCES)}")
        need(cfg.ref_lambda is None or cfg.ref_lambda > 0, "ref_lambda", "must be positive")
        need(cfg.ref_chains >= 1, "ref_chains", "must be >= 1")
        need(cfg.ref_spacing > 0, "ref_spacing", "must be positive")
        dim = 3 if cfg.objective == "portfolio" else 1
        need(cfg.coordinate is not None and 0 <= cfg.coordinate < dim, "coordinate", f"must lie in [0, {dim})")
        need(not (cfg.reference == "gibbs" and cfg.objective == "portfolio"), "reference",
             "no exact reference for the portfolio objective")
    if cfg.theta0 is not None and cfg.command in ("quantile", "var-cvar", "portfolio", "rate"):
        dim = 3 if cfg.objective == "portfolio" else 1
        need(len(cfg.theta0) == dim, "theta0", f"needs {dim} coordinates")


# --- reports ------------------------------------------------------------------


@dataclass
class Table:
    schema: str
    header: list[str]
    rows: list[list[Any]]


@dataclass
class Report:
    command: str
    config: dict[str, Any]
    seeds: dict[str, Any]
    results: dict[str, Any]
    tables: dict[str, Table] = field(default_factory=dict)

    def summary(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "version": __version__,
            "config": self.config,
            "seeds": self.seeds,
            "results": self.results,
        }

    def to_json(self) -> dict[str, Any]:
        d = self.summary()
        d["tables"] = {
            name: {"schema": t.schema, "columns": t.header, "rows": t.rows} for name, t in self.tables.items()
        }
        return d


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def sidecar_path(out: str) -> str:
    root, ext = os.path.splitext(out)
    return (root if ext.lower() == ".csv" else out) + ".json"


def write_report(report: Report, out: str, fmt: str) -> list[str]:
    """Persist ``report``; CSV writes the main table plus a JSON summary beside it."""
    if fmt == "json":
        with open(out, "w") as fh:
            json.dump(report.to_json(), fh, indent=2, default=_json_default)
        return [out]
    written = []
    names = list(report.tables)
    for i, name in enumerate(names):
        table = report.tables[name]
        path = out if i == 0 else f"{os.path.splitext(out)[0]}.{name}.csv"
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema: {table.schema}\n")
            writer = csv.writer(fh)
            writer.writerow(table.header)
            for row in table.rows:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
        written.append(path)
    side = sidecar_path(out)
    with open(side, "w") as fh:
        json.dump(report.summary(), fh, indent=2, default=_json_default)
    written.append(side)
    return written


def _seeds(cfg: ExperimentConfig, **extra) -> dict[str, Any]:
    return {"master": cfg.seed, "chain_rule": "SeedSequence([master, chain, purpose]), purpose 0 noise, 1 data, 2 read-out", **extra}


def _stats(x: np.ndarray) -> dict[str, float]:
    x = np.asarray(x, dtype=float)
    return {"mean": float(x.mean()), "sd": float(x.std(ddof=1)) if x.size > 1 else 0.0}


# --- commands -------------------------------------------------------------------


def cmd_quantile(cfg: ExperimentConfig) -> Report:
    """Quantile estimation on an AR(1) (or i.i.d.) stream."""
    specs = _specs(cfg)
    spec = specs[0] if specs else Ar1Spec(cfg.alpha)
    law = spec.stationary_law() if isinstance(spec, Ar1Spec) else spec
    obj = QuantileObjective(cfg.q, cfg.gamma)
    oracle = obj.oracle()
    factory = stream_factory(spec)
    base = SgldConfig(cfg.lam, cfg.beta, cfg.iters, tuple(cfg.theta0), cfg.burn_in, cfg.seed)
    stride = cfg.stride or (cfg.iters - cfg.burn_in)
    rows, terminals, trace_sd = [], [], []
    for i in range(cfg.chains):
        tr = run_chain(chain_config(base, cfg.seed, i), oracle, factory(data_generator(cfg.seed, i)), stride=stride)
        terminals.append(float(tr.terminal[0]))
        trace_sd.append(float(tr.iterates[:, 0].std()))
        rows.extend([i, int(s), float(v)] for s, v in zip(tr.steps, tr.iterates[:, 0]))
    theta_star = reference_var(law, cfg.q)
    results = {
        "terminal": terminals[0] if cfg.chains == 1 else _stats(terminals),
        "terminals": terminals,
        "trace_sd": trace_sd,
        "theta_star": theta_star,
        "stream": str(spec),
    }
    table = Table(SCHEMAS["trace"], ["chain", "step", "theta"], rows)
    return Report(cfg.command, cfg.to_dict(), _seeds(cfg), results, {"trace": table})


def _readout(obj, points: np.ndarray, factory, cfg: ExperimentConfig) -> np.ndarray:
    out = np.empty(len(points))
    for i, p in enumerate(points):
        xs = factory(readout_generator(cfg.seed, i)).take(cfg.cvar_samples)
        out[i] = objective_value_mc(p if len(p) > 1 else p[0], obj, xs if xs.shape[1] > 1 else xs[:, 0])
    return out


def cmd_var_cvar(cfg: ExperimentConfig) -> Report:
    """VaR and CVaR of one asset: terminal theta and a fresh-batch plug-in."""
    spec = _specs(cfg)[0]
    obj = VarCvarObjective(cfg.qbar, cfg.gamma)
    factory = stream_factory(spec)
    base = SgldConfig(cfg.lam, cfg.beta, cfg.iters, tuple(cfg.theta0), cfg.burn_in, cfg.seed)
    sample = sample_pi_beta(base, obj.oracle(), factory, cfg.chains, cfg.workers)
    var = sample.coordinate(0)
    cvar = _readout(obj, sample.points, factory, cfg)
    law = spec.stationary_law() if isinstance(spec, Ar1Spec) else spec
    results = {
        "var_sgld": _stats(var),
        "cvar_sgld": _stats(cvar),
        "var_reference": reference_var(law, cfg.qbar),
        "cvar_reference": reference_cvar(law, cfg.qbar),
        "distribution": str(spec),
    }
    rows = [[i, float(v), float(c)] for i, (v, c) in enumerate(zip(var, cvar))]
    table = Table(SCHEMAS["chains"], ["chain", "var", "cvar"], rows)
    return Report(cfg.command, cfg.to_dict(), _seeds(cfg), results, {"chains": table})


def cmd_portfolio(cfg: ExperimentConfig) -> Report:
    """Two-asset CVaR minimisation with the grid-search oracle alongside."""
    specs = _specs(cfg)
    obj = PortfolioObjective(cfg.qbar, cfg.gamma, len(specs))
    factory = stream_factory(*specs)
    theta0 = tuple(cfg.theta0) if cfg.theta0 is not None else (0.0,) * (len(specs) + 1)
    base = SgldConfig(cfg.lam, cfg.beta, cfg.iters, theta0, cfg.burn_in, cfg.seed)
    sample = sample_pi_beta(base, obj.oracle(), factory, cfg.chains, cfg.workers)
    pts = sample.points
    weights = np.array([softmax_weights(p[1:]) for p in pts])
    cvar = _readout(obj, pts, factory, cfg)
    grid = grid_search_cvar(specs[0], specs[1], cfg.qbar, cfg.grid, cfg.mc_samples, cfg.seed, cfg.workers)
    results = {
        "weights_sgld": [_stats(weights[:, j]) for j in range(weights.shape[1])],
        "var_sgld": _stats(pts[:, 0]),
        "cvar_sgld": _stats(cvar),
        "reference": grid.summary(),
        "distributions": [str(s) for s in specs],
    }
    header = ["chain", "theta"] + [f"w{j + 1}" for j in range(len(specs))] + [f"g{j + 1}" for j in range(len(specs))] + ["cvar"]
    rows = [[i, *map(float, p), *map(float, w), float(c)] for i, (p, w, c) in enumerate(zip(pts, weights, cvar))]
    tables = {
        "chains": Table(SCHEMAS["portfolio"], header, rows),
        "grid": Table(SCHEMAS["grid"], ["weight", "cvar"], grid.curve.tolist()),
    }
    return Report(cfg.command, cfg.to_dict(), _seeds(cfg, grid=cfg.seed), results, tables)


def _rate_objective(cfg: ExperimentConfig):
    if cfg.objective == "quantile":
        return QuantileObjective(cfg.q, cfg.gamma)
    if cfg.objective == "var-cvar":
        return VarCvarObjective(cfg.qbar, cfg.gamma)
    return PortfolioObjective(cfg.qbar, cfg.gamma)


def cmd_rate(cfg: ExperimentConfig) -> Report:
    """W1 distance to a reference law across step sizes, with the fitted slope."""
    specs = _specs(cfg)
    if cfg.objective == "quantile" and not specs:
        specs = [Ar1Spec(cfg.alpha)]
    obj = _rate_objective(cfg)
    oracle = obj.oracle()
    factory = stream_factory(*specs)
    dim = oracle.dim
    theta0 = tuple(cfg.theta0) if cfg.theta0 is not None else (0.0,) * dim
    ref_seed = cfg.seed + 1
    kind = cfg.reference
    if kind == "auto":
        kind = "stationary" if cfg.objective == "portfolio" else "gibbs"
    if kind == "gibbs":
        reference = gibbs_reference(obj, specs[0], cfg.beta, seed=ref_seed)
        ref_lambda = None
    elif kind == "sgld":
        ref_lambda = cfg.ref_lambda or SGLD_REF_LAMBDA
        n = math.ceil(round(cfg.horizon / ref_lambda, 9))
        reference = SgldConfig(ref_lambda, cfg.beta, n, theta0, 0, ref_seed)
    else:
        ref_lambda = cfg.ref_lambda or min(cfg.lambdas) / 20
        burn = math.ceil(round(cfg.horizon / ref_lambda, 9))
        stride = max(1, math.ceil(round(cfg.ref_spacing / ref_lambda, 9)))
        per = math.ceil(cfg.chains / cfg.ref_chains)
        ref_cfg = SgldConfig(ref_lambda, cfg.beta, burn + per * stride, theta0, burn, ref_seed)
        reference = stationary_reference(ref_cfg, oracle, factory, cfg.ref_chains, stride)
    res = rate_experiment(
        oracle, factory, cfg.lambdas, cfg.chains, reference,
        beta=cfg.beta, theta0=theta0, horizon=cfg.horizon, coordinate=cfg.coordinate,
        seed=cfg.seed, workers=cfg.workers,
    )
    results = {
        "slope": res.slope,
        "intercept": res.intercept,
        "coordinate": res.coordinate,
        "reference": {"kind": kind, "lambda": ref_lambda, "seed": ref_seed},
        "points": res.summary()["points"],
        "distributions": [str(s) for s in specs],
    }
    rows = [[p.lam, p.w_distance, p.n_chains, p.seed, math.log(p.lam), math.log(p.w_distance) if p.w_distance > 0 else float("-inf")]
            for p in res.points]
    table = Table(SCHEMAS["rate"], ["lambda", "w1_distance", "n_chains", "seed", "log_lambda", "log_w1"], rows)
    return Report(cfg.command, cfg.to_dict(), _seeds(cfg, reference=ref_seed), results, {"rate": table})


def cmd_oracle_grid(cfg: ExperimentConfig) -> Report:
    """Standalone grid-search CVaR reference for two assets."""
    specs = _specs(cfg)
    grid = grid_search_cvar(specs[0], specs[1], cfg.qbar, cfg.grid, cfg.mc_samples, cfg.seed, cfg.workers)
    table = Table(SCHEMAS["grid"], ["weight", "cvar"], grid.curve.tolist())
    results = grid.summary()
    results["std_errors"] = grid.std_errors.tolist()
    return Report(cfg.command, cfg.to_dict(), _seeds(cfg), results, {"grid": table})


RUNNERS = {
    "quantile": cmd_quantile,
    "var-cvar": cmd_var_cvar,
    "portfolio": cmd_portfolio,
    "rate": cmd_rate,
    "oracle-grid": cmd_oracle_grid,
}


def run(cfg: ExperimentConfig) -> Report:
    return RUNNERS[cfg.command](cfg)
