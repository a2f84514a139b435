"""``langevin-risk`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numeric failure or
diverged chain.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Sequence

from .errors import ContractViolation, NumericError
from .experiments import COMMANDS, REFERENCES, ConfigError, coerce, read_config_file, resolve, run, write_report

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    # defaults stay None so that unset flags do not mask config-file values
    a = p.add_argument
    a("--config", help="key = value file, or a JSON report whose config block is reused")
    a("--lambda", dest="lam", type=float, help="step size")
    a("--beta", type=float, help="inverse temperature (finite; 1e30 for plain SGD)")
    a("--gamma", type=float, help="L2 regularisation weight")
    a("--iters", type=float, help="iterations per chain")
    a("--burn-in", type=float, help="iterations discarded before recording")
    a("--chains", type=float, help="number of independent chains")
    a("--seed", type=int, help="master seed")
    a("--dist", action="append", help="distribution spec such as normal:0,1, t:3 or ar1:0.5 (repeatable)")
    a("--qbar", type=float, help="VaR/CVaR confidence level")
    a("--q", type=float, help="quantile level")
    a("--alpha", type=float, help="AR(1) coefficient of the quantile stream")
    a("--theta0", help="initial point, comma separated")
    a("--stride", type=float, help="record every stride-th post-burn-in iterate")
    a("--grid", type=float, help="grid size of the weight search")
    a("--mc-samples", type=float, help="Monte Carlo draws of the grid search")
    a("--cvar-samples", type=float, help="fresh draws per chain for the CVaR read-out")
    a("--workers", type=int, help="threads used for chains and grid points")
    a("--out", help="output path")
    a("--format", choices=("csv", "json"), help="output format")
    a("--paper-scale", action="store_true", default=None, help="use the published chain counts")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="langevin-risk", description="SGLD experiments for quantile, VaR/CVaR and portfolio CVaR.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "quantile": "quantile of an AR(1) stream",
        "var-cvar": "VaR and CVaR of one asset",
        "portfolio": "CVaR-optimal weights of two assets",
        "rate": "W1 convergence rate over step sizes",
        "oracle-grid": "grid-search CVaR reference for two assets",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        _add_common(p)
        if name == "rate":
            p.add_argument("--objective", choices=("quantile", "var-cvar", "portfolio"))
            p.add_argument("--lambdas", help="step sizes, comma separated")
            p.add_argument("--horizon", type=float, help="continuous time per chain; steps = ceil(horizon / lambda)")
            p.add_argument("--coordinate", type=int, help="parameter coordinate compared (portfolio w1 is 1)")
            p.add_argument("--reference", choices=REFERENCES, help="reference law for the distances")
            p.add_argument("--ref-lambda", type=float, help="step size of an SGLD reference")
            p.add_argument("--ref-chains", type=float, help="long chains pooled by the stationary reference")
            p.add_argument("--ref-spacing", type=float, help="time between pooled reference draws")
    return parser


def _flag_values(ns: argparse.Namespace) -> dict:
    skip = {"command", "config", "verbose"}
    out = {}
    for key, value in vars(ns).items():
        if key in skip or value is None:
            continue
        name, typed = coerce(key, value)
        out[name] = typed
    return out


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        file_values = read_config_file(ns.config) if ns.config else {}
        cfg = resolve(ns.command, file_values, _flag_values(ns))
    except ContractViolation as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run(cfg)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ContractViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.out:
        for path in write_report(report, cfg.out, cfg.format):
            print(f"wrote {path}", file=sys.stderr)
    json.dump(report.summary(), sys.stdout, indent=2, default=lambda o: o.item() if hasattr(o, "item") else str(o))
    sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
