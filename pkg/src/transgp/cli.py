"""Command line entry point ``transgp``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from . import estimators as est
from .asymptotics import GAUSSIAN, SQUARE_TRANSFORM, Population, joint_report
from .config import ExperimentConfig, load_config, schema_help
from .diagnostics import decay_check
from .errors import ConfigError, NumericalError, TransGPError
from .experiment import build_setup, replicate_locations, replicate_sample, run_experiment
from .fieldsim import FieldSample

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n\n{schema_help()}\n")
        raise SystemExit(EXIT_USAGE)


def _common(p):
    p.add_argument("--config", help="experiment config file (key = value)")
    p.add_argument("--seed", type=int, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="transgp",
                     description="Simulate transformed Gaussian fields and study covariance estimators.",
                     epilog=schema_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write one transformed field sample to CSV")
    _common(p)
    p.add_argument("--side", type=int, help="grid side (default: first of grid_sides)")
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--output", "-o", help="CSV path (default: stdout)")

    p = sub.add_parser("estimate", help="fit one sample file, print the result as JSON")
    _common(p)
    p.add_argument("--input", "-i", required=True, help="sample CSV written by 'simulate'")
    p.add_argument("--estimator", choices=["ml", "cv", "var"], default="ml")
    p.add_argument("--psi", type=float, nargs="+", help="known correlation parameters for 'var'")

    p = sub.add_parser("mc-run", help="run a Monte Carlo experiment")
    _common(p)
    p.add_argument("--output-dir", help="artifact directory (overrides config and environment)")

    p = sub.add_parser("asymptotics", help="analytic asymptotic covariance report as JSON")
    _common(p)
    p.add_argument("--side", type=int)
    p.add_argument("--population", choices=[GAUSSIAN, SQUARE_TRANSFORM],
                   help="default: from the config transform")
    p.add_argument("--output", "-o")

    p = sub.add_parser("decay-check", help="decay envelope of the inverse covariance as JSON")
    _common(p)
    p.add_argument("--output", "-o")

    sub.add_parser("version", help="print the package version")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _emit(text: str, path):
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _simulate(args):
    cfg = _config(args)
    setup = build_setup(cfg)
    side = args.side or cfg.grid_sides[0]
    sample = replicate_sample(cfg, setup, side, args.replicate)
    if args.output:
        sample.to_csv(args.output)
    else:
        sys.stdout.write(sample.to_csv_text())


def _estimate(args):
    cfg = _config(args)
    setup = build_setup(cfg)
    model = setup.model
    sample = FieldSample.from_csv(args.input)
    opts = est.OptimizerOptions(n_starts=cfg.multistarts, seed=cfg.seed)
    if args.estimator == "ml":
        result = est.optimize_ml(model, sample, opts)
    elif args.estimator == "cv":
        result = est.optimize_cv(model, sample, opts)
    else:
        psi = np.asarray(args.psi if args.psi else model.correlation_split(setup.theta_target)[1], float)
        s2 = est.variance_estimator(model, psi, sample)
        result = est.EstimationResult(est.VAR, np.array([s2]), s2, param_names=(model.param_names[model.variance_index],))
    print(json.dumps(result.as_dict(), indent=2, sort_keys=True))


def _mc_run(args):
    cfg = _config(args)
    art = run_experiment(cfg, args.output_dir)
    print(f"artifacts written to {art.output_dir} (config hash {art.manifest['config_hash'][:12]})")


def _asymptotics(args):
    cfg = _config(args)
    setup = build_setup(cfg)
    ls = replicate_locations(cfg, args.side or cfg.grid_sides[0], 0)
    kind = args.population or (GAUSSIAN if cfg.transform == "identity" else SQUARE_TRANSFORM)
    if kind == GAUSSIAN:
        pop = Population(GAUSSIAN)
    else:
        pop = Population(SQUARE_TRANSFORM, cap=cfg.asymptotics_cap,
                         latent_kmat=setup.latent.cov_matrix(np.asarray(cfg.theta0, float), ls))
    _emit(joint_report(setup.model, setup.theta_target, ls, pop).to_json(), args.output)


def _decay(args):
    cfg = _config(args)
    setup = build_setup(cfg)
    fits = []
    for side in cfg.grid_sides:
        ls = replicate_locations(cfg, side, 0)
        _, psi = setup.model.correlation_split(setup.theta_target)
        inv = est.correlation_inverse(setup.model, psi, ls) / setup.theta_target[setup.model.variance_index]
        fits.append(decay_check(inv, ls, cfg.decay_tau, cfg.decay_bins).to_dict())
    report = {"schema": "transgp.decay_report/1", "theta": [float(t) for t in setup.theta_target],
              "c_sup_fit_by_n": {str(f["n"]): f["c_sup_fit"] for f in fits}, "fits": fits}
    _emit(json.dumps(report, indent=2, sort_keys=True), args.output)


COMMANDS = {"simulate": _simulate, "estimate": _estimate, "mc-run": _mc_run,
            "asymptotics": _asymptotics, "decay-check": _decay,
            "version": lambda args: print(f"transgp {__version__}")}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}\n\n{schema_help()}", file=sys.stderr)
        return EXIT_USAGE
    except TransGPError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
