"""Monte Carlo experiments: simulate, estimate, summarize, persist.

Every artifact except ``run.log`` is a deterministic function of the
configuration, so re-running a config reproduces the files byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import estimators as est
from .asymptotics import GAUSSIAN, SQUARE_TRANSFORM, Population, joint_report
from .config import ExperimentConfig
from .covmodel import CovarianceModel, ParamBox, get_family
from .diagnostics import error_summary, standardize, wasserstein1_to_std_normal
from .errors import AllFiltered, ConfigError, DegenerateScale, ExperimentFailed, TransGPError
from .fieldsim import Transform, apply_transform, latent_factor, simulate_latent, transformed_covariance
from .locations import LocationSet, perturbed_grid

log = logging.getLogger(__name__)

MANIFEST_SCHEMA = "transgp.manifest/1"
ML_VARIANCE = "ML_VARIANCE"
ML_RANGE = "ML_RANGE"
FAIL_FRACTION = 0.5


@dataclass(frozen=True)
class Setup:
    """Models and targets derived from a config."""

    latent: CovarianceModel
    model: CovarianceModel
    theta_target: np.ndarray
    transform: Transform

    @property
    def names(self) -> tuple[str, ...]:
        return self.model.param_names


def build_setup(cfg: ExperimentConfig) -> Setup:
    try:
        family = get_family(cfg.family)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    if len(cfg.theta0) != family.p:
        raise ConfigError(f"theta0 needs {family.p} entries for family {cfg.family!r}")
    model = CovarianceModel(family, ParamBox(cfg.ml_box_lower, cfg.ml_box_upper),
                            cv_box=ParamBox([cfg.cv_box[0]], [cfg.cv_box[1]]))
    theta0 = np.asarray(cfg.theta0, dtype=float)
    if not model.box.contains(theta0):
        raise ConfigError(f"theta0 {cfg.theta0} outside the ML box")
    if cfg.transform == "identity":
        transform = Transform.identity()
    else:
        transform = Transform.square_centered(float(family.k(theta0, 0.0)))
    target = transformed_covariance(model, theta0, transform)
    if target is None:
        raise ConfigError(f"no closed-form covariance of the {cfg.transform} transform for {cfg.family!r}")
    _, theta_t = target
    if not model.box.contains(theta_t):
        raise ConfigError(f"target parameters {theta_t.tolist()} outside the ML box")
    _, psi_t = model.correlation_split(theta_t)
    if not model.psi_box.contains(psi_t):
        raise ConfigError(f"target correlation parameters {psi_t.tolist()} outside cv_box")
    return Setup(model, model, theta_t, transform)


# -- one replicate ----------------------------------------------------------

_CACHE: dict = {}


def _cached(key, make):
    if key not in _CACHE:
        if len(_CACHE) > 64:
            _CACHE.clear()
        _CACHE[key] = make()
    return _CACHE[key]


def replicate_locations(cfg: ExperimentConfig, side: int, replicate: int) -> LocationSet:
    rep = 0 if cfg.locations == "shared" else replicate
    return perturbed_grid(side, cfg.dim, cfg.perturb, seed=cfg.seed, replicate=rep)


def replicate_sample(cfg: ExperimentConfig, setup: Setup, side: int, replicate: int):
    theta0 = np.asarray(cfg.theta0, float)
    if cfg.locations == "shared":
        ls, factor = _cached((cfg.hash(), side), lambda: _shared(cfg, setup, side))
    else:
        ls = replicate_locations(cfg, side, replicate)
        factor = None
    z = simulate_latent(setup.latent, theta0, ls, seed=cfg.seed, replicate=replicate, factor=factor)
    return apply_transform(z, setup.transform)


def _shared(cfg, setup, side):
    ls = replicate_locations(cfg, side, 0)
    return ls, latent_factor(setup.latent, np.asarray(cfg.theta0, float), ls)


def _row(setup, side, n, replicate, label, values=None, res=None, status="ok", message=""):
    row = {"side": side, "n": n, "replicate": replicate, "estimator": label}
    for name in setup.names:
        row[name] = (values or {}).get(name, np.nan)
    row.update(criterion=np.nan if res is None else res.criterion_value,
               converged="" if res is None else bool(res.converged),
               at_boundary="" if res is None else bool(res.at_boundary),
               n_evals="" if res is None else res.n_evals,
               jitter_events="" if res is None else res.jitter_events,
               status=status, message=message or ("" if res is None else res.message))
    return row


def run_replicate(cfg: ExperimentConfig, side: int, replicate: int, setup: Setup | None = None) -> list[dict]:
    """All estimator rows for one (grid side, replicate); failures become rows with status ``failed``."""
    setup = setup or build_setup(cfg)
    model, names = setup.model, setup.names
    vi = model.variance_index
    sigma2_t, psi_t = model.correlation_split(setup.theta_target)
    try:
        sample = replicate_sample(cfg, setup, side, replicate)
    except TransGPError as exc:
        return [_row(setup, side, side**cfg.dim, replicate, "SIMULATION", status="failed",
                     message=f"{type(exc).__name__}: {exc}")]
    n = sample.n
    opts = est.OptimizerOptions(n_starts=cfg.multistarts, seed=cfg.seed, replicate=replicate)
    rows = []
    psi_names = [names[i] for i in model.psi_index]
    results = {}

    def attempt(label, fn):
        try:
            rows.extend(fn())
            return True
        except TransGPError as exc:
            rows.append(_row(setup, side, n, replicate, label, status="failed",
                             message=f"{type(exc).__name__}: {exc}"))
            return False

    def ml_joint():
        r = est.optimize_ml(model, sample, opts)
        return [_row(setup, side, n, replicate, est.ML, dict(zip(names, r.theta_hat)), r)]

    def ml_variance():
        o = est.OptimizerOptions(**{**opts.__dict__, "fixed": {i: setup.theta_target[i] for i in model.psi_index}})
        r = est.optimize_ml(model, sample, o)
        return [_row(setup, side, n, replicate, ML_VARIANCE, {names[vi]: r.theta_hat[vi]}, r)]

    def ml_range():
        o = est.OptimizerOptions(**{**opts.__dict__, "fixed": {vi: sigma2_t}})
        r = est.optimize_ml(model, sample, o)
        results["ml_range"] = r.theta_hat[model.psi_index]
        return [_row(setup, side, n, replicate, ML_RANGE, dict(zip(psi_names, results["ml_range"])), r)]

    def cv():
        r = est.optimize_cv(model, sample, opts)
        results["cv"] = r.theta_hat
        return [_row(setup, side, n, replicate, est.CV, dict(zip(psi_names, r.theta_hat)), r)]

    def var():
        s2 = est.variance_estimator(model, psi_t, sample)
        return [_row(setup, side, n, replicate, est.VAR, {names[vi]: s2})]

    def var_tapered():
        return [_row(setup, side, n, replicate, est.tapered_label(K),
                     {names[vi]: est.variance_estimator_tapered(model, psi_t, sample, K)})
                for K in cfg.taper_k]

    def aggregate():
        return [_row(setup, side, n, replicate, est.aggregate_label(lam),
                     dict(zip(psi_names, est.aggregate(results["ml_range"], results["cv"], lam))))
                for lam in cfg.lambdas]

    jobs = {"ml": ml_joint, "ml_variance": ml_variance, "ml_range": ml_range, "cv": cv,
            "var": var, "var_tapered": var_tapered}
    for key in ("ml", "ml_variance", "ml_range", "cv", "var", "var_tapered"):
        if key in cfg.estimators:
            attempt(key, jobs[key])
    if "aggregate" in cfg.estimators:
        if "ml_range" in results and "cv" in results:
            attempt("aggregate", aggregate)
        else:
            rows.append(_row(setup, side, n, replicate, "AGGREGATE", status="failed",
                             message="ml_range or cv failed"))
    return rows


def _job(args):
    cfg, side, replicate = args
    setup = _cached(("setup", cfg.hash()), lambda: build_setup(cfg))
    return run_replicate(cfg, side, replicate, setup)


# -- summaries ----------------------------------------------------------------


def _estimated_params(rows, names):
    return [nm for nm in names if any(np.isfinite(r[nm]) for r in rows)]


def _grouped(rows):
    groups: dict = {}
    for r in rows:
        if r["status"] == "ok":
            groups.setdefault((r["estimator"], r["n"]), []).append(r)
    return groups


def summarize(rows, setup: Setup, cfg: ExperimentConfig) -> tuple[list[dict], list[dict]]:
    """Error-summary rows and standardized-error W1 rows, one per (estimator, n, parameter)."""
    names = setup.names
    truth = dict(zip(names, setup.theta_target))
    lo = dict(zip(names, cfg.filter_lower)) if cfg.filter_lower else {}
    hi = dict(zip(names, cfg.filter_upper)) if cfg.filter_upper else {}
    summary, w1 = [], []
    for (label, n), grp in _grouped(rows).items():
        for nm in _estimated_params(grp, names):
            vals = np.array([r[nm] for r in grp], dtype=float)
            box = (lo.get(nm, -np.inf), hi.get(nm, np.inf))
            if label == est.CV and cfg.cv_filter is not None:
                box = (max(box[0], cfg.cv_filter[0]), min(box[1], cfg.cv_filter[1]))
            base = {"estimator": label, "n": n, "parameter": nm, "truth": truth[nm]}
            try:
                s = error_summary(vals[:, None], [truth[nm]], filter_box=box, estimator=label, n=n)
            except AllFiltered:
                summary.append({**base, "replicates_used": 0, "replicates_filtered": len(vals),
                                "mean": np.nan, "mse": np.nan, "bias_sq": np.nan, "variance": np.nan})
                continue
            keep = np.isfinite(vals) & (vals >= box[0]) & (vals <= box[1])
            summary.append({**base, "replicates_used": s.replicates_used,
                            "replicates_filtered": s.replicates_filtered, "mean": float(vals[keep].mean()),
                            "mse": float(s.mse[0]), "bias_sq": float(s.bias_sq[0]),
                            "variance": float(s.variance[0])})
            try:
                z = standardize(vals[keep], truth[nm], "empirical")
                dist = wasserstein1_to_std_normal(z)
            except DegenerateScale:
                dist = np.nan
            w1.append({**base, "replicates_used": int(keep.sum()), "w1": dist})
    order = lambda r: (r["estimator"], r["n"], r["parameter"])  # noqa: E731
    return sorted(summary, key=order), sorted(w1, key=order)


# -- persistence --------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "" if not np.isfinite(v) else repr(float(v))
    return str(v)


def _csv_text(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass
class RunArtifacts:
    output_dir: Path
    estimates: list[dict]
    summary: list[dict]
    wasserstein: list[dict]
    reports: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def rows_for(self, estimator: str, n: int | None = None) -> list[dict]:
        return [r for r in self.estimates if r["estimator"] == estimator and (n is None or r["n"] == n)
                and r["status"] == "ok"]

    def summary_for(self, estimator: str, n: int, parameter: str) -> dict:
        for r in self.summary:
            if (r["estimator"], r["n"], r["parameter"]) == (estimator, n, parameter):
                return r
        raise KeyError((estimator, n, parameter))

    def w1_for(self, estimator: str, n: int, parameter: str) -> float:
        for r in self.wasserstein:
            if (r["estimator"], r["n"], r["parameter"]) == (estimator, n, parameter):
                return r["w1"]
        raise KeyError((estimator, n, parameter))


def _workers(cfg) -> int:
    env = os.environ.get("TRANSGP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"TRANSGP_THREADS must be an integer, got {env!r}") from None
    return cfg.workers


def _asymptotic_reports(cfg, setup) -> tuple[dict, list]:
    reports, skipped = {}, []
    if cfg.asymptotics == "none":
        return reports, skipped
    for side in cfg.grid_sides:
        ls = replicate_locations(cfg, side, 0)
        if cfg.asymptotics == SQUARE_TRANSFORM and ls.n > cfg.asymptotics_cap:
            skipped.append({"n": ls.n, "reason": f"n exceeds asymptotics_cap={cfg.asymptotics_cap}"})
            continue
        if cfg.asymptotics == GAUSSIAN:
            pop = Population(GAUSSIAN)
        else:
            pop = Population(SQUARE_TRANSFORM, cap=cfg.asymptotics_cap,
                             latent_kmat=setup.latent.cov_matrix(np.asarray(cfg.theta0, float), ls))
        reports[ls.n] = joint_report(setup.model, setup.theta_target, ls, pop)
    return reports, skipped


def run_experiment(cfg: ExperimentConfig, output_dir=None) -> RunArtifacts:
    """Run every (grid side, replicate), summarize, and write the artifact directory.

    Raises ``ExperimentFailed`` (after writing artifacts) when more than half
    of the replicates of some grid side fail.
    """
    start = time.perf_counter()
    setup = build_setup(cfg)
    out = Path(output_dir or os.environ.get("TRANSGP_OUTPUT_DIR") or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, side, rep) for side in cfg.grid_sides for rep in range(cfg.replicates)]
    workers = _workers(cfg)
    if workers == 1:
        chunks = [run_replicate(cfg, s, r, setup) for _, s, r in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_job, jobs, chunksize=max(1, len(jobs) // (8 * workers))))
    rows = [r for chunk in chunks for r in chunk]

    failed_by_side = {}
    for (_, side, rep), chunk in zip(jobs, chunks):
        if any(r["status"] != "ok" for r in chunk):
            failed_by_side.setdefault(side, []).append(rep)

    summary, w1 = summarize(rows, setup, cfg)
    reports, skipped = _asymptotic_reports(cfg, setup)

    columns = ["side", "n", "replicate", "estimator", *setup.names,
               "criterion", "converged", "at_boundary", "n_evals", "jitter_events", "status", "message"]
    files = {
        "estimates.csv": _csv_text(rows, columns),
        "summary.csv": _csv_text(summary, ["estimator", "n", "parameter", "truth", "replicates_used",
                                           "replicates_filtered", "mean", "mse", "bias_sq", "variance"]),
        "wasserstein.csv": _csv_text(w1, ["estimator", "n", "parameter", "truth", "replicates_used", "w1"]),
        "config.cfg": cfg.to_text(runtime=False),
    }
    for n, rep in sorted(reports.items()):
        files[f"asymptotics_n{n}.json"] = rep.to_json() + "\n"
    for name, text in files.items():
        (out / name).write_text(text)

    manifest = {
        "schema": MANIFEST_SCHEMA,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "config": cfg.canonical(),
        "target_theta": [float(t) for t in setup.theta_target],
        "param_names": list(setup.names),
        "versions": {"transgp": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "failed_replicates": {str(k): v for k, v in sorted(failed_by_side.items())},
        "asymptotics_skipped": skipped,
        "files": {name: hashlib.sha256(text.encode()).hexdigest() for name, text in sorted(files.items())},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    elapsed = time.perf_counter() - start
    # wall time lives outside the deterministic artifacts
    with open(out / "run.log", "a") as fh:
        fh.write(f"config_hash={manifest['config_hash']} replicates={len(jobs)} "
                 f"workers={workers} wall_seconds={elapsed:.3f}\n")

    artifacts = RunArtifacts(out, rows, summary, w1, reports, manifest)
    too_many = {s: len(v) for s, v in failed_by_side.items() if len(v) > FAIL_FRACTION * cfg.replicates}
    if too_many:
        raise ExperimentFailed(f"more than half of the replicates failed for grid sides {sorted(too_many)}")
    return artifacts
