"""Gaussian maximum likelihood and leave-one-out cross validation.

The ML criterion is ``L(theta) = (log det R + y' R^-1 y) / n`` and the CV
criterion is the mean squared virtual leave-one-out residual,
``CV(psi) = y' C^-1 diag(C^-1)^-2 C^-1 y / n``, computed from one explicit
inverse of the correlation matrix. Both are minimized over a box with
L-BFGS-B in log coordinates, from several random starts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import linalg
from . import rng as _rng
from .covmodel import CovarianceModel, ParamBox
from .errors import AllStartsFailed, NotPositiveDefinite

log = logging.getLogger(__name__)

ML = "ML"
CV = "CV"
VAR = "VAR"


def tapered_label(K: float) -> str:
    return f"VAR_TAPERED({K:g})"


def aggregate_label(lam: float) -> str:
    return f"AGGREGATE({lam:g})"


@dataclass
class EstimationResult:
    estimator: str
    theta_hat: np.ndarray
    criterion_value: float
    converged: bool = True
    at_boundary: bool = False
    multistart_spread: float = 0.0
    jitter_events: int = 0
    param_names: tuple[str, ...] = ()
    n_evals: int = 0
    message: str = ""

    def as_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "theta_hat": [float(t) for t in self.theta_hat],
            "param_names": list(self.param_names),
            "criterion_value": float(self.criterion_value),
            "converged": bool(self.converged),
            "at_boundary": bool(self.at_boundary),
            "multistart_spread": float(self.multistart_spread),
            "jitter_events": int(self.jitter_events),
            "n_evals": int(self.n_evals),
            "message": self.message,
        }


@dataclass
class OptimizerOptions:
    """Multistart settings.

    ``gtol`` bounds the sup-norm of the projected gradient in log
    coordinates. ``fixed`` maps parameter indices to known values (ML only).
    """

    n_starts: int = 5
    gtol: float = 1e-8
    maxiter: int = 500
    seed: int = 0
    replicate: int = 0
    fixed: dict[int, float] = field(default_factory=dict)
    jitter: linalg.JitterPolicy = linalg.DEFAULT_JITTER


def _values(sample) -> np.ndarray:
    return np.asarray(sample.values, dtype=float)


# -- maximum likelihood -----------------------------------------------------


def _ml_eval(model: CovarianceModel, theta, sample, grad: bool,
             policy: linalg.JitterPolicy = linalg.DEFAULT_JITTER):
    ls, y = sample.locations, _values(sample)
    n = y.size
    theta = model.box.check(theta)
    if grad:
        R, dRs = model.family.k_and_grad(theta, ls.euclidean_distances)
    else:
        R = model.cov_matrix(theta, ls)
    try:
        f = linalg.cholesky(R, policy)
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(str(exc), theta=theta) from exc
    alpha = linalg.solve(f, y)
    value = (f.logdet + y @ alpha) / n
    if not grad:
        return value, None, f.jitter_applied
    rinv_lower = linalg.inverse_lower(f)
    rinv_diag = np.diag(rinv_lower)
    g = np.empty(model.p)
    for i in range(model.p):
        dR = dRs[i]
        # tr(R^-1 dR) from the lower triangle of the symmetric inverse
        tr = 2.0 * np.sum(rinv_lower * dR) - rinv_diag @ np.diag(dR)
        g[i] = (tr - alpha @ dR @ alpha) / n
    return value, g, f.jitter_applied


def ml_criterion(model: CovarianceModel, theta, sample) -> float:
    """``(log det R_theta + y' R_theta^-1 y) / n``."""
    return float(_ml_eval(model, theta, sample, grad=False)[0])


def ml_score(model: CovarianceModel, theta, sample) -> np.ndarray:
    """Gradient of :func:`ml_criterion`:
    ``tr(R^-1 dR_i) / n - y' R^-1 dR_i R^-1 y / n``."""
    return _ml_eval(model, theta, sample, grad=True)[1]


# -- cross validation -------------------------------------------------------


def _cv_eval(model: CovarianceModel, psi, sample, grad: bool,
             policy: linalg.JitterPolicy = linalg.DEFAULT_JITTER):
    ls, y = sample.locations, _values(sample)
    n = y.size
    psi = model.psi_box.check(psi)
    try:
        f = linalg.cholesky(model.correlation_matrix(psi, ls), policy)
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(str(exc), theta=psi) from exc
    cinv = linalg.inverse(f)
    d = np.diag(cinv)
    a = cinv @ y
    resid = a / d
    value = resid @ resid / n
    if not grad:
        return value, None, f.jitter_applied
    g = []
    for dC in model.correlation_deriv_matrices(psi, ls):
        cinv_dc = cinv @ dC
        diag_b = np.einsum("ij,ji->i", cinv_dc, cinv)
        # y' A y with A = C^-1 D^-2 (diag(C^-1 dC C^-1) D^-1 - C^-1 dC) C^-1
        g.append(2.0 / n * np.sum(a / d**2 * (diag_b * a / d - cinv_dc @ a)))
    return value, np.array(g), f.jitter_applied


def cv_criterion(model: CovarianceModel, psi, sample) -> float:
    return float(_cv_eval(model, psi, sample, grad=False)[0])


def cv_gradient(model: CovarianceModel, psi, sample) -> np.ndarray:
    return _cv_eval(model, psi, sample, grad=True)[1]


def loo_residuals(model: CovarianceModel, psi, sample) -> np.ndarray:
    """Virtual leave-one-out residuals ``(C^-1 y)_i / (C^-1)_ii``."""
    psi = model.psi_box.check(psi)
    f = linalg.cholesky(model.correlation_matrix(psi, sample.locations))
    cinv = linalg.inverse(f)
    return (cinv @ _values(sample)) / np.diag(cinv)


def cv_quadratic_matrices(model: CovarianceModel, psi, ls) -> list[np.ndarray]:
    """Matrices ``A_i`` with ``dCV/dpsi_i = (2/n) y' A_i y`` (not symmetrized)."""
    psi = model.psi_box.check(psi)
    cinv = linalg.inverse(linalg.cholesky(model.correlation_matrix(psi, ls)))
    dinv = 1.0 / np.diag(cinv)
    out = []
    for dC in model.correlation_deriv_matrices(psi, ls):
        cinv_dc = cinv @ dC
        diag_b = np.einsum("ij,ji->i", cinv_dc, cinv)
        inner = np.diag(diag_b * dinv) - cinv_dc
        out.append((cinv * dinv**2) @ inner @ cinv)
    return out


# -- optimization -----------------------------------------------------------


class _Objective:
    """Wraps a criterion in log coordinates of the free parameters."""

    def __init__(self, evaluate, full_theta):
        self.evaluate = evaluate
        self.full_theta = full_theta
        self.n_evals = 0
        self.jitter_events = 0

    def __call__(self, x):
        theta = self.full_theta(np.exp(x))
        self.n_evals += 1
        try:
            value, g, jitter = self.evaluate(theta)
        except NotPositiveDefinite:
            return np.inf, np.zeros_like(x)
        if jitter > 0:
            self.jitter_events += 1
        return float(value), g * np.exp(x)


def _projected_grad_norm(x, g, lo, hi) -> float:
    pg = np.where((x <= lo) & (g > 0), 0.0, g)
    pg = np.where((x >= hi) & (pg < 0), 0.0, pg)
    return float(np.max(np.abs(pg))) if pg.size else 0.0


def _run_start(obj: _Objective, x0, lo, hi, opts: OptimizerOptions):
    bounds = list(zip(lo, hi))
    res = minimize(obj, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": opts.maxiter, "ftol": 1e-15, "gtol": opts.gtol, "maxcor": 20})
    x, fx = np.clip(res.x, lo, hi), float(res.fun)
    fx, gx = obj(x)
    pg = _projected_grad_norm(x, gx, lo, hi)
    if pg <= opts.gtol or not np.isfinite(fx):
        return x, fx, pg
    # line search stalled: derivative-free polish, then one more quasi-Newton pass
    nm = minimize(lambda z: obj(z)[0], x, method="Nelder-Mead", bounds=bounds,
                  options={"xatol": 1e-10, "fatol": 1e-15, "maxiter": 200 * len(x)})
    if np.isfinite(nm.fun) and nm.fun <= fx:
        res = minimize(obj, np.clip(nm.x, lo, hi), jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": opts.maxiter, "ftol": 1e-15, "gtol": opts.gtol})
        x2 = np.clip(res.x, lo, hi)
        f2, g2 = obj(x2)
        if f2 <= fx:
            x, fx, pg = x2, f2, _projected_grad_norm(x2, g2, lo, hi)
    return x, fx, pg


def _multistart(evaluate, box: ParamBox, free: list[int], full_theta, opts: OptimizerOptions,
                stream_label: str):
    lo, hi = np.log(box.lower[free]), np.log(box.upper[free])
    gen = _rng.stream(opts.seed, opts.replicate, _rng.MULTISTART, stream_label)
    starts = gen.uniform(lo, hi, size=(opts.n_starts, len(free)))
    obj = _Objective(evaluate, full_theta)
    candidates = []
    for x0 in starts:
        f0, _ = obj(x0)
        x, fx, pg = _run_start(obj, x0, lo, hi, opts)
        if np.isfinite(f0) and (not np.isfinite(fx) or f0 < fx):
            x, fx, pg = x0, f0, _projected_grad_norm(x0, obj(x0)[1], lo, hi)
        if np.isfinite(fx):
            candidates.append((fx, tuple(np.exp(x)), pg, f0))
    if not candidates:
        raise AllStartsFailed(f"all {opts.n_starts} starts failed (not positive definite)")
    candidates.sort(key=lambda c: (c[0], c[1]))
    best_f, best_free, best_pg, _ = candidates[0]
    logs = np.log(np.array([c[1] for c in candidates]))
    spread = float(np.max(np.abs(logs - logs[0]))) if len(candidates) > 1 else 0.0
    fvals = np.array([c[0] for c in candidates])
    starts_differ = len(candidates) > 1 and np.ptp(logs, axis=0).max() > 1e-6
    flat = bool(starts_differ and np.ptp(fvals) <= 1e-13 * max(1.0, abs(best_f)))
    converged = best_pg <= opts.gtol and not flat
    message = "flat criterion: all starts tie" if flat else ("" if converged else f"projected gradient {best_pg:.2e}")
    best_free = np.array(best_free)
    return dict(theta_free=best_free, value=best_f, converged=converged, spread=spread,
                at_boundary=box.subset(free).at_boundary(best_free) if free else False,
                n_evals=obj.n_evals, jitter_events=obj.jitter_events, message=message)


def optimize_ml(model: CovarianceModel, sample, opts: OptimizerOptions | None = None) -> EstimationResult:
    """Multistart minimization of the ML criterion over ``model.box``.

    Coordinates listed in ``opts.fixed`` are held at their given value.
    """
    opts = opts or OptimizerOptions()
    free = [i for i in range(model.p) if i not in opts.fixed]
    base = np.zeros(model.p)
    for i, v in opts.fixed.items():
        base[i] = v

    def full_theta(t_free):
        theta = base.copy()
        theta[free] = t_free
        return theta

    def evaluate(theta):
        value, g, jitter = _ml_eval(model, theta, sample, grad=True, policy=opts.jitter)
        return value, g[free], jitter

    if not free:
        value = ml_criterion(model, base, sample)
        return EstimationResult(ML, base, value, param_names=model.param_names)
    out = _multistart(evaluate, model.box, free, full_theta, opts, "ml" + "".join(map(str, free)))
    return EstimationResult(
        ML, full_theta(out["theta_free"]), out["value"], out["converged"], out["at_boundary"],
        out["spread"], out["jitter_events"], model.param_names, out["n_evals"], out["message"])


def optimize_cv(model: CovarianceModel, sample, opts: OptimizerOptions | None = None) -> EstimationResult:
    """Multistart minimization of the LOO criterion over the correlation box."""
    opts = opts or OptimizerOptions()
    box = model.psi_box
    free = list(range(box.dim))

    def evaluate(psi):
        return _cv_eval(model, psi, sample, grad=True, policy=opts.jitter)

    out = _multistart(evaluate, box, free, lambda t: np.asarray(t, float), opts, "cv")
    names = tuple(model.param_names[i] for i in model.psi_index)
    return EstimationResult(
        CV, out["theta_free"], out["value"], out["converged"], out["at_boundary"],
        out["spread"], out["jitter_events"], names, out["n_evals"], out["message"])


# -- variance-only estimators -----------------------------------------------


def correlation_inverse(model: CovarianceModel, psi_known, ls) -> np.ndarray:
    return linalg.inverse(linalg.cholesky(model.correlation_matrix(psi_known, ls)))


def tapered_inverse(model: CovarianceModel, psi_known, ls, K: float) -> np.ndarray:
    """``C^-1`` with entries zeroed where the max-norm distance exceeds ``K``."""
    if K < 0:
        raise ValueError("taper radius must be nonnegative")
    return correlation_inverse(model, psi_known, ls) * (ls.maxnorm_distances <= K)


def variance_estimator(model: CovarianceModel, psi_known, sample) -> float:
    """``y' C^-1 y / n`` with the correlation parameters known."""
    y = _values(sample)
    f = linalg.cholesky(model.correlation_matrix(psi_known, sample.locations))
    return float(y @ linalg.solve(f, y) / y.size)


def variance_estimator_tapered(model: CovarianceModel, psi_known, sample, K: float) -> float:
    y = _values(sample)
    return float(y @ tapered_inverse(model, psi_known, sample.locations, K) @ y / y.size)


def aggregate(psi_ml, psi_cv, lam: float) -> np.ndarray:
    """Convex combination ``lam * psi_ml + (1 - lam) * psi_cv``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return lam * np.asarray(psi_ml, float) + (1.0 - lam) * np.asarray(psi_cv, float)
