"""Wasserstein-1 normality diagnostics, MSE decompositions and the
inverse-covariance decay checker."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import AllFiltered, DegenerateScale, EmptySample

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _phi(t):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.asarray(t) ** 2)


def _Phi_antideriv(t):
    # d/dt [t Phi(t) + phi(t)] = Phi(t)
    t = np.asarray(t, dtype=float)
    return t * ndtr(t) + _phi(t)


def wasserstein1_to_std_normal(sample) -> float:
    """``W1(F_n, Phi) = int |F_n(t) - Phi(t)| dt``, integrated exactly.

    Between consecutive order statistics ``F_n`` is constant, so each piece
    reduces to the antiderivative ``t Phi(t) + phi(t)`` of ``Phi``, split where
    ``Phi`` crosses the step height. Both tails are closed form.
    """
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    if x.size == 0:
        raise EmptySample("Wasserstein distance of an empty sample")
    if not np.all(np.isfinite(x)):
        raise ValueError("sample contains non-finite values")
    n = x.size
    # left tail: int_{-inf}^{x_1} Phi
    total = float(_Phi_antideriv(x[0]))
    # right tail: int_{x_n}^{inf} (1 - Phi) = phi(x_n) - x_n (1 - Phi(x_n))
    total += float(_phi(x[-1]) - x[-1] * ndtr(-x[-1]))
    if n == 1:
        return total
    a, b = x[:-1], x[1:]
    c = np.arange(1, n) / n
    cross = np.clip(ndtri(c), a, b)
    G = _Phi_antideriv
    # |c - Phi| integrated over [a, cross] (Phi <= c) and [cross, b] (Phi >= c)
    left = c * (cross - a) - (G(cross) - G(a))
    right = (G(b) - G(cross)) - c * (b - cross)
    return total + float(np.sum(left) + np.sum(right))


def standardize(samples, center: float, scale="empirical") -> np.ndarray:
    """``(x - center) / scale``; ``scale="empirical"`` uses the sample SD (ddof=1)."""
    x = np.asarray(samples, dtype=float)
    if isinstance(scale, str):
        if scale != "empirical":
            raise ValueError(f"unknown scale {scale!r}")
        if x.size < 2:
            raise DegenerateScale("empirical scale needs at least two samples")
        scale = float(np.std(x, ddof=1))
        if scale < 1e-14:
            raise DegenerateScale(f"empirical standard deviation {scale:.3e} is degenerate")
    elif not scale > 0:
        raise DegenerateScale(f"scale must be positive, got {scale}")
    return (x - center) / scale


@dataclass
class ErrorSummary:
    """Per-coordinate MSE about the truth, split as ``bias^2 + variance``.

    The variance uses 1/N normalization so the split is exact.
    """

    estimator: str
    n: int
    replicates_used: int
    replicates_filtered: int
    mse: np.ndarray
    bias_sq: np.ndarray
    variance: np.ndarray

    def as_rows(self, names=None):
        names = names or [f"theta{k}" for k in range(len(self.mse))]
        return [
            {"estimator": self.estimator, "n": self.n, "parameter": nm,
             "replicates_used": self.replicates_used, "replicates_filtered": self.replicates_filtered,
             "mse": float(m), "bias_sq": float(b), "variance": float(v)}
            for nm, m, b, v in zip(names, self.mse, self.bias_sq, self.variance)
        ]


def error_summary(estimates, truth, filter_box=None, estimator: str = "", n: int = 0) -> ErrorSummary:
    """MSE decomposition of an ``(N, p)`` array of estimates.

    Rows with any coordinate outside ``filter_box = (lower, upper)`` are
    dropped and counted.
    """
    est = np.asarray(estimates, dtype=float)
    if est.ndim == 1:
        est = est[:, None]
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    keep = np.all(np.isfinite(est), axis=1)
    if filter_box is not None:
        lo, hi = (np.broadcast_to(np.asarray(v, float), truth.shape) for v in filter_box)
        keep &= np.all((est >= lo) & (est <= hi), axis=1)
    used = est[keep]
    if used.shape[0] == 0:
        raise AllFiltered(f"all {est.shape[0]} replicates were filtered out")
    err = used - truth
    bias = err.mean(axis=0)
    variance = np.mean((err - bias) ** 2, axis=0)
    bias_sq = bias**2
    return ErrorSummary(estimator, n, int(keep.sum()), int((~keep).sum()),
                        mse=bias_sq + variance, bias_sq=bias_sq, variance=variance)


@dataclass
class DecayFit:
    """Envelope ``c_sup_fit / (1 + h^(d + tau))`` of ``|inv_ij|`` against max-norm distance ``h``."""

    tau: float
    c_sup_fit: float
    bins: list = field(default_factory=list)
    violations: int = 0
    n: int = 0
    dim: int = 0

    def to_dict(self) -> dict:
        return {"schema": "transgp.decay_fit/1", "tau": self.tau, "c_sup_fit": self.c_sup_fit,
                "violations": self.violations, "n": self.n, "dim": self.dim,
                "bins": [{"distance_lo": lo, "distance_hi": hi, "max_abs_inverse_entry": v, "pairs": c}
                         for lo, hi, v, c in self.bins]}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def decay_check(inv, ls, tau: float, n_bins: int = 10) -> DecayFit:
    """Fit the polynomial decay envelope of an inverse covariance matrix.

    Pairs (including the diagonal, at distance 0) are binned by max-norm
    distance into ``n_bins`` equal-width bins; empty bins are omitted.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    inv = np.abs(np.asarray(inv, dtype=float))
    h = np.asarray(ls.maxnorm_distances)
    iu = np.triu_indices(ls.n)
    hv, av = h[iu], inv[iu]
    weight = 1.0 + hv ** (ls.dim + tau)
    c_sup = float(np.max(av * weight))
    violations = int(np.sum(av > c_sup / weight * (1.0 + 1e-12)))
    hmax = float(hv.max())
    edges = np.linspace(0.0, hmax if hmax > 0 else 1.0, n_bins + 1)
    which = np.clip(np.searchsorted(edges, hv, side="right") - 1, 0, n_bins - 1)
    bins = []
    for b in range(n_bins):
        mask = which == b
        if mask.any():
            bins.append((float(edges[b]), float(edges[b + 1]), float(av[mask].max()), int(mask.sum())))
    return DecayFit(tau=float(tau), c_sup_fit=c_sup, bins=bins, violations=violations, n=ls.n, dim=ls.dim)


def normal_w1_baseline(n: int, draws: int, seed: int = 0) -> np.ndarray:
    """W1 of ``draws`` standard-normal samples of size ``n`` (reference boxplot)."""
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    return np.array([wasserstein1_to_std_normal(gen.standard_normal(n)) for _ in range(draws)])
