"""Parametric isotropic stationary covariance families.

A family is a function ``k_theta(h)`` of the Euclidean lag length ``h`` with
analytic first and second derivatives in ``theta``. Families that declare a
multiplicative variance (``k = sigma2 * c_psi``) expose the correlation
``c_psi`` used by cross validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from .errors import NoVarianceSplit, ParamOutOfBox, UnsupportedOrder


@dataclass(frozen=True)
class ParamBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("lower and upper bounds differ in length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo >= hi):
            raise ValueError(f"box needs lower < upper componentwise, got {lo} and {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, theta) -> bool:
        t = np.asarray(theta, dtype=float)
        return t.shape == self.lower.shape and bool(np.all(t >= self.lower) and np.all(t <= self.upper))

    def check(self, theta) -> np.ndarray:
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        if not self.contains(t):
            raise ParamOutOfBox(f"theta={t.tolist()} outside box [{self.lower.tolist()}, {self.upper.tolist()}]")
        return t

    def at_boundary(self, theta, rel: float = 1e-6) -> bool:
        t = np.asarray(theta, dtype=float)
        tol = rel * (self.upper - self.lower)
        return bool(np.any(t - self.lower <= tol) or np.any(self.upper - t <= tol))

    def subset(self, idx) -> "ParamBox":
        idx = list(idx)
        return ParamBox(self.lower[idx], self.upper[idx])


class CovarianceFamily:
    """Base class for registered families.

    Families are elementwise functions of the (exactly symmetric) distance
    matrix, so every covariance and derivative matrix is exactly symmetric.

    Subclasses implement ``k``, ``grad`` and ``hess`` vectorized over an array
    of Euclidean lag lengths ``h``; ``grad`` returns shape ``(p,) + h.shape``
    and ``hess`` shape ``(p, p) + h.shape``.
    """

    name: str = ""
    param_names: tuple[str, ...] = ()
    variance_index: int | None = None
    # Strict positivity of the Fourier transform is declared, never checked.
    fourier_positive: bool = False

    @property
    def p(self) -> int:
        return len(self.param_names)

    def k(self, theta, h):  # pragma: no cover - interface
        raise NotImplementedError

    def grad(self, theta, h):  # pragma: no cover - interface
        raise NotImplementedError

    def hess(self, theta, h):  # pragma: no cover - interface
        raise NotImplementedError

    def k_and_grad(self, theta, h):
        return self.k(theta, h), self.grad(theta, h)

    def square(self, theta):
        """Parameters of ``2 k_theta^2`` within the family, or None."""
        return None

    def unsquare(self, theta):
        """Inverse of :meth:`square`, or None."""
        return None


class Exponential(CovarianceFamily):
    """``k(h) = sigma2 * exp(-h / rho)`` with ``theta = (sigma2, rho)``."""

    name = "exponential"
    param_names = ("sigma2", "rho")
    variance_index = 0
    fourier_positive = True

    def k(self, theta, h):
        s2, rho = theta
        return s2 * np.exp(-np.asarray(h) / rho)

    def grad(self, theta, h):
        s2, rho = theta
        h = np.asarray(h, dtype=float)
        e = np.exp(-h / rho)
        return np.stack([e, s2 * e * h / rho**2])

    def k_and_grad(self, theta, h):
        s2, rho = theta
        e = np.exp(-np.asarray(h, dtype=float) / rho)
        k = s2 * e
        return k, (e, k * (h / rho**2))

    def hess(self, theta, h):
        s2, rho = theta
        h = np.asarray(h, dtype=float)
        e = np.exp(-h / rho)
        cross = e * h / rho**2
        d_rr = s2 * e * (h**2 / rho**4 - 2.0 * h / rho**3)
        return np.stack([np.stack([np.zeros_like(h), cross]), np.stack([cross, d_rr])])

    def square(self, theta):
        s2, rho = theta
        return np.array([2.0 * s2**2, rho / 2.0])

    def unsquare(self, theta):
        s2, rho = theta
        return np.array([np.sqrt(s2 / 2.0), 2.0 * rho])


FAMILIES: dict[str, CovarianceFamily] = {}


def register_family(family: CovarianceFamily) -> CovarianceFamily:
    """Make a family available by name (e.g. in experiment config files)."""
    for attr in ("k", "grad", "hess"):
        if getattr(type(family), attr) is getattr(CovarianceFamily, attr):
            raise TypeError(f"family {family.name!r} must implement {attr}()")
    if not family.name:
        raise ValueError("family needs a name")
    FAMILIES[family.name] = family
    return family


def get_family(name: str) -> CovarianceFamily:
    try:
        return FAMILIES[name]
    except KeyError:
        raise KeyError(f"unknown covariance family {name!r}; known: {sorted(FAMILIES)}") from None


register_family(Exponential())


@dataclass(frozen=True)
class CovarianceModel:
    """A family together with its parameter box.

    ``cv_box`` bounds the correlation parameters ``psi`` searched by cross
    validation; it defaults to the non-variance part of ``box``.
    """

    family: CovarianceFamily
    box: ParamBox
    cv_box: ParamBox | None = None
    variance_index: int | None = field(default=None)

    def __post_init__(self):
        if self.box.dim != self.family.p:
            raise ValueError(f"box has {self.box.dim} coordinates, family has {self.family.p}")
        if self.variance_index is None:
            object.__setattr__(self, "variance_index", self.family.variance_index)
        if self.cv_box is not None and self.cv_box.dim != self.family.p - 1:
            raise ValueError("cv_box must cover the p-1 correlation parameters")

    @property
    def p(self) -> int:
        return self.family.p

    @property
    def param_names(self) -> tuple[str, ...]:
        return self.family.param_names

    @property
    def psi_index(self) -> list[int]:
        self._require_split()
        return [i for i in range(self.p) if i != self.variance_index]

    @property
    def psi_box(self) -> ParamBox:
        if self.cv_box is not None:
            return self.cv_box
        return self.box.subset(self.psi_index)

    def _require_split(self):
        if self.variance_index is None:
            raise NoVarianceSplit(f"family {self.family.name!r} declares no multiplicative variance")

    # -- pointwise -----------------------------------------------------------

    def eval(self, theta, lag) -> float:
        theta = self.box.check(theta)
        return float(self.family.k(theta, np.linalg.norm(np.atleast_1d(lag))))

    def eval_deriv(self, theta, lag, which) -> float:
        """Partial derivative of ``k_theta(lag)``; ``which`` holds 1 or 2 parameter indices."""
        theta = self.box.check(theta)
        which = tuple(int(w) for w in np.atleast_1d(which))
        h = np.linalg.norm(np.atleast_1d(lag))
        if len(which) == 1:
            return float(self.family.grad(theta, h)[which[0]])
        if len(which) == 2:
            return float(self.family.hess(theta, h)[which[0], which[1]])
        raise UnsupportedOrder(f"derivative order {len(which)} not supported (1 or 2 only)")

    # -- matrices ------------------------------------------------------------

    def cov_matrix(self, theta, ls) -> np.ndarray:
        theta = self.box.check(theta)
        return np.asarray(self.family.k(theta, ls.euclidean_distances), dtype=float)

    def deriv_matrices(self, theta, ls, order: int = 1) -> list[np.ndarray]:
        """``dR/dtheta_i`` for each i (order 1) or ``d2R/dtheta_i dtheta_j``, i <= j (order 2)."""
        theta = self.box.check(theta)
        h = ls.euclidean_distances
        if order == 1:
            return list(self.family.grad(theta, h))
        if order == 2:
            hs = self.family.hess(theta, h)
            return [hs[i, j] for i, j in combinations_with_replacement(range(self.p), 2)]
        raise UnsupportedOrder(f"order must be 1 or 2, got {order}")

    # -- variance / correlation split ----------------------------------------

    def correlation_split(self, theta) -> tuple[float, np.ndarray]:
        self._require_split()
        theta = np.asarray(theta, dtype=float)
        return float(theta[self.variance_index]), theta[self.psi_index]

    def join(self, sigma2: float, psi) -> np.ndarray:
        self._require_split()
        theta = np.empty(self.p)
        theta[self.variance_index] = sigma2
        theta[self.psi_index] = np.atleast_1d(psi)
        return theta

    def correlation_matrix(self, psi, ls) -> np.ndarray:
        psi = self.psi_box.check(psi)
        return np.asarray(self.family.k(self.join(1.0, psi), ls.euclidean_distances), dtype=float)

    def correlation_deriv_matrices(self, psi, ls) -> list[np.ndarray]:
        psi = self.psi_box.check(psi)
        g = self.family.grad(self.join(1.0, psi), ls.euclidean_distances)
        return [g[i] for i in self.psi_index]

    def identifiability_gap(self, theta, theta0, ls) -> float:
        """Finite-n diagnostic ``(1/n) sum_ij (k_theta - k_theta0)^2``; no asymptotic claim."""
        diff = self.cov_matrix(theta, ls) - self.cov_matrix(theta0, ls)
        return float(np.sum(diff**2) / ls.n)


# Default range interval searched by cross validation.
CV_RANGE_BOX = (2.0 / 15.0, 12.0)


def exponential_model(box_lower=(0.05, 0.05), box_upper=(50.0, 20.0), cv_box=CV_RANGE_BOX) -> CovarianceModel:
    return CovarianceModel(
        family=get_family("exponential"),
        box=ParamBox(np.asarray(box_lower, float), np.asarray(box_upper, float)),
        cv_box=None if cv_box is None else ParamBox([cv_box[0]], [cv_box[1]]),
    )
