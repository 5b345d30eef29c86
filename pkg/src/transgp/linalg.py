"""Dense symmetric linear algebra: Cholesky with jitter escalation, solves,
explicit inverses and extreme eigenvalues.

Matrices are plain ``numpy`` arrays in full (non-packed) storage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import ConvergenceFailure, DimensionMismatch, NotPositiveDefinite

# Above this order extreme eigenvalues come from Lanczos iterations instead of
# a full symmetric eigendecomposition.
DENSE_EIG_MAX_ORDER = 2000


@dataclass(frozen=True)
class JitterPolicy:
    """Diagonal jitter ladder, as multiples of ``mean(diag(m))``.

    The first attempt is always the unjittered matrix.
    """

    ladder: tuple[float, ...] = (1e-10, 1e-8, 1e-6)
    max_escalations: int = 3


DEFAULT_JITTER = JitterPolicy()
NO_JITTER = JitterPolicy(ladder=(), max_escalations=0)


@dataclass(frozen=True)
class CholFactor:
    lower: np.ndarray
    logdet: float
    jitter_applied: float = 0.0

    @property
    def order(self) -> int:
        return self.lower.shape[0]

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


def symmetrize(m) -> np.ndarray:
    """Return ``(m + m.T) / 2`` as a float array; entries are then exactly symmetric."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


def cholesky(m, policy: JitterPolicy = DEFAULT_JITTER) -> CholFactor:
    """Lower Cholesky factor of ``m``, escalating diagonal jitter on failure.

    Raises
    ------
    NotPositiveDefinite
        If the matrix cannot be factorized even with the largest jitter.
    """
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or not np.array_equal(a, a.T):
        a = symmetrize(a)
    scale = float(np.mean(np.diag(a)))
    attempts = [0.0] + [d * scale for d in policy.ladder[: policy.max_escalations]]
    for jitter in attempts:
        work = a if jitter == 0.0 else a + jitter * np.eye(a.shape[0])
        lower, info = lapack.dpotrf(work, lower=1, clean=1, overwrite_a=0)
        if info == 0:
            diag = np.diag(lower)
            logdet = 2.0 * float(np.sum(np.log(diag)))
            return CholFactor(lower=lower, logdet=logdet, jitter_applied=jitter)
        if info < 0:  # pragma: no cover - malformed call
            raise ValueError(f"dpotrf illegal argument {-info}")
    raise NotPositiveDefinite(
        f"matrix of order {a.shape[0]} is not positive definite "
        f"(jitter up to {attempts[-1]:.3g} tried)"
    )


def solve(f: CholFactor, b) -> np.ndarray:
    """Solve ``(L L^T) x = b`` for a vector or a matrix of right-hand sides."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.order:
        raise DimensionMismatch(f"factor has order {f.order}, right-hand side has {b.shape[0]} rows")
    return sla.cho_solve((f.lower, True), b, check_finite=False)


def inverse_lower(f: CholFactor) -> np.ndarray:
    """Lower triangle (upper zeroed) of the inverse of the factorized matrix."""
    inv, info = lapack.dpotri(f.lower, lower=1)
    if info != 0:
        raise NotPositiveDefinite(f"dpotri failed with info={info}")
    # the factor's upper triangle is zero and dpotri only writes the lower one
    return inv


def inverse(f: CholFactor) -> np.ndarray:
    """Explicit inverse of the factorized matrix, exactly symmetric."""
    inv = inverse_lower(f)
    return inv + np.tril(inv, -1).T


def logdet(m, policy: JitterPolicy = DEFAULT_JITTER) -> float:
    return cholesky(m, policy).logdet


def extreme_eigenvalues(m, tol: float = 1e-10) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix.

    Orders up to ``DENSE_EIG_MAX_ORDER`` use a dense symmetric eigensolver
    (accurate to machine precision); larger ones use Lanczos with relative
    tolerance ``tol``.
    """
    a = symmetrize(m)
    n = a.shape[0]
    if n <= DENSE_EIG_MAX_ORDER:
        w = sla.eigvalsh(a, check_finite=False)
        return float(w[0]), float(w[-1])
    try:
        lo = eigsh(a, k=1, which="SA", tol=tol, return_eigenvectors=False, maxiter=20 * n)
        hi = eigsh(a, k=1, which="LA", tol=tol, return_eigenvectors=False, maxiter=20 * n)
    except ArpackNoConvergence as exc:
        raise ConvergenceFailure(f"Lanczos did not reach tol={tol}") from exc
    return float(lo[0]), float(hi[0])
