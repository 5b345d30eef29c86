"""Finite-n asymptotic covariance objects for ML and CV.

Every score or CV-gradient fluctuation is a quadratic form
``V = y' A y / n``. Their covariances are assembled from fourth moments of
the observations:

* Gaussian observations (Wick): ``Cov(y_i y_j, y_k y_l) = k_ik k_jl + k_il k_jk``.
* Centered squares ``y = Z^2 - sigma^2`` of a Gaussian ``Z`` with covariance
  ``k``: ``4 (k_ik^2 k_jl^2 + k_il^2 k_jk^2) + 16 (k_ik k_il k_jk k_jl +
  k_ij k_il k_jk k_kl + k_ij k_ik k_jl k_kl)``.

``quadform_variance`` evaluates the quadruple sum literally (O(n^4), capped);
the matrix builders use equivalent trace identities.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import linalg
from . import rng as _rng
from .covmodel import CovarianceModel
from .errors import IndexOutOfRange, SizeCapExceeded
from .estimators import cv_quadratic_matrices
from .fieldsim import latent_covariance_from_square

GAUSSIAN = "gaussian"
SQUARE_TRANSFORM = "square_transform"
MONTE_CARLO = "monte_carlo"

DEFAULT_CAP = 150
REPORT_SCHEMA = "transgp.asymptotic_report/1"


# -- fourth moments ---------------------------------------------------------


def _check_indices(kmat, *idx):
    n = kmat.shape[0]
    for a in idx:
        a = np.asarray(a)
        if np.any(a < 0) or np.any(a >= n):
            raise IndexOutOfRange(f"index out of range for order {n}")


def isserlis_cov4(kmat, i, j, k, l):
    """``Cov(y_i y_j, y_k y_l)`` for ``y = Z^2 - diag(kmat)``, ``Z ~ N(0, kmat)``.

    Indices broadcast like numpy arrays.
    """
    kmat = np.asarray(kmat, dtype=float)
    _check_indices(kmat, i, j, k, l)
    kik, kjl, kil, kjk = kmat[i, k], kmat[j, l], kmat[i, l], kmat[j, k]
    kij, kkl = kmat[i, j], kmat[k, l]
    return (4.0 * (kik**2 * kjl**2 + kil**2 * kjk**2)
            + 16.0 * (kik * kil * kjk * kjl + kij * kil * kjk * kkl + kij * kik * kjl * kkl))


def gaussian_cov4(kmat, i, j, k, l):
    """``Cov(y_i y_j, y_k y_l)`` for ``y ~ N(0, kmat)``."""
    kmat = np.asarray(kmat, dtype=float)
    _check_indices(kmat, i, j, k, l)
    return kmat[i, k] * kmat[j, l] + kmat[i, l] * kmat[j, k]


def isserlis_provider(latent_kmat):
    return partial(isserlis_cov4, np.asarray(latent_kmat, dtype=float))


def gaussian_provider(kmat):
    return partial(gaussian_cov4, np.asarray(kmat, dtype=float))


# -- quadratic forms --------------------------------------------------------


@dataclass(frozen=True)
class QuadFormSpec:
    """``V = y' A y / n`` (``scaled``) or ``V = y' A y``.

    Only the symmetric part of ``A`` matters; it is symmetrized on use.
    """

    A: np.ndarray
    scaled: bool = True

    @property
    def n(self) -> int:
        return np.asarray(self.A).shape[0]

    def sym(self) -> np.ndarray:
        a = np.asarray(self.A, dtype=float)
        return 0.5 * (a + a.T)


def quadform_covariance(spec_a: QuadFormSpec, spec_b: QuadFormSpec, cov4, cap: int = DEFAULT_CAP) -> float:
    """``sum_ijkl A_ij B_kl Cov(y_i y_j, y_k y_l)``, scaled to ``n Cov(V_a, V_b)``.

    Literal quadruple sum, blocked over the first index.
    """
    a, b = spec_a.sym(), spec_b.sym()
    n = a.shape[0]
    if b.shape != a.shape:
        raise ValueError("quadratic forms have different orders")
    if n > cap:
        raise SizeCapExceeded(f"O(n^4) evaluation requested for n={n} > cap={cap}; use a monte_carlo population")
    jj = np.arange(n)[:, None, None]
    kk = np.arange(n)[None, :, None]
    ll = np.arange(n)[None, None, :]
    weight_b = b[None, :, :]
    total = 0.0
    for i in range(n):
        block = cov4(i, jj, kk, ll)
        total += float(np.sum(a[i][:, None, None] * weight_b * block))
    scale = 1.0
    if spec_a.scaled:
        scale /= np.sqrt(n)
    if spec_b.scaled:
        scale /= np.sqrt(n)
    # n Cov(V_a, V_b) when both are scaled by 1/n
    return total * scale


def quadform_variance(spec: QuadFormSpec, cov4, cap: int = DEFAULT_CAP) -> float:
    """``n Var(V_n) = (1/n) sum_ijkl A_ij A_kl Cov(y_i y_j, y_k y_l)`` for scaled forms."""
    return quadform_covariance(spec, spec, cov4, cap)


def _sym_list(mats):
    return [0.5 * (np.asarray(m, float) + np.asarray(m, float).T) for m in mats]


def gaussian_quadform_cov(mats, kmat) -> np.ndarray:
    """Matrix of ``n Cov(V_a, V_b)`` for Gaussian ``y`` with covariance ``kmat``: ``(2/n) tr(A K B K)``."""
    mats = _sym_list(mats)
    n = kmat.shape[0]
    ak = [m @ kmat for m in mats]
    out = np.array([[2.0 / n * np.sum(x * y.T) for y in ak] for x in ak])
    return 0.5 * (out + out.T)


def square_quadform_cov(mats, latent_kmat, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Matrix of ``n Cov(V_a, V_b)`` for centered-square ``y``, via trace identities.

    Equals the literal quadruple sum against :func:`isserlis_cov4`.
    """
    mats = _sym_list(mats)
    K = np.asarray(latent_kmat, dtype=float)
    n = K.shape[0]
    if n > cap:
        raise SizeCapExceeded(f"O(n^4) evaluation requested for n={n} > cap={cap}; use a monte_carlo population")
    K2 = K * K
    m = len(mats)
    out = np.zeros((m, m))
    a_k2 = [a @ K2 for a in mats]
    hk = [(a * K) @ K for a in mats]
    for x in range(m):
        for y in range(m):
            # 4 (k_ik^2 k_jl^2 + k_il^2 k_jk^2) -> 8 tr(A K2 B K2)
            # two of the 16-weighted cycles -> 32 tr((A o K) K (B o K) K)
            out[x, y] = 8.0 * np.sum(a_k2[x] * a_k2[y].T) + 32.0 * np.sum(hk[x] * hk[y].T)
    # remaining cycle sum_ij A_ij sum_kl B_kl (k_ik k_jk)(k_il k_jl)
    for i in range(n):
        W = K * K[i]
        diags = [np.sum((W @ b) * W, axis=1) for b in mats]
        for x in range(m):
            row = mats[x][i]
            for y in range(m):
                out[x, y] += 16.0 * float(row @ diags[y])
    out /= n
    return 0.5 * (out + out.T)


# -- populations ------------------------------------------------------------


@dataclass(frozen=True)
class Population:
    """Distribution of ``y`` under which fluctuation covariances are computed.

    ``kind`` is ``gaussian``, ``square_transform`` or ``monte_carlo``. For
    ``monte_carlo`` the simulated law is ``base`` (gaussian or
    square_transform) over ``reps`` replicates. ``latent_kmat`` supplies the
    latent covariance of the square transform; when absent it is recovered by
    inverting Mehler's formula.
    """

    kind: str = GAUSSIAN
    reps: int = 0
    base: str = GAUSSIAN
    seed: int = 0
    latent_kmat: np.ndarray | None = field(default=None, compare=False)
    cap: int = DEFAULT_CAP

    def label(self) -> str:
        if self.kind == MONTE_CARLO:
            return f"monte_carlo({self.reps}, {self.base})"
        return self.kind


def _latent(model, theta0, ls, population) -> tuple[np.ndarray, bool]:
    if population.latent_kmat is not None:
        return np.asarray(population.latent_kmat, dtype=float), False
    return latent_covariance_from_square(model, theta0, ls), True


def simulate_population(population: Population, model, theta0, ls) -> np.ndarray:
    """``reps x n`` draws of ``y`` from the Monte Carlo population."""
    if population.base == GAUSSIAN:
        cov = model.cov_matrix(theta0, ls)
    else:
        cov, _ = _latent(model, theta0, ls, population)
    L = linalg.cholesky(cov).lower
    gen = _rng.stream(population.seed, "population")
    draws = gen.standard_normal((population.reps, ls.n)) @ L.T
    if population.base == SQUARE_TRANSFORM:
        draws = draws**2 - np.diag(cov)
    return draws


def fluctuation_covariance(mats, model, theta0, ls, population: Population) -> tuple[np.ndarray, dict]:
    """``n Cov(V_a, V_b)`` for ``V_a = y' M_a y / n`` under ``population``."""
    info = {"population": population.label(), "mehler_inverted": False}
    kind = population.kind
    if kind == GAUSSIAN:
        return gaussian_quadform_cov(mats, model.cov_matrix(theta0, ls)), info
    if kind == SQUARE_TRANSFORM:
        kz, inverted = _latent(model, theta0, ls, population)
        info["mehler_inverted"] = inverted
        return square_quadform_cov(mats, kz, cap=population.cap), info
    if kind == MONTE_CARLO:
        if population.reps < 2:
            raise ValueError("monte_carlo population needs at least 2 replicates")
        Y = simulate_population(population, model, theta0, ls)
        qf = np.stack([np.einsum("rn,rn->r", Y @ np.asarray(m, float), Y) for m in mats], axis=1)
        n = ls.n
        cov = np.atleast_2d(np.cov(qf, rowvar=False)) / n
        info["mehler_inverted"] = population.base == SQUARE_TRANSFORM and population.latent_kmat is None
        return 0.5 * (cov + cov.T), info
    raise ValueError(f"unknown population kind {kind!r}")


# -- ML -----------------------------------------------------------------------


def ml_quadratic_matrices(model: CovarianceModel, theta0, ls) -> list[np.ndarray]:
    """``-R^-1 dR_i R^-1``: the random part of ``n dL/dtheta_i`` is ``y' (.) y``."""
    rinv = linalg.inverse(linalg.cholesky(model.cov_matrix(theta0, ls)))
    return [-(rinv @ dR @ rinv) for dR in model.deriv_matrices(theta0, ls, 1)]


def matrix_M(model: CovarianceModel, theta0, ls) -> np.ndarray:
    """``M_ij = tr(R^-1 dR_i R^-1 dR_j) / n``."""
    f = linalg.cholesky(model.cov_matrix(theta0, ls))
    sol = [linalg.solve(f, dR) for dR in model.deriv_matrices(theta0, ls, 1)]
    M = np.array([[np.sum(a * b.T) for b in sol] for a in sol]) / ls.n
    return 0.5 * (M + M.T)


def matrix_Sigma(model: CovarianceModel, theta0, ls, population: Population) -> np.ndarray:
    """``Cov(n^1/2 dL/dtheta_i, n^1/2 dL/dtheta_j)`` at ``theta0``."""
    return fluctuation_covariance(ml_quadratic_matrices(model, theta0, ls), model, theta0, ls, population)[0]


# -- CV -----------------------------------------------------------------------


def matrix_N(model: CovarianceModel, psi0, ls, sigma2: float = 1.0) -> np.ndarray:
    """Expected CV Hessian at ``psi0`` when ``Cov(y) = sigma2 * C_psi0``.

    Three trace terms with weights -8, +2, +6 (see module docs); ``sigma2``
    scales the whole matrix.
    """
    n = ls.n
    cinv = linalg.inverse(linalg.cholesky(model.correlation_matrix(psi0, ls)))
    dinv = 1.0 / np.diag(cinv)
    dCs = model.correlation_deriv_matrices(psi0, ls)
    diagB = [np.einsum("ij,jk,ki->i", cinv, dC, cinv) for dC in dCs]
    q = len(dCs)
    N = np.zeros((q, q))
    for i in range(q):
        for j in range(q):
            dCj = dCs[j]
            # tr(dC_j C^-1 D^-3 diag(B_i) C^-1)
            t1 = np.sum((dCj @ (cinv * (dinv**3 * diagB[i]))) * cinv.T)
            # tr(dC_j C^-1 D^-2 C^-1 dC_i C^-1)
            t2 = np.sum((dCj @ (cinv * dinv**2) @ cinv) * (dCs[i] @ cinv).T)
            # tr(D^-4 diag(B_i) diag(B_j) C^-1)
            t3 = np.sum(dinv**4 * diagB[i] * diagB[j] * np.diag(cinv))
            N[i, j] = (-8.0 * t1 + 2.0 * t2 + 6.0 * t3) / n
    asym = np.max(np.abs(N - N.T)) if q > 1 else 0.0
    if asym > 1e-8 * max(1.0, np.max(np.abs(N))):
        warnings.warn(f"CV Hessian matrix asymmetric by {asym:.3e}; symmetrizing", RuntimeWarning)
    return sigma2 * 0.5 * (N + N.T)


def cv_fluctuation_matrices(model: CovarianceModel, psi0, ls) -> list[np.ndarray]:
    """``2 A_i``: the random part of ``n dCV/dpsi_i`` is ``y' (.) y``."""
    return [2.0 * a for a in cv_quadratic_matrices(model, psi0, ls)]


def matrix_Gamma(model: CovarianceModel, psi0, ls, population: Population, sigma2: float = 1.0) -> np.ndarray:
    """``Cov(n^1/2 dCV/dpsi_i, n^1/2 dCV/dpsi_j)`` at ``psi0``; ``y`` has covariance ``k_(sigma2, psi0)``."""
    theta0 = model.join(sigma2, psi0)
    return fluctuation_covariance(cv_fluctuation_matrices(model, psi0, ls), model, theta0, ls, population)[0]


# -- joint ----------------------------------------------------------------------


def _sandwich(H, S):
    if H.size == 0:
        return np.zeros_like(H)
    Hinv = np.linalg.inv(H)
    out = Hinv @ S @ Hinv.T
    return 0.5 * (out + out.T)


@dataclass
class AsymptoticReport:
    M: np.ndarray
    Sigma: np.ndarray
    N: np.ndarray
    Gamma: np.ndarray
    D: np.ndarray
    Psi: np.ndarray
    sandwich_ml: np.ndarray
    sandwich_cv: np.ndarray
    sandwich_joint: np.ndarray
    population: str
    n: int
    theta0: np.ndarray
    param_names: tuple[str, ...] = ()
    mehler_inverted: bool = False

    def to_dict(self) -> dict:
        out = {"schema": REPORT_SCHEMA, "population": self.population, "n": self.n,
               "theta0": [float(t) for t in self.theta0], "param_names": list(self.param_names),
               "mehler_inverted": self.mehler_inverted}
        for name in ("M", "Sigma", "N", "Gamma", "D", "Psi", "sandwich_ml", "sandwich_cv", "sandwich_joint"):
            out[name] = np.asarray(getattr(self, name), dtype=float).tolist()
        return out

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def joint_report(model: CovarianceModel, theta0, ls, population: Population) -> AsymptoticReport:
    """ML, CV and joint sandwich covariances at ``theta0``.

    When the model declares no variance split, or has no correlation
    parameters, the CV block is empty and the report reduces to ML.
    """
    theta0 = model.box.check(theta0)
    ml_mats = ml_quadratic_matrices(model, theta0, ls)
    M = matrix_M(model, theta0, ls)
    p = model.p
    if model.variance_index is not None and p > 1:
        sigma2, psi0 = model.correlation_split(theta0)
        N = matrix_N(model, psi0, ls, sigma2=sigma2)
        cv_mats = cv_fluctuation_matrices(model, psi0, ls)
    else:
        N, cv_mats = np.zeros((0, 0)), []
    q = N.shape[0]
    Psi, info = fluctuation_covariance(ml_mats + cv_mats, model, theta0, ls, population)
    D = np.zeros((p + q, p + q))
    D[:p, :p] = M
    D[p:, p:] = N
    Sigma, Gamma = Psi[:p, :p], Psi[p:, p:]
    return AsymptoticReport(
        M=M, Sigma=Sigma, N=N, Gamma=Gamma, D=D, Psi=Psi,
        sandwich_ml=_sandwich(M, Sigma), sandwich_cv=_sandwich(N, Gamma),
        sandwich_joint=_sandwich(D, Psi), population=info["population"], n=ls.n,
        theta0=theta0, param_names=model.param_names, mehler_inverted=info["mehler_inverted"],
    )
