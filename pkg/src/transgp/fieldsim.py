"""Latent Gaussian field simulation and pointwise transformations."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import linalg
from . import rng as _rng
from .covmodel import CovarianceModel
from .errors import CenteringMismatch, MehlerInversionUnavailable
from .locations import LocationSet

IDENTITY = "identity"
SQUARE_CENTERED = "square_centered"
EVEN_MONOMIAL = "even_monomial"
CUSTOM = "custom"


def double_factorial(k: int) -> int:
    out = 1
    while k > 1:
        out *= k
        k -= 2
    return out


@dataclass(frozen=True)
class Transform:
    """Pointwise map ``T(z) = F(z) - centering``.

    ``centering`` is the constant ``E[F(Z(x))]`` that makes ``T(Z)`` zero mean.
    Use the constructors rather than the raw initializer.
    """

    kind: str
    centering: float = 0.0
    r: int = 1
    func: Callable | None = field(default=None, compare=False)
    # Monotonicity / growth conditions cannot be checked for custom maps.
    declared_admissible: bool = True

    @classmethod
    def identity(cls) -> "Transform":
        return cls(IDENTITY)

    @classmethod
    def square_centered(cls, latent_variance: float) -> "Transform":
        return cls(SQUARE_CENTERED, centering=float(latent_variance), r=1)

    @classmethod
    def even_monomial(cls, r: int, latent_variance: float = 1.0) -> "Transform":
        """``z^(2r) - (2r-1)!! * latent_variance^r``."""
        if r < 1:
            raise ValueError("r must be a positive integer")
        centering = double_factorial(2 * r - 1) * float(latent_variance) ** r
        kind = SQUARE_CENTERED if r == 1 else EVEN_MONOMIAL
        return cls(kind, centering=centering, r=r)

    @classmethod
    def custom(cls, func: Callable, centering: float = 0.0) -> "Transform":
        return cls(CUSTOM, centering=float(centering), func=func, declared_admissible=False)

    def expected_centering(self, latent_variance: float) -> float | None:
        if self.kind == IDENTITY:
            return 0.0
        if self.kind in (SQUARE_CENTERED, EVEN_MONOMIAL):
            return double_factorial(2 * self.r - 1) * latent_variance**self.r
        return None

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == IDENTITY:
            return z.copy()
        if self.kind in (SQUARE_CENTERED, EVEN_MONOMIAL):
            return z ** (2 * self.r) - self.centering
        return np.asarray(self.func(z), dtype=float) - self.centering

    def describe(self) -> dict:
        return {"kind": self.kind, "centering": self.centering, "r": self.r}


@dataclass(frozen=True, eq=False)
class FieldSample:
    """Field values at a location set, with the provenance needed to replay them."""

    locations: LocationSet
    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True).ravel()
        if v.size != self.locations.n:
            raise ValueError(f"{v.size} values for {self.locations.n} locations")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        for key in sorted(self.provenance):
            buf.write(f"# {key}: {json.dumps(self.provenance[key], sort_keys=True)}\n")
        writer = csv.writer(buf, lineterminator="\n")
        d = self.locations.dim
        writer.writerow(["index"] + [f"x{k + 1}" for k in range(d)] + ["value"])
        for i in range(self.n):
            writer.writerow([i] + [repr(float(x)) for x in self.locations.points[i]]
                            + [repr(float(self.values[i]))])
        return buf.getvalue()

    def to_csv(self, path) -> None:
        Path(path).write_text(self.to_csv_text())

    @classmethod
    def from_csv(cls, path) -> "FieldSample":
        provenance, lines = {}, []
        with open(path, newline="") as fh:
            for line in fh:
                if line.startswith("#"):
                    key, _, payload = line[1:].partition(":")
                    provenance[key.strip()] = json.loads(payload.strip())
                elif line.strip():
                    lines.append(line)
        rows = list(csv.reader(lines))
        if len(rows) < 2:
            raise ValueError(f"{path}: no header or no data rows")
        header, body = rows[0], rows[1:]
        xcols = [k for k, name in enumerate(header) if name.startswith("x")]
        if "value" not in header or not xcols:
            raise ValueError(f"{path}: expected columns x1..xd and value, got {header}")
        vcol = header.index("value")
        try:
            pts = np.array([[float(r[k]) for k in xcols] for r in body])
            vals = np.array([float(r[vcol]) for r in body])
        except (IndexError, ValueError) as exc:
            raise ValueError(f"{path}: malformed data row ({exc})") from None
        return cls(LocationSet(pts), vals, provenance)


def latent_factor(model: CovarianceModel, theta0, ls: LocationSet,
                  policy: linalg.JitterPolicy = linalg.DEFAULT_JITTER) -> linalg.CholFactor:
    return linalg.cholesky(model.cov_matrix(theta0, ls), policy)


def simulate_latent(model: CovarianceModel, theta0, ls: LocationSet, seed=0, replicate: int = 0,
                    factor: linalg.CholFactor | None = None) -> FieldSample:
    """Exact draw ``L @ eps`` of the zero-mean Gaussian field with covariance ``k_theta0``.

    ``factor`` may be passed to reuse a Cholesky factor across replicates that
    share locations; results are identical either way.
    """
    theta0 = model.box.check(theta0)
    if factor is None:
        factor = latent_factor(model, theta0, ls)
    gen = _rng.as_generator(seed, replicate, _rng.FIELD, ls.n)
    eps = gen.standard_normal(ls.n)
    values = factor.lower @ eps
    provenance = {
        "seed": seed if isinstance(seed, (int, np.integer)) else None,
        "replicate": int(replicate),
        "latent_family": model.family.name,
        "latent_theta": [float(t) for t in theta0],
        "latent_variance": float(model.eval(theta0, np.zeros(ls.dim))),
        "transform": Transform.identity().describe(),
        "jitter_applied": factor.jitter_applied,
    }
    return FieldSample(ls, values, provenance)


def apply_transform(z: FieldSample, t: Transform, tol: float = 1e-12) -> FieldSample:
    """Map the latent values through ``t``; checks centering for built-in kinds."""
    latent_var = z.provenance.get("latent_variance")
    expected = t.expected_centering(latent_var) if latent_var is not None else None
    if expected is not None and t.kind != IDENTITY and abs(expected - t.centering) > tol * max(1.0, abs(expected)):
        raise CenteringMismatch(
            f"{t.kind} centering {t.centering} disagrees with expected {expected} "
            f"for latent variance {latent_var}"
        )
    provenance = dict(z.provenance, transform=t.describe())
    return replace(z, values=t(z.values), provenance=provenance)


def transformed_covariance(latent_model: CovarianceModel, theta0, t: Transform):
    """Covariance model and parameters of ``T(Z)`` when available in closed form.

    Identity returns the latent model unchanged. For the centered square the
    covariance is ``2 k_Z^2`` (Mehler), which stays in the exponential family as
    ``(2 sigma2^2, rho / 2)``. Anything else returns None.
    """
    theta0 = np.asarray(theta0, dtype=float)
    if t.kind == IDENTITY:
        return latent_model, theta0.copy()
    if t.kind == SQUARE_CENTERED:
        sq = latent_model.family.square(theta0)
        if sq is None:
            return None
        return latent_model, sq
    return None


def latent_covariance_from_square(model: CovarianceModel, theta_y, ls: LocationSet) -> np.ndarray:
    """Invert Mehler's map: latent covariance ``sqrt(k_Y / 2)`` for the centered square.

    Assumes the latent covariance is nonnegative, which holds for the
    exponential family.
    """
    ky = model.cov_matrix(theta_y, ls)
    if np.any(ky < 0):
        raise MehlerInversionUnavailable("k_Y takes negative values; the latent sign is not identifiable")
    return np.sqrt(ky / 2.0)
