"""Observation location sets and the randomly perturbed regular grid."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist, pdist

from . import rng as _rng
from .errors import InvalidPerturbation


@dataclass(frozen=True, eq=False)
class LocationSet:
    """A finite set of distinct points in R^d, stored as an ``(n, d)`` array.

    Separation uses the max-norm ``|x| = max_i |x_i|``; covariance lags use
    the Euclidean norm (see :attr:`euclidean_distances`).
    """

    points: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("points must be a non-empty (n, d) array")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if pts.shape[0] > 1 and self.min_separation == 0.0:
            raise ValueError("location set contains coincident points")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n

    @cached_property
    def min_separation(self) -> float:
        """Exact minimum pairwise max-norm distance (``inf`` for one point)."""
        if self.n < 2:
            return float("inf")
        return float(pdist(self.points, metric="chebyshev").min())

    @cached_property
    def euclidean_distances(self) -> np.ndarray:
        d = cdist(self.points, self.points, metric="euclidean")
        d = np.triu(d) + np.triu(d, 1).T
        d.setflags(write=False)
        return d

    @cached_property
    def maxnorm_distances(self) -> np.ndarray:
        d = cdist(self.points, self.points, metric="chebyshev")
        d = np.triu(d) + np.triu(d, 1).T
        d.setflags(write=False)
        return d

    @property
    def diameter(self) -> float:
        return float(self.maxnorm_distances.max())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index"] + [f"x{k + 1}" for k in range(self.dim)])
            for i, p in enumerate(self.points):
                writer.writerow([i] + [repr(float(v)) for v in p])

    @classmethod
    def from_csv(cls, path) -> "LocationSet":
        rows = [r for r in csv.reader(_skip_comments(Path(path)))]
        header, body = rows[0], rows[1:]
        cols = [k for k, name in enumerate(header) if name.startswith("x")]
        return cls(np.array([[float(r[k]) for k in cols] for r in body]))


def _skip_comments(path: Path):
    with open(path, newline="") as fh:
        for line in fh:
            if not line.startswith("#") and line.strip():
                yield line


def check_separation(ls, delta: float) -> bool:
    """True iff every pair of points is at max-norm distance >= ``delta``.

    Accepts a :class:`LocationSet` or any ``(n, d)`` array, including arrays
    with coincident points.
    """
    if isinstance(ls, LocationSet):
        return ls.min_separation >= delta
    pts = np.asarray(ls, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] < 2:
        return True
    return float(pdist(pts, metric="chebyshev").min()) >= delta


def regular_grid(side: int, dim: int) -> np.ndarray:
    axes = [np.arange(1, side + 1, dtype=float)] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def perturbed_grid(side: int, dim: int = 2, perturb_halfwidth: float = 0.4, seed=0,
                   replicate: int = 0) -> LocationSet:
    """Integer grid ``{1..side}^dim`` plus i.i.d. Uniform[-u, u]^dim jitter.

    With ``u < 0.5`` the result is guaranteed ``1 - 2u`` separated in max-norm.
    ``seed`` may be an integer (stream keyed by ``replicate``) or a Generator.
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
    if side < 1:
        raise ValueError("side must be a positive integer")
    u = float(perturb_halfwidth)
    if not 0.0 <= u < 0.5:
        raise InvalidPerturbation(f"perturbation half-width must lie in [0, 0.5), got {u}")
    grid = regular_grid(side, dim)
    if u > 0.0:
        gen = _rng.as_generator(seed, replicate, _rng.LOCATIONS, side)
        grid = grid + gen.uniform(-u, u, size=grid.shape)
    return LocationSet(grid, meta={"side": side, "perturb_halfwidth": u})
