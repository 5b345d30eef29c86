"""Flat ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored. Lists are comma separated.
Unknown keys, repeated keys and malformed values raise ``ConfigError``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError

ESTIMATOR_KEYS = ("ml", "ml_variance", "ml_range", "cv", "var", "var_tapered", "aggregate")
TRANSFORM_KEYS = ("identity", "square_centered")
LOCATION_MODES = ("per_replicate", "shared")
POPULATION_KEYS = ("none", "gaussian", "square_transform")
# execution settings that cannot change any number
RUNTIME_KEYS = ("output_dir", "workers")


def _floats(text):
    return tuple(float(v) for v in _items(text))


def _ints(text):
    return tuple(int(v) for v in _items(text))


def _items(text):
    out = [v.strip() for v in text.split(",")]
    if any(not v for v in out):
        raise ValueError("empty list item")
    return out


def _opt_floats(text):
    return None if text.strip().lower() == "none" else _floats(text)


# key -> (parser, help text)
SCHEMA = {
    "grid_sides": (_ints, "grid side lengths L; n = L^dim (e.g. 10, 20, 30)"),
    "dim": (int, "spatial dimension, 1 to 3"),
    "perturb": (float, "perturbation half-width u, 0 <= u < 0.5"),
    "family": (str, "latent covariance family (exponential)"),
    "theta0": (_floats, "latent covariance parameters (sigma2, rho)"),
    "transform": (str, "identity | square_centered"),
    "estimators": (lambda t: tuple(v.lower() for v in _items(t)), "subset of " + ", ".join(ESTIMATOR_KEYS)),
    "taper_k": (_floats, "taper radii for var_tapered"),
    "lambdas": (_floats, "weights in [0, 1] for aggregate"),
    "replicates": (int, "replicates N per grid side"),
    "seed": (int, "master seed"),
    "filter_lower": (_opt_floats, "drop replicates whose estimate lies below (sigma2, rho), or none"),
    "filter_upper": (_opt_floats, "drop replicates whose estimate lies above (sigma2, rho), or none"),
    "cv_filter": (_opt_floats, "drop CV range estimates outside (lower, upper) from summaries, or none"),
    "ml_box_lower": (_floats, "lower corner of the ML search box"),
    "ml_box_upper": (_floats, "upper corner of the ML search box"),
    "cv_box": (_floats, "range interval searched by CV (lower, upper)"),
    "multistarts": (int, "random starts per optimization"),
    "locations": (str, "per_replicate | shared"),
    "asymptotics": (str, "none | gaussian | square_transform analytic report per grid side"),
    "asymptotics_cap": (int, "largest n for the O(n^4) square-transform report"),
    "decay_tau": (float, "exponent tau for decay-check"),
    "decay_bins": (int, "distance bins for decay-check"),
    "workers": (int, "worker processes (TRANSGP_THREADS overrides)"),
    "output_dir": (str, "artifact directory (TRANSGP_OUTPUT_DIR overrides)"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    grid_sides: tuple[int, ...] = (10, 20, 30)
    dim: int = 2
    perturb: float = 0.4
    family: str = "exponential"
    theta0: tuple[float, ...] = (1.5, 2.0)
    transform: str = "square_centered"
    estimators: tuple[str, ...] = ("ml", "ml_variance", "ml_range", "cv", "var", "aggregate")
    taper_k: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    lambdas: tuple[float, ...] = tuple(j / 10 for j in range(1, 10))
    replicates: int = 250
    seed: int = 0
    filter_lower: tuple[float, ...] | None = None
    filter_upper: tuple[float, ...] | None = None
    cv_filter: tuple[float, ...] | None = (0.14, 11.4)
    ml_box_lower: tuple[float, ...] = (0.05, 0.05)
    ml_box_upper: tuple[float, ...] = (50.0, 20.0)
    cv_box: tuple[float, ...] = (2.0 / 15.0, 12.0)
    multistarts: int = 5
    locations: str = "per_replicate"
    asymptotics: str = "none"
    asymptotics_cap: int = 150
    decay_tau: float = 1.0
    decay_bins: int = 10
    workers: int = 1
    output_dir: str = "transgp_output"

    def __post_init__(self):
        self.validate()

    def validate(self):
        def bad(msg):
            raise ConfigError(msg)

        if not self.grid_sides or any(s < 1 for s in self.grid_sides):
            bad("grid_sides must be positive integers")
        if not 1 <= self.dim <= 3:
            bad("dim must be 1, 2 or 3")
        if not 0.0 <= self.perturb < 0.5:
            bad("perturb must satisfy 0 <= u < 0.5")
        if self.transform not in TRANSFORM_KEYS:
            bad(f"transform must be one of {TRANSFORM_KEYS}")
        unknown = set(self.estimators) - set(ESTIMATOR_KEYS)
        if unknown or not self.estimators:
            bad(f"unknown estimators {sorted(unknown)}; choose from {ESTIMATOR_KEYS}")
        if "aggregate" in self.estimators and not {"ml_range", "cv"} <= set(self.estimators):
            bad("aggregate needs both ml_range and cv")
        if any(not 0.0 <= lam <= 1.0 for lam in self.lambdas):
            bad("lambdas must lie in [0, 1]")
        if any(k < 0 for k in self.taper_k):
            bad("taper_k must be nonnegative")
        if self.replicates < 1:
            bad("replicates must be >= 1")
        if self.multistarts < 1:
            bad("multistarts must be >= 1")
        if self.workers < 1:
            bad("workers must be >= 1")
        if self.locations not in LOCATION_MODES:
            bad(f"locations must be one of {LOCATION_MODES}")
        if self.asymptotics not in POPULATION_KEYS:
            bad(f"asymptotics must be one of {POPULATION_KEYS}")
        if len(self.cv_box) != 2 or not 0 < self.cv_box[0] < self.cv_box[1]:
            bad("cv_box needs 0 < lower < upper")
        if self.decay_tau <= 0 or self.decay_bins < 1:
            bad("decay_tau must be positive and decay_bins >= 1")
        p = len(self.theta0)
        for name in ("ml_box_lower", "ml_box_upper"):
            if len(getattr(self, name)) != p:
                bad(f"{name} must have {p} entries")
        for name in ("filter_lower", "filter_upper"):
            v = getattr(self, name)
            if v is not None and len(v) != p:
                bad(f"{name} must have {p} entries")
        if self.cv_filter is not None and (len(self.cv_filter) != 2 or not self.cv_filter[0] < self.cv_filter[1]):
            bad("cv_filter needs lower < upper")
        if any(not lo < hi for lo, hi in zip(self.ml_box_lower, self.ml_box_upper)):
            bad("ml_box_lower must be below ml_box_upper")

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    def canonical(self) -> dict:
        """Fields that affect results (not ``output_dir`` or ``workers``), JSON-stable."""
        out = asdict(self)
        for key in RUNTIME_KEYS:
            out.pop(key)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_text(self, runtime: bool = True) -> str:
        """Config file text; ``runtime=False`` leaves out ``output_dir`` and ``workers``."""
        lines = []
        for f in fields(self):
            if not runtime and f.name in RUNTIME_KEYS:
                continue
            v = getattr(self, f.name)
            if v is None:
                text = "none"
            elif isinstance(v, tuple):
                text = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            else:
                text = repr(v) if isinstance(v, float) else str(v)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"


def schema_help() -> str:
    width = max(map(len, SCHEMA))
    rows = [f"  {k.ljust(width)}  {h}" for k, (_, h) in SCHEMA.items()]
    return "Config file: one 'key = value' per line, '#' starts a comment.\nKeys:\n" + "\n".join(rows)


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: key {key!r} given twice")
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


__all__ = ["ExperimentConfig", "SCHEMA", "parse_config", "load_config", "schema_help",
           "ESTIMATOR_KEYS", "TRANSFORM_KEYS", "LOCATION_MODES", "POPULATION_KEYS", "RUNTIME_KEYS"]
