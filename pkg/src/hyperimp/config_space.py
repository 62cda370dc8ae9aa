"""Hyperparameter domains, configuration spaces and uniform sampling.

Every domain has an *internal* representation used by the surrogate trees,
the variance decomposition and the density estimates:

* numeric kinds map affinely onto ``[0, 1]`` (log-scaled kinds map the log of
  the value), so uniform sampling in the original space is uniform on the
  unit interval;
* categorical and boolean kinds map to the category index ``0 .. k-1``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

CONTINUOUS = "continuous"
CONTINUOUS_LOG = "continuous-log"
INTEGER = "integer"
CATEGORICAL = "categorical"
BOOLEAN = "boolean"

KINDS = (CONTINUOUS, CONTINUOUS_LOG, INTEGER, CATEGORICAL, BOOLEAN)
NUMERIC_KINDS = (CONTINUOUS, CONTINUOUS_LOG, INTEGER)

BUILTIN_SPACES = (
    "svm",
    "random_forest",
    "adaboost",
    "extra_trees",
    "decision_tree",
    "gradient_boosting",
)

SPACE_DIR_ENV = "HYPERIMP_SPACE_DIR"

Configuration = tuple


class SpaceError(ValueError):
    """Invalid domain or space definition, or a value outside its domain."""


@dataclass(frozen=True)
class HyperparameterDomain:
    name: str
    kind: str
    lower: float | None = None
    upper: float | None = None
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name or not isinstance(self.name, str):
            raise SpaceError("domain name must be a non-empty string")
        if self.kind not in KINDS:
            raise SpaceError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind in NUMERIC_KINDS:
            if self.lower is None or self.upper is None:
                raise SpaceError(f"{self.name}: numeric domain needs lower and upper")
            lo, hi = float(self.lower), float(self.upper)
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise SpaceError(f"{self.name}: bounds must be finite")
            if self.kind == INTEGER:
                if lo != int(lo) or hi != int(hi):
                    raise SpaceError(f"{self.name}: integer bounds must be integral")
                if lo > hi:
                    raise SpaceError(f"{self.name}: lower > upper")
                object.__setattr__(self, "lower", int(lo))
                object.__setattr__(self, "upper", int(hi))
            else:
                if not lo < hi:
                    raise SpaceError(f"{self.name}: requires lower < upper, got [{lo}, {hi}]")
                if self.kind == CONTINUOUS_LOG and lo <= 0:
                    raise SpaceError(f"{self.name}: log-scaled domain requires lower > 0")
                object.__setattr__(self, "lower", lo)
                object.__setattr__(self, "upper", hi)
            object.__setattr__(self, "categories", ())
        else:
            cats = tuple(str(c) for c in self.categories)
            if self.kind == BOOLEAN and not cats:
                cats = ("true", "false")
            if not cats:
                raise SpaceError(f"{self.name}: categories must be non-empty")
            if len(set(cats)) != len(cats):
                raise SpaceError(f"{self.name}: duplicate category labels")
            if self.kind == BOOLEAN and len(cats) != 2:
                raise SpaceError(f"{self.name}: boolean domain needs exactly two labels")
            object.__setattr__(self, "categories", cats)
            object.__setattr__(self, "lower", None)
            object.__setattr__(self, "upper", None)

    @property
    def is_categorical(self) -> bool:
        return self.kind in (CATEGORICAL, BOOLEAN)

    @property
    def cardinality(self) -> int:
        """Number of categories, or 0 for numeric domains."""
        return len(self.categories) if self.is_categorical else 0

    def _span(self) -> tuple[float, float]:
        if self.kind == CONTINUOUS_LOG:
            return math.log(self.lower), math.log(self.upper)
        return float(self.lower), float(self.upper)

    def validate(self, value: Any):
        """Return ``value`` normalised to the domain's canonical type or raise."""
        if self.is_categorical:
            label = _canonical_label(self, value)
            if label is None:
                raise SpaceError(f"{self.name}: {value!r} is not one of {list(self.categories)}")
            return label
        try:
            v = float(value)
        except (TypeError, ValueError):
            raise SpaceError(f"{self.name}: {value!r} is not numeric") from None
        if not math.isfinite(v):
            raise SpaceError(f"{self.name}: {value!r} is not finite")
        if self.kind == INTEGER:
            if v != round(v):
                raise SpaceError(f"{self.name}: {value!r} is not an integer")
            v = int(round(v))
        if v < self.lower or v > self.upper:
            raise SpaceError(f"{self.name}: {value!r} outside [{self.lower}, {self.upper}]")
        return v

    def to_internal(self, value: Any) -> float:
        value = self.validate(value)
        if self.is_categorical:
            return float(self.categories.index(value))
        lo, hi = self._span()
        if hi == lo:
            return 0.0
        x = math.log(value) if self.kind == CONTINUOUS_LOG else float(value)
        return min(1.0, max(0.0, (x - lo) / (hi - lo)))

    def from_internal(self, u: float):
        if self.is_categorical:
            idx = int(round(u))
            if not 0 <= idx < len(self.categories) or abs(u - idx) > 1e-9:
                raise SpaceError(f"{self.name}: {u!r} is not a category index")
            return self.categories[idx]
        if not -1e-12 <= u <= 1 + 1e-12:
            raise SpaceError(f"{self.name}: internal value {u!r} outside [0, 1]")
        u = min(1.0, max(0.0, float(u)))
        if u == 0.0:
            return self.lower
        if u == 1.0:
            return self.upper
        lo, hi = self._span()
        x = lo + u * (hi - lo)
        if self.kind == CONTINUOUS_LOG:
            return min(self.upper, max(self.lower, math.exp(x)))
        if self.kind == INTEGER:
            return int(round(x))
        return x

    def to_unit(self, u: np.ndarray) -> np.ndarray:
        """Map internal values to cell midpoints of the unit interval.

        Numeric internals are already in ``[0, 1]``; category ``i`` of ``k`` maps
        to ``(i + 0.5) / k``.
        """
        u = np.asarray(u, dtype=float)
        if self.is_categorical:
            return (u + 0.5) / self.cardinality
        return u

    def sample_internal(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.is_categorical:
            return rng.integers(0, self.cardinality, size=size).astype(float)
        if self.kind == INTEGER:
            if self.upper == self.lower:
                return np.zeros(size)
            ints = rng.integers(self.lower, self.upper + 1, size=size)
            return (ints - self.lower) / (self.upper - self.lower)
        return rng.uniform(0.0, 1.0, size=size)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.is_categorical:
            d["categories"] = list(self.categories)
        else:
            d["lower"] = self.lower
            d["upper"] = self.upper
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HyperparameterDomain":
        return cls(
            name=d.get("name"),
            kind=d.get("kind"),
            lower=d.get("lower"),
            upper=d.get("upper"),
            categories=tuple(d.get("categories") or ()),
        )


def _canonical_label(domain: HyperparameterDomain, value: Any) -> str | None:
    if isinstance(value, str):
        if value in domain.categories:
            return value
        if domain.kind == BOOLEAN:
            lowered = {c.lower(): c for c in domain.categories}
            return lowered.get(value.strip().lower())
        return None
    if domain.kind == BOOLEAN and isinstance(value, (bool, np.bool_)):
        return _canonical_label(domain, "true" if value else "false")
    return None


@dataclass(frozen=True)
class ConfigurationSpace:
    algorithm: str
    domains: tuple[HyperparameterDomain, ...] = field(default_factory=tuple)

    def __post_init__(self):
        doms = tuple(self.domains)
        if not doms:
            raise SpaceError(f"{self.algorithm}: empty domain list")
        names = [d.name for d in doms]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise SpaceError(f"{self.algorithm}: duplicate hyperparameter names {dup}")
        object.__setattr__(self, "domains", doms)

    def __len__(self) -> int:
        return len(self.domains)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.domains]

    @property
    def cardinalities(self) -> list[int]:
        """Per-dimension category count (0 for numeric dimensions)."""
        return [d.cardinality for d in self.domains]

    def index(self, name: str) -> int:
        for i, d in enumerate(self.domains):
            if d.name == name:
                return i
        raise SpaceError(f"{self.algorithm}: no hyperparameter named {name!r}")

    def __getitem__(self, name: str) -> HyperparameterDomain:
        return self.domains[self.index(name)]

    def validate(self, config: Sequence) -> Configuration:
        if len(config) != len(self.domains):
            raise SpaceError(
                f"{self.algorithm}: expected {len(self.domains)} values, got {len(config)}"
            )
        return tuple(d.validate(v) for d, v in zip(self.domains, config))

    def to_internal(self, config: Sequence) -> np.ndarray:
        if len(config) != len(self.domains):
            raise SpaceError(
                f"{self.algorithm}: expected {len(self.domains)} values, got {len(config)}"
            )
        return np.array([d.to_internal(v) for d, v in zip(self.domains, config)])

    def from_internal(self, vector: Sequence[float]) -> Configuration:
        if len(vector) != len(self.domains):
            raise SpaceError(
                f"{self.algorithm}: expected {len(self.domains)} values, got {len(vector)}"
            )
        return tuple(d.from_internal(float(u)) for d, u in zip(self.domains, vector))

    def to_internal_array(self, configs: Iterable[Sequence]) -> np.ndarray:
        rows = [self.to_internal(c) for c in configs]
        if not rows:
            return np.empty((0, len(self.domains)))
        return np.vstack(rows)

    def to_unit_cube(self, X: np.ndarray) -> np.ndarray:
        """Internal matrix -> points of the unit cube (categories at cell midpoints)."""
        X = np.asarray(X, dtype=float)
        return np.column_stack([d.to_unit(X[:, j]) for j, d in enumerate(self.domains)])

    def sample_internal(self, count: int, seed: int) -> np.ndarray:
        if int(count) < 1:
            raise SpaceError("count must be >= 1")
        rng = np.random.default_rng(seed)
        cols = [d.sample_internal(rng, int(count)) for d in self.domains]
        return np.column_stack(cols)

    def to_dict(self) -> dict:
        return {"algorithm": self.algorithm, "domains": [d.to_dict() for d in self.domains]}

    @classmethod
    def from_dict(cls, d: dict) -> "ConfigurationSpace":
        if "algorithm" not in d or "domains" not in d:
            raise SpaceError("space document needs 'algorithm' and 'domains'")
        return define_space(d["algorithm"], [HyperparameterDomain.from_dict(x) for x in d["domains"]])


def define_space(algorithm: str, domains: Iterable[HyperparameterDomain]) -> ConfigurationSpace:
    return ConfigurationSpace(algorithm=algorithm, domains=tuple(domains))


def sample_uniform(space: ConfigurationSpace, count: int, seed: int) -> list[Configuration]:
    """Draw ``count`` configurations with every hyperparameter independent.

    Continuous values are uniform on ``[lower, upper]``, log-scaled ones are
    uniform in the exponent, integers are uniform over the inclusive range and
    categories are equiprobable.
    """
    X = space.sample_internal(count, seed)
    return [space.from_internal(row) for row in X]


def to_internal(space: ConfigurationSpace, config: Sequence) -> np.ndarray:
    return space.to_internal(config)


def from_internal(space: ConfigurationSpace, vector: Sequence[float]) -> Configuration:
    return space.from_internal(vector)


def load_space(path: str | os.PathLike) -> ConfigurationSpace:
    with open(path, encoding="utf-8") as fh:
        return ConfigurationSpace.from_dict(json.load(fh))


def save_space(space: ConfigurationSpace, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(space.to_dict(), fh, indent=2)
        fh.write("\n")


def builtin_space(name: str) -> ConfigurationSpace:
    if name not in BUILTIN_SPACES:
        raise SpaceError(f"no built-in space {name!r}; choose from {', '.join(BUILTIN_SPACES)}")
    text = resources.files("hyperimp").joinpath("spaces", f"{name}.json").read_text("utf-8")
    return ConfigurationSpace.from_dict(json.loads(text))


def builtin_spaces() -> dict[str, ConfigurationSpace]:
    return {name: builtin_space(name) for name in BUILTIN_SPACES}


def resolve_spaces(space_dir: str | os.PathLike | None = None) -> dict[str, ConfigurationSpace]:
    """Built-in spaces, overridden by ``*.json`` files in ``space_dir``.

    ``space_dir`` defaults to the ``HYPERIMP_SPACE_DIR`` environment variable.
    """
    spaces = builtin_spaces()
    space_dir = space_dir or os.environ.get(SPACE_DIR_ENV)
    if space_dir:
        for p in sorted(Path(space_dir).glob("*.json")):
            sp = load_space(p)
            spaces[sp.algorithm] = sp
    return spaces
