"""Density-based recommendations for hyperparameter values.

Values that performed well across datasets are collected per hyperparameter
and smoothed into a one-dimensional density in internal coordinates: a
Gaussian KDE reflected at both ends of ``[0, 1]`` for numeric domains, an
add-one smoothed frequency table for categorical ones. The density's mode,
mapped back to external units, is the recommended default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_fraction
from .config_space import HyperparameterDomain
from .perfdata import KnowledgeBase, filter_tables

BANDWIDTH_FLOOR = 1e-3
ARGMAX_GRID = 1001


def silverman_bandwidth(samples: np.ndarray, floor: float = BANDWIDTH_FLOOR) -> float:
    """``0.9 * min(sd, IQR / 1.34) * n ** (-1/5)``, floored."""
    x = np.asarray(samples, dtype=float)
    if len(x) < 2:
        return floor
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return max(floor, 0.9 * spread * len(x) ** -0.2)


@dataclass(frozen=True)
class DensityEstimate:
    """Fitted density over one hyperparameter.

    ``samples`` are internal values. For categorical domains ``probabilities``
    holds the smoothed frequency of every category and ``bandwidth`` is 0.
    """

    hyperparameter: str
    domain: HyperparameterDomain
    samples: np.ndarray
    bandwidth: float
    probabilities: np.ndarray | None = None

    @property
    def is_categorical(self) -> bool:
        return self.domain.is_categorical

    def pdf(self, u) -> np.ndarray:
        """Density at internal points ``u``; zero outside ``[0, 1]``.

        The Gaussian kernel is reflected at both boundaries, so no mass leaks
        out of the unit interval however wide the bandwidth.
        """
        if self.is_categorical:
            raise ValueError(f"{self.hyperparameter}: categorical density has no pdf")
        u = np.atleast_1d(np.asarray(u, dtype=float))
        s = self.samples[None, :]
        h = self.bandwidth
        x = u[:, None]
        # Reflecting at both ends repeatedly places images at 2k + s and 2k - s;
        # images further than 8 bandwidths away contribute nothing measurable.
        reach = int(math.ceil(8.0 * h / 2.0)) + 1
        dens = np.zeros_like(u)
        for k in range(-reach, reach + 1):
            dens += norm.pdf((x - (2 * k + s)) / h).sum(axis=1)
            dens += norm.pdf((x - (2 * k - s)) / h).sum(axis=1)
        out = dens / (len(self.samples) * h)
        return np.where((u >= 0.0) & (u <= 1.0), out, 0.0)


def collect_best_values(kb: KnowledgeBase, algorithm: str, hyperparameter: str,
                        top_q: float | None = None) -> list:
    """Values of ``hyperparameter`` from the best records of every dataset.

    ``top_q=None`` takes the single best record per dataset, otherwise the top
    ``ceil(top_q * K)`` records of each table by score (first occurrence wins
    ties).
    """
    space = kb.space(algorithm)
    pos = space.index(hyperparameter)
    if top_q is not None:
        top_q = check_fraction(top_q, "top_q")
    values = []
    for table in filter_tables(kb, algorithm=algorithm):
        k = 1 if top_q is None else max(1, math.ceil(top_q * len(table) - 1e-9))
        order = np.argsort(-table.scores, kind="stable")[:k]
        values.extend(table.records[i].config[pos] for i in order)
    return values


def fit_density(values: Sequence, domain: HyperparameterDomain,
                bandwidth: float | str = "silverman",
                bandwidth_floor: float = BANDWIDTH_FLOOR) -> DensityEstimate:
    """Fit a density to external ``values`` of one hyperparameter."""
    internal = np.array([domain.to_internal(v) for v in values], dtype=float)
    if domain.is_categorical:
        if len(internal) < 1:
            raise ValueError(f"{domain.name}: need at least one value")
        counts = np.bincount(internal.astype(int), minlength=domain.cardinality)
        probs = (counts + 1.0) / (counts.sum() + domain.cardinality)
        return DensityEstimate(domain.name, domain, internal, 0.0, probs)
    if len(internal) < 2:
        raise ValueError(f"{domain.name}: need at least two numeric values")
    if bandwidth == "silverman":
        h = silverman_bandwidth(internal, bandwidth_floor)
    else:
        h = max(float(bandwidth), bandwidth_floor)
    return DensityEstimate(domain.name, domain, internal, h)


def recommend_default(density: DensityEstimate):
    """Mode of the density in external units (lowest value / first category on ties)."""
    if density.is_categorical:
        return density.domain.categories[int(np.argmax(density.probabilities))]
    grid = np.linspace(0.0, 1.0, ARGMAX_GRID)
    heights = density.pdf(grid)
    return density.domain.from_internal(float(grid[int(np.argmax(heights))]))


def density_curve(density: DensityEstimate, n_points: int = ARGMAX_GRID,
                  internal: bool = False) -> list[tuple[float, float]]:
    """``(value, height)`` pairs evenly spaced in internal coordinates.

    With ``internal=False`` values are external and heights are densities per
    external unit (divided by the Jacobian of the internal map), so the curve
    integrates to one over the external axis. Integer domains are treated as
    their continuous hull.
    """
    if density.is_categorical:
        raise ValueError(f"{density.hyperparameter}: categorical kind has no curve; "
                         "use frequency_table")
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    grid = np.linspace(0.0, 1.0, int(n_points))
    heights = density.pdf(grid)
    if internal:
        return list(zip(grid.tolist(), heights.tolist()))
    dom = density.domain
    lo, hi = float(dom.lower), float(dom.upper)
    if dom.kind == "continuous-log":
        span = math.log(hi) - math.log(lo)
        x = np.exp(math.log(lo) + grid * span)
        x[0], x[-1] = lo, hi
        heights = heights / (x * span)
    else:
        span = hi - lo
        x = lo + grid * span
        heights = heights / span if span > 0 else heights
    return list(zip(x.tolist(), heights.tolist()))


def frequency_table(density: DensityEstimate) -> list[tuple[str, float]]:
    if not density.is_categorical:
        raise ValueError(f"{density.hyperparameter}: numeric kind; use density_curve")
    return list(zip(density.domain.categories, density.probabilities.tolist()))


def trapezoid(points: Sequence[tuple[float, float]]) -> float:
    xy = np.asarray(points, dtype=float)
    return float(np.trapezoid(xy[:, 1], xy[:, 0])) if hasattr(np, "trapezoid") else float(
        np.trapz(xy[:, 1], xy[:, 0]))


class KDEPrior(BaseEstimator):
    """Estimator wrapper around :func:`fit_density`.

    ``fit`` takes external values of the hyperparameter described by
    ``domain``; ``recommended_`` holds the recommended default afterwards.
    """

    def __init__(self, domain=None, bandwidth="silverman", bandwidth_floor=BANDWIDTH_FLOOR):
        self.domain = domain
        self.bandwidth = bandwidth
        self.bandwidth_floor = bandwidth_floor

    def fit(self, values, y=None):
        if self.domain is None:
            raise ValueError("KDEPrior needs a domain")
        self.density_ = fit_density(list(values), self.domain, self.bandwidth,
                                    self.bandwidth_floor)
        self.bandwidth_ = self.density_.bandwidth
        self.recommended_ = recommend_default(self.density_)
        return self

    def score_samples(self, values) -> np.ndarray:
        """Log density at external ``values``."""
        check_is_fitted(self, "density_")
        internal = np.array([self.domain.to_internal(v) for v in values])
        if self.density_.is_categorical:
            return np.log(self.density_.probabilities[internal.astype(int)])
        with np.errstate(divide="ignore"):
            return np.log(self.density_.pdf(internal))

    def curve(self, n_points: int = ARGMAX_GRID, internal: bool = False):
        check_is_fitted(self, "density_")
        return density_curve(self.density_, n_points, internal)
