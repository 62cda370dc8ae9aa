"""Exact functional ANOVA of tree ensembles.

For one tree the marginal of a subset ``U`` of dimensions is the average of
the tree function over every other dimension under the uniform measure of the
unit cube. Because the tree is piecewise constant on axis-aligned boxes, the
marginal is piecewise constant on the grid of cells cut by the tree's own
split points on the ``U`` dimensions, so every integral reduces to a finite
weighted sum over those cells:

    a_U(cell)  = sum_l  value_l * measure_l / prod_{d in U} size_d(l)   [cell inside leaf l]
    f_U        = a_U - sum_{W proper subset of U} f_W
    V_U        = sum_cells weight(cell) * f_U(cell)**2

``V_U / V`` is the importance of ``U``. A forest's importance is the mean of
the per-tree fractions.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .forest import ForestParams, RandomForestSurrogate, RegressionTree, dimension_sizes, fit_forest

logger = logging.getLogger(__name__)

Subset = tuple[int, ...]


class ImportanceError(RuntimeError):
    pass


def subsets_up_to(n: int, max_order: int) -> list[Subset]:
    """Nonempty subsets of ``range(n)`` with at most ``max_order`` members.

    Ordered by size, then lexicographically.
    """
    out: list[Subset] = []
    for k in range(1, min(max_order, n) + 1):
        out.extend(itertools.combinations(range(n), k))
    return out


def _check_subset(subset: Sequence[int], n: int) -> Subset:
    s = tuple(int(i) for i in subset)
    if any(b <= a for a, b in zip(s, s[1:])):
        raise ValueError(f"subset indices must be strictly increasing: {s}")
    if s and (s[0] < 0 or s[-1] >= n):
        raise ValueError(f"subset {s} out of range for {n} dimensions")
    return s


# ---------------------------------------------------------------------------
# pointwise queries


@dataclass(frozen=True)
class MarginalQuery:
    """Fixed internal values for the dimensions in ``subset``."""

    subset: Subset
    assignment: tuple[float, ...]

    def __post_init__(self):
        if len(self.subset) != len(self.assignment):
            raise ValueError("assignment needs one value per subset member")


def _leaf_hits(tree: RegressionTree, subset: Subset, assignment) -> np.ndarray:
    """Mask of leaves whose box contains the partial assignment."""
    b = tree.leaf_boxes()
    hit = np.ones(len(b.values), dtype=bool)
    for d, x in zip(subset, assignment):
        k = tree.cardinalities[d]
        if k:
            c = int(round(x))
            if not 0 <= c < k:
                raise ValueError(f"dimension {d}: category index {x!r} out of range")
            hit &= ((b.masks[:, d] >> c) & 1) == 1
        else:
            if not 0.0 <= x <= 1.0:
                raise ValueError(f"dimension {d}: internal value {x!r} outside [0, 1]")
            lo, hi = b.lower[:, d], b.upper[:, d]
            hit &= ((x > lo) | ((lo <= 0.0) & (x >= 0.0))) & (x <= hi)
    return hit


def marginal(tree: RegressionTree, query: MarginalQuery) -> float:
    """Average tree output over all dimensions outside ``query.subset``."""
    subset = _check_subset(query.subset, tree.n_features)
    b = tree.leaf_boxes()
    if not subset:
        return float(np.dot(b.values, b.measures))
    hit = _leaf_hits(tree, subset, query.assignment)
    sizes = dimension_sizes(b.lower[hit], b.upper[hit], b.masks[hit], tree.cardinalities)
    rest = [d for d in range(tree.n_features) if d not in subset]
    weight = np.prod(sizes[:, rest], axis=1) if rest else np.ones(int(hit.sum()))
    return float(np.dot(b.values[hit], weight))


def component_value(tree: RegressionTree, subset: Sequence[int], assignment: Sequence[float],
                    _memo: dict | None = None) -> float:
    """Value of the component function of ``subset`` at ``assignment``.

    The empty subset gives the tree mean; otherwise the marginal minus every
    proper-subset component, memoised over the subset lattice.
    """
    subset = _check_subset(subset, tree.n_features)
    point = dict(zip(subset, (float(a) for a in assignment)))
    memo = {} if _memo is None else _memo

    def comp(u: Subset) -> float:
        # keyed by the fixed values too, so one memo can be shared across points
        key = (u, tuple(point[d] for d in u))
        if key in memo:
            return memo[key]
        a = marginal(tree, MarginalQuery(u, key[1]))
        if u:
            a -= sum(comp(w) for k in range(len(u)) for w in itertools.combinations(u, k))
        memo[key] = a
        return a

    return comp(subset)


# ---------------------------------------------------------------------------
# exact variance decomposition of one tree


class TreeDecomposition:
    """Cell-grid representation of one tree's fANOVA components."""

    def __init__(self, tree: RegressionTree, max_order: int):
        if int(max_order) < 1:
            raise ValueError("max_order must be >= 1")
        self.tree = tree
        self.max_order = int(max_order)
        b = tree.leaf_boxes()
        self.mean = float(np.dot(b.values, b.measures))
        self.total_variance = float(np.dot(b.measures, (b.values - self.mean) ** 2))
        sizes = dimension_sizes(b.lower, b.upper, b.masks, tree.cardinalities)
        self._weighted_values = b.values * b.measures
        self.cell_edges: list[np.ndarray | None] = []
        self.cell_weights: list[np.ndarray] = []
        self._incidence: list[np.ndarray] = []
        for d, k in enumerate(tree.cardinalities):
            if k:
                cats = np.arange(k)
                inside = ((b.masks[:, d][:, None] >> cats[None, :]) & 1) == 1
                weights = np.full(k, 1.0 / k)
                self.cell_edges.append(None)
            else:
                edges = np.unique(np.concatenate(([0.0, 1.0], b.lower[:, d], b.upper[:, d])))
                inside = (b.lower[:, d][:, None] <= edges[None, :-1]) & (
                    edges[None, 1:] <= b.upper[:, d][:, None])
                weights = np.diff(edges)
                self.cell_edges.append(edges)
            self.cell_weights.append(weights)
            with np.errstate(divide="ignore", invalid="ignore"):
                self._incidence.append(np.where(inside, 1.0 / sizes[:, d][:, None], 0.0))
        self.components: dict[Subset, np.ndarray] = {}
        self.variances: dict[Subset, float] = {}
        for u in subsets_up_to(tree.n_features, self.max_order):
            self._decompose(u)

    def marginal_grid(self, subset: Subset) -> np.ndarray:
        operands = [self._weighted_values]
        letters = "abcdefghijklmnopqrstuvwxyz"
        spec = "z"
        for i, d in enumerate(subset):
            operands.append(self._incidence[d])
            spec += ",z" + letters[i]
        spec += "->" + letters[: len(subset)]
        if len(subset) == 1:
            return self._weighted_values @ self._incidence[subset[0]]
        if len(subset) == 2:
            a, b = self._incidence[subset[0]], self._incidence[subset[1]]
            return (self._weighted_values[:, None] * a).T @ b
        return np.einsum(spec, *operands, optimize=True)

    def _decompose(self, u: Subset) -> None:
        grid = self.marginal_grid(u) - self.mean
        for k in range(1, len(u)):
            for w in itertools.combinations(u, k):
                shape = [len(self.cell_weights[d]) if d in w else 1 for d in u]
                grid = grid - self.components[w].reshape(shape)
        weights = self.cell_weights[u[0]]
        for d in u[1:]:
            weights = np.multiply.outer(weights, self.cell_weights[d])
        self.components[u] = grid
        self.variances[u] = float(np.sum(weights * grid * grid))

    def fractions(self, subsets: Sequence[Subset]) -> np.ndarray:
        if self.total_variance <= 0.0:
            return np.zeros(len(subsets))
        return np.array([self.variances[u] / self.total_variance for u in subsets])


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class SubsetImportance:
    subset: Subset
    names: tuple[str, ...]
    fraction_mean: float
    fraction_std: float
    raw_variance_mean: float

    @property
    def label(self) -> str:
        return "+".join(self.names)


@dataclass
class ImportanceReport:
    names: list[str]
    subsets: list[Subset]
    fraction_mean: np.ndarray
    fraction_std: np.ndarray
    raw_variance_mean: np.ndarray
    total_variance_mean: float
    baseline_mean: float
    max_order: int
    degenerate: bool
    per_tree_fractions: np.ndarray = field(repr=False)
    per_tree_total_variance: np.ndarray = field(repr=False)

    @property
    def entries(self) -> list[SubsetImportance]:
        return [
            SubsetImportance(u, tuple(self.names[i] for i in u), float(m), float(s), float(v))
            for u, m, s, v in zip(self.subsets, self.fraction_mean, self.fraction_std,
                                  self.raw_variance_mean)
        ]

    def _position(self, subset) -> int:
        if isinstance(subset, str):
            subset = subset.split("+")
        idx = tuple(sorted(self.names.index(s) if isinstance(s, str) else int(s) for s in subset))
        try:
            return self.subsets.index(idx)
        except ValueError:
            raise KeyError(f"subset {subset!r} not in report (max_order={self.max_order})") from None

    def fraction(self, subset) -> float:
        """Mean variance fraction of a subset given by names, indices or ``a+b`` label."""
        return float(self.fraction_mean[self._position(subset)])

    def singleton_fractions(self) -> dict[str, float]:
        return {self.names[u[0]]: float(m) for u, m in zip(self.subsets, self.fraction_mean)
                if len(u) == 1}

    def ranking(self, order: int = 1) -> list[str]:
        """Subset labels of the given order, most important first (stable)."""
        pairs = [(e.label, e.fraction_mean) for e in self.entries if len(e.subset) == order]
        return [label for label, _ in sorted(pairs, key=lambda p: -p[1])]


def variance_decomposition(forest: RandomForestSurrogate, max_order: int = 2,
                           names: Sequence[str] | None = None) -> ImportanceReport:
    """Per-tree exact variance fractions of every subset up to ``max_order``.

    Trees with zero variance contribute fraction 0 to the means and are left
    out of the standard deviations.
    """
    check_is_fitted(forest, "trees_")
    if int(max_order) < 1:
        raise ValueError("max_order must be >= 1")
    n = forest.n_features_in_
    if names is None:
        space = getattr(forest, "space_", None)
        names = space.names if space is not None else [f"x{i}" for i in range(n)]
    names = list(names)
    subsets = subsets_up_to(n, int(max_order))
    fractions, raw, totals, means = [], [], [], []
    for tree in forest.trees_:
        dec = TreeDecomposition(tree, max_order)
        fractions.append(dec.fractions(subsets))
        raw.append([dec.variances[u] for u in subsets])
        totals.append(dec.total_variance)
        means.append(dec.mean)
    fractions = np.array(fractions).reshape(len(forest.trees_), len(subsets))
    raw = np.array(raw).reshape(fractions.shape)
    totals = np.array(totals)
    live = totals > 0.0
    std = fractions[live].std(axis=0) if live.any() else np.zeros(len(subsets))
    return ImportanceReport(
        names=names,
        subsets=subsets,
        fraction_mean=fractions.mean(axis=0),
        fraction_std=std,
        raw_variance_mean=raw.mean(axis=0),
        total_variance_mean=float(totals.mean()),
        baseline_mean=float(np.mean(means)),
        max_order=int(max_order),
        degenerate=not live.any(),
        per_tree_fractions=fractions,
        per_tree_total_variance=totals,
    )


@dataclass(frozen=True)
class DatasetImportance:
    dataset: str
    report: ImportanceReport


def _table_report(args):
    table, space, params, max_order = args
    try:
        forest = fit_forest(table, params, space)
        return variance_decomposition(forest, max_order, space.names)
    except Exception as exc:  # noqa: BLE001 - re-raised with the dataset id
        raise ImportanceError(f"dataset {table.dataset!r}: {exc}") from exc


def importance_table(kb, algorithm: str, spaces: Mapping | None = None,
                     params: ForestParams | None = None, max_order: int = 2,
                     n_jobs: int = 1) -> list[DatasetImportance]:
    """Fit and decompose one surrogate per dataset of ``algorithm``.

    Results are ordered by dataset id whatever ``n_jobs`` is.
    """
    from .perfdata import filter_tables

    tables = filter_tables(kb, algorithm=algorithm)
    if not tables:
        raise ImportanceError(f"no tables for algorithm {algorithm!r}")
    space = (spaces or kb.spaces)[algorithm]
    params = params or ForestParams()
    jobs = [(t, space, params, max_order) for t in tables]
    if n_jobs and n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            reports = list(pool.map(_table_report, jobs))
    else:
        reports = [_table_report(j) for j in jobs]
    for t, r in zip(tables, reports):
        logger.debug("%s/%s: total variance %.3g", algorithm, t.dataset, r.total_variance_mean)
    return [DatasetImportance(t.dataset, r) for t, r in zip(tables, reports)]


class FunctionalANOVA(BaseEstimator):
    """Fit a random-forest surrogate and decompose its variance.

    ``X`` holds internal coordinates (numeric columns in ``[0, 1]``,
    categorical columns as category indices declared via ``cardinalities``).
    After fitting, ``report_`` holds the :class:`ImportanceReport` and
    ``importances_`` the singleton fractions in column order.
    """

    def __init__(self, max_order=2, n_trees=32, max_depth=None, min_samples_leaf=3,
                 features_per_split=0.8, bootstrap=True, seed=0, cardinalities=None,
                 feature_names=None):
        self.max_order = max_order
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.features_per_split = features_per_split
        self.bootstrap = bootstrap
        self.seed = seed
        self.cardinalities = cardinalities
        self.feature_names = feature_names

    def fit(self, X, y):
        self.forest_ = RandomForestSurrogate(
            n_trees=self.n_trees, max_depth=self.max_depth,
            min_samples_leaf=self.min_samples_leaf,
            features_per_split=self.features_per_split, bootstrap=self.bootstrap,
            seed=self.seed, cardinalities=self.cardinalities,
        ).fit(X, y)
        self.n_features_in_ = self.forest_.n_features_in_
        self.report_ = variance_decomposition(self.forest_, self.max_order, self.feature_names)
        singles = [i for i, u in enumerate(self.report_.subsets) if len(u) == 1]
        self.importances_ = self.report_.fraction_mean[singles]
        return self

    def quantify_importance(self, subset) -> float:
        check_is_fitted(self, "report_")
        return self.report_.fraction(subset)
