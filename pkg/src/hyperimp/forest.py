"""Random-forest surrogate over the internal configuration space.

Trees are stored as flat node arrays (like scikit-learn's ``Tree``) so that
every leaf can be described as an axis-aligned box of the unit cube:

* numeric dimension ``d``: the half-open interval ``(lo, hi]`` (a lower bound
  of 0 is closed), a point goes left when ``x <= threshold``;
* categorical dimension ``d``: a bitmask over category indices, a point goes
  left when its category bit is set in the node's ``left_mask``.

Leaf boxes of one tree tile the unit cube, which is what the functional ANOVA
integration in :mod:`hyperimp.fanova` relies on.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_cardinalities, check_features, check_training_data
from .config_space import builtin_space

MAX_EXHAUSTIVE_CATEGORIES = 8

_LEAF = -1


class LeafBoxes(NamedTuple):
    """Array view of a tree's leaves; row ``l`` describes leaf ``l``."""

    lower: np.ndarray  # (L, n) numeric lower bounds
    upper: np.ndarray  # (L, n) numeric upper bounds
    masks: np.ndarray  # (L, n) category bitmasks, 0 on numeric dims
    values: np.ndarray  # (L,)
    measures: np.ndarray  # (L,)
    node_ids: np.ndarray  # (L,)


class Leaf(NamedTuple):
    box: tuple  # per dim: (lo, hi) or frozenset of category indices
    value: float
    measure: float


class RegressionTree:
    """A fitted (or hand-built) axis-aligned regression tree."""

    def __init__(self, feature, threshold, left_mask, children_left, children_right,
                 value, n_node_samples=None, cardinalities=None):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left_mask = np.asarray(left_mask, dtype=np.int64)
        self.children_left = np.asarray(children_left, dtype=np.int64)
        self.children_right = np.asarray(children_right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)
        if n_node_samples is None:
            n_node_samples = np.zeros(len(self.value), dtype=np.int64)
        self.n_node_samples = np.asarray(n_node_samples, dtype=np.int64)
        self.cardinalities = tuple(int(c) for c in cardinalities)
        self._boxes = None

    @property
    def n_features(self) -> int:
        return len(self.cardinalities)

    @property
    def node_count(self) -> int:
        return len(self.value)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == _LEAF))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Index of the leaf node reached by every row of ``X``."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] != _LEAF)
        while active.size:
            cur = node[active]
            feat = self.feature[cur]
            x = X[active, feat]
            cat = np.asarray(self.cardinalities)[feat] > 0
            go_left = np.where(
                cat,
                ((self.left_mask[cur] >> np.where(cat, x, 0).astype(np.int64)) & 1) == 1,
                x <= self.threshold[cur],
            )
            node[active] = np.where(go_left, self.children_left[cur], self.children_right[cur])
            active = active[self.feature[node[active]] != _LEAF]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def leaf_boxes(self) -> LeafBoxes:
        if self._boxes is None:
            self._boxes = self._compute_boxes()
        return self._boxes

    def _compute_boxes(self) -> LeafBoxes:
        n = self.n_features
        card = np.asarray(self.cardinalities)
        full = np.where(card > 0, (1 << card) - 1, 0).astype(np.int64)
        lowers, uppers, masks, ids = [], [], [], []
        stack = [(0, np.zeros(n), np.ones(n), full.copy())]
        while stack:
            node, lo, hi, mask = stack.pop()
            f = self.feature[node]
            if f == _LEAF:
                lowers.append(lo)
                uppers.append(hi)
                masks.append(mask)
                ids.append(node)
                continue
            l_lo, l_hi, l_mask = lo.copy(), hi.copy(), mask.copy()
            r_lo, r_hi, r_mask = lo.copy(), hi.copy(), mask.copy()
            if card[f] > 0:
                l_mask[f] = mask[f] & self.left_mask[node]
                r_mask[f] = mask[f] & ~self.left_mask[node]
            else:
                t = self.threshold[node]
                l_hi[f] = min(hi[f], t)
                r_lo[f] = max(lo[f], t)
            # right pushed first so leaves come out in left-to-right order
            stack.append((self.children_right[node], r_lo, r_hi, r_mask))
            stack.append((self.children_left[node], l_lo, l_hi, l_mask))
        lower = np.array(lowers).reshape(-1, n)
        upper = np.array(uppers).reshape(-1, n)
        masks_arr = np.array(masks, dtype=np.int64).reshape(-1, n)
        ids_arr = np.array(ids, dtype=np.int64)
        sizes = dimension_sizes(lower, upper, masks_arr, self.cardinalities)
        measures = np.prod(sizes, axis=1) if n else np.ones(len(ids_arr))
        return LeafBoxes(lower, upper, masks_arr, self.value[ids_arr], measures, ids_arr)

    def mean(self) -> float:
        """Uniform-measure average of the tree function over the unit cube."""
        b = self.leaf_boxes()
        return float(np.dot(b.values, b.measures))

    def to_dict(self) -> dict:
        return {
            "cardinalities": list(self.cardinalities),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left_mask": self.left_mask.tolist(),
            "children_left": self.children_left.tolist(),
            "children_right": self.children_right.tolist(),
            "value": self.value.tolist(),
            "n_node_samples": self.n_node_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(d["feature"], d["threshold"], d["left_mask"], d["children_left"],
                   d["children_right"], d["value"], d.get("n_node_samples"), d["cardinalities"])


def popcount(masks: np.ndarray) -> np.ndarray:
    masks = np.asarray(masks, dtype=np.int64)
    out = np.zeros(masks.shape, dtype=np.int64)
    m = masks.copy()
    while np.any(m):
        out += m & 1
        m >>= 1
    return out


def dimension_sizes(lower, upper, masks, cardinalities) -> np.ndarray:
    """Per-dimension uniform measure of each box: interval length or category fraction."""
    card = np.asarray(cardinalities, dtype=float)
    cat = card > 0
    lengths = np.clip(upper - lower, 0.0, None)
    fractions = popcount(masks) / np.where(cat, card, 1.0)
    return np.where(cat, fractions, lengths)


def enumerate_leaves(tree: RegressionTree) -> list[Leaf]:
    """Every leaf with its box, value and uniform-measure volume."""
    b = tree.leaf_boxes()
    leaves = []
    for l in range(len(b.values)):
        box = []
        for d, k in enumerate(tree.cardinalities):
            if k:
                box.append(frozenset(c for c in range(k) if (b.masks[l, d] >> c) & 1))
            else:
                box.append((float(b.lower[l, d]), float(b.upper[l, d])))
        leaves.append(Leaf(tuple(box), float(b.values[l]), float(b.measures[l])))
    return leaves


# ---------------------------------------------------------------------------
# tree induction


@njit(cache=True)
def _numeric_split(X, idx, yc, features, msl):
    """Best variance-reduction threshold over numeric ``features``.

    Candidates are midpoints between adjacent distinct sorted values; the gain
    ``S_l**2 * (1/n_l + 1/n_r)`` (``S_l`` = left sum of centred targets) equals
    the drop in squared error.
    """
    n = idx.shape[0]
    best_gain = -1.0
    best_f = -1
    best_t = 0.0
    xs = np.empty(n)
    for fi in range(features.shape[0]):
        f = features[fi]
        for i in range(n):
            xs[i] = X[idx[i], f]
        order = np.argsort(xs, kind="mergesort")
        s = 0.0
        for i in range(n - 1):
            s += yc[order[i]]
            nl = i + 1
            if nl < msl:
                continue
            if n - nl < msl:
                break
            a = xs[order[i]]
            b = xs[order[i + 1]]
            if b > a:
                g = s * s * (1.0 / nl + 1.0 / (n - nl))
                if g > best_gain:
                    best_gain = g
                    best_f = f
                    t = 0.5 * (a + b)
                    best_t = t if t < b else a
    return best_gain, best_f, best_t


@njit(cache=True)
def _categorical_split(X, idx, yc, f, k, msl, max_exhaustive):
    """Best category bipartition of column ``f``; returns ``(gain, left_mask)``.

    Up to ``max_exhaustive`` categories every bipartition of the categories
    present in the node is tried, otherwise each present category against the
    rest. Categories absent from the node join the larger child. A zero mask
    means no admissible split.
    """
    n = idx.shape[0]
    counts = np.zeros(k, dtype=np.int64)
    sums = np.zeros(k)
    for i in range(n):
        c = int(X[idx[i], f])
        counts[c] += 1
        sums[c] += yc[i]
    present = np.empty(k, dtype=np.int64)
    p = 0
    for c in range(k):
        if counts[c] > 0:
            present[p] = c
            p += 1
    if p < 2:
        return -1.0, 0
    best_gain = -1.0
    best_code = 0
    exhaustive = k <= max_exhaustive
    n_codes = (1 << (p - 1)) - 1 if exhaustive else p
    for j in range(n_codes):
        code = j + 1 if exhaustive else 1 << j
        nl = 0
        sl = 0.0
        for b in range(p):
            if (code >> b) & 1:
                nl += counts[present[b]]
                sl += sums[present[b]]
        if nl < msl or n - nl < msl:
            continue
        g = sl * sl * (1.0 / nl + 1.0 / (n - nl))
        if g > best_gain:
            best_gain = g
            best_code = code
    if best_code == 0:
        return -1.0, 0
    mask = 0
    nl = 0
    for b in range(p):
        if (best_code >> b) & 1:
            mask |= 1 << present[b]
            nl += counts[present[b]]
    if nl >= n - nl:
        for c in range(k):
            if counts[c] == 0:
                mask |= 1 << c
    return best_gain, mask


class _Builder:
    def __init__(self, X, y, cardinalities, max_depth, min_samples_leaf, n_split_features, rng):
        self.X = np.ascontiguousarray(X, dtype=float)
        self.y = np.ascontiguousarray(y, dtype=float)
        self.card = cardinalities
        self.max_depth = max_depth
        self.msl = min_samples_leaf
        self.m = n_split_features
        self.rng = rng
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left_mask: list[int] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.count: list[int] = []

    def _new_node(self, idx) -> int:
        self.feature.append(_LEAF)
        self.threshold.append(0.0)
        self.left_mask.append(0)
        self.left.append(_LEAF)
        self.right.append(_LEAF)
        self.value.append(float(np.mean(self.y[idx])))
        self.count.append(len(idx))
        return len(self.value) - 1

    def build(self) -> RegressionTree:
        root_idx = np.arange(len(self.y))
        stack = [(self._new_node(root_idx), root_idx, 0)]
        while stack:
            node, idx, depth = stack.pop()
            split = self._find_split(idx, depth)
            if split is None:
                continue
            f, thr, mask, go_left = split
            left_idx, right_idx = idx[go_left], idx[~go_left]
            self.feature[node] = f
            self.threshold[node] = thr
            self.left_mask[node] = mask
            li = self._new_node(left_idx)
            ri = self._new_node(right_idx)
            self.left[node] = li
            self.right[node] = ri
            stack.append((ri, right_idx, depth + 1))
            stack.append((li, left_idx, depth + 1))
        return RegressionTree(self.feature, self.threshold, self.left_mask, self.left,
                              self.right, self.value, self.count, self.card)

    def _find_split(self, idx, depth):
        n = len(idx)
        if n < 2 * self.msl or (self.max_depth is not None and depth >= self.max_depth):
            return None
        y = self.y[idx]
        if y.max() == y.min():
            return None
        yc = y - y.mean()
        floor = 1e-12 * float(np.dot(yc, yc))
        order = self.rng.permutation(len(self.card))
        best = self._search(order[: self.m], idx, yc, floor)
        if best is None and self.m < len(order):
            best = self._search(order[self.m:], idx, yc, floor)
        if best is None:
            return None
        _, f, thr, mask = best
        x = self.X[idx, f]
        if self.card[f]:
            go_left = ((mask >> x.astype(np.int64)) & 1) == 1
        else:
            go_left = x <= thr
        return f, thr, mask, go_left

    def _search(self, features, idx, yc, floor):
        """Best ``(gain, feature, threshold, mask)`` among ``features`` or None."""
        numeric = np.array([f for f in features if not self.card[f]], dtype=np.int64)
        best = None
        if numeric.size:
            gain, f, thr = _numeric_split(self.X, idx, yc, numeric, self.msl)
            if f >= 0 and gain > floor:
                best = (gain, int(f), float(thr), 0)
        for f in features:
            if not self.card[f]:
                continue
            gain, mask = _categorical_split(self.X, idx, yc, f, self.card[f], self.msl,
                                            MAX_EXHAUSTIVE_CATEGORIES)
            if mask and gain > floor and (best is None or gain > best[0]):
                best = (gain, int(f), 0.0, int(mask))
        return best


def build_tree(X, y, cardinalities=None, *, max_depth=None, min_samples_leaf=1,
               features_per_split=1.0, seed=0) -> RegressionTree:
    """Grow one variance-reduction tree on internal coordinates ``X``."""
    X, y = check_training_data(X, y)
    card = check_cardinalities(cardinalities, X.shape[1])
    check_features(X, card)
    m = max(1, math.ceil(features_per_split * X.shape[1]))
    rng = np.random.default_rng(seed)
    return _Builder(X, y, card, max_depth, int(min_samples_leaf), m, rng).build()


# ---------------------------------------------------------------------------
# forest


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 32
    max_depth: int | None = None
    min_samples_leaf: int = 3
    features_per_split: float = 0.8
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if int(self.n_trees) < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth is not None and int(self.max_depth) < 1:
            raise ValueError("max_depth must be >= 1 or None")
        if int(self.min_samples_leaf) < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not 0.0 < float(self.features_per_split) <= 1.0:
            raise ValueError("features_per_split must lie in (0, 1]")


class RandomForestSurrogate(RegressorMixin, BaseEstimator):
    """Bagged variance-reduction regression trees over the unit cube.

    Parameters
    ----------
    n_trees : int
        Number of trees.
    max_depth : int or None
        Depth limit; ``None`` grows until leaves are pure or too small.
    min_samples_leaf : int
        Minimum number of training rows in every leaf.
    features_per_split : float
        Fraction of dimensions examined at each node (at least one).
    bootstrap : bool
        Train every tree on a bootstrap resample instead of the full data.
    seed : int
        Tree ``i`` uses the derived seed ``seed + i``.
    cardinalities : sequence of int or None
        Category count per column (0 for numeric columns in ``[0, 1]``).
        ``None`` treats every column as numeric.
    """

    def __init__(self, n_trees=32, max_depth=None, min_samples_leaf=3,
                 features_per_split=0.8, bootstrap=True, seed=0, cardinalities=None):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.features_per_split = features_per_split
        self.bootstrap = bootstrap
        self.seed = seed
        self.cardinalities = cardinalities

    def fit(self, X, y):
        ForestParams(self.n_trees, self.max_depth, self.min_samples_leaf,
                     self.features_per_split, self.bootstrap, self.seed)
        X, y = check_training_data(X, y)
        if len(y) < 2:
            raise ValueError("at least 2 records are needed to fit a forest")
        card = check_cardinalities(self.cardinalities, X.shape[1])
        check_features(X, card)
        m = max(1, math.ceil(self.features_per_split * X.shape[1]))
        trees = []
        for i in range(int(self.n_trees)):
            rng = np.random.default_rng(self.seed + i)
            if self.bootstrap:
                rows = rng.integers(0, len(y), size=len(y))
                Xi, yi = X[rows], y[rows]
            else:
                Xi, yi = X, y
            builder = _Builder(Xi, yi, card, self.max_depth, int(self.min_samples_leaf), m, rng)
            trees.append(builder.build())
        self.trees_ = trees
        self.cardinalities_ = card
        self.n_features_in_ = X.shape[1]
        return self

    def _check_X(self, X):
        check_is_fitted(self, "trees_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return X

    def predict_per_tree(self, X) -> np.ndarray:
        X = self._check_X(X)
        return np.vstack([t.predict(X) for t in self.trees_])

    def predict(self, X) -> np.ndarray:
        return self.predict_per_tree(X).mean(axis=0)

    def predict_with_spread(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Mean prediction and standard deviation across trees."""
        per_tree = self.predict_per_tree(X)
        return per_tree.mean(axis=0), per_tree.std(axis=0)

    @property
    def params(self) -> ForestParams:
        return ForestParams(self.n_trees, self.max_depth, self.min_samples_leaf,
                            self.features_per_split, self.bootstrap, self.seed)

    def to_dict(self) -> dict:
        check_is_fitted(self, "trees_")
        out = {"params": asdict(self.params), "trees": [t.to_dict() for t in self.trees_]}
        space = getattr(self, "space_", None)
        if space is not None:
            out["space"] = space.to_dict()
        return out


Forest = RandomForestSurrogate


def fit_forest(table, params: ForestParams | None = None, space=None) -> RandomForestSurrogate:
    """Fit the surrogate to a performance table in internal coordinates."""
    params = params or ForestParams()
    if space is None:
        space = builtin_space(table.algorithm)
    X = table.internal_matrix(space)
    y = table.scores
    if len(y) < 2:
        raise ValueError(f"{table.algorithm}/{table.dataset}: at least 2 records are needed")
    forest = RandomForestSurrogate(cardinalities=space.cardinalities, **asdict(params))
    forest.fit(X, y)
    forest.space_ = space
    return forest


def predict(forest: RandomForestSurrogate, config: Sequence) -> tuple[float, float]:
    """``(mean, spread)`` of the forest at one configuration in external units."""
    space = getattr(forest, "space_", None)
    x = space.to_internal(config) if space is not None else np.asarray(config, dtype=float)
    mean, spread = forest.predict_with_spread(x[None, :])
    return float(mean[0]), float(spread[0])
