"""Tunability, rankings, pairwise win rates and signed-rank tests."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .perfdata import KnowledgeBase, PerformanceTable, best_record, filter_tables
from .priors import collect_best_values, fit_density, recommend_default

RECOMMENDED_DEFAULTS = "recommended-defaults"
PER_DATASET_MEDIAN = "per-dataset-median"
REFERENCE_MODES = (RECOMMENDED_DEFAULTS, PER_DATASET_MEDIAN)

DEFAULT_TIE_BAND = 0.01
EXACT_MAX_N = 20
SIGNIFICANCE_LEVEL = 0.05

# guards "within 1%" against representation error such as 0.91 - 0.90 > 0.01
_BAND_EPS = 1e-12


class AnalyticsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# tunability


@dataclass
class TunabilityResult:
    algorithm: str
    datasets: list[str]
    deltas: np.ndarray
    aggregate_std: float
    aggregate_mean: float
    reference_description: str
    reference_config: tuple | None = None


def recommended_configuration(kb: KnowledgeBase, algorithm: str, top_q: float | None = None) -> tuple:
    """Density mode of every hyperparameter, as one external configuration."""
    space = kb.space(algorithm)
    values = []
    for dom in space.domains:
        vals = collect_best_values(kb, algorithm, dom.name, top_q)
        if not dom.is_categorical and len(vals) < 2:
            vals = vals * 2
        values.append(recommend_default(fit_density(vals, dom)))
    return tuple(values)


def nearest_record(table: PerformanceTable, space, config: Sequence) -> int:
    """Index of the record closest to ``config`` in internal coordinates.

    Numeric dimensions use the unit-interval distance; categorical dimensions
    contribute 0 on a match and 1 otherwise. First occurrence wins ties.
    """
    target = space.to_internal(config)
    X = table.internal_matrix(space)
    cat = np.array([d.is_categorical for d in space.domains])
    diff = X - target
    diff[:, cat] = (diff[:, cat] != 0).astype(float)
    return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))


def _sample_std(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def tunability(kb: KnowledgeBase, algorithm: str, reference_mode: str = RECOMMENDED_DEFAULTS,
               top_q: float | None = None) -> TunabilityResult:
    """Gap between the best and a reference score on every dataset.

    The standard deviation of the gaps over datasets is the headline measure.
    """
    if reference_mode not in REFERENCE_MODES:
        raise AnalyticsError(f"reference_mode must be one of {REFERENCE_MODES}")
    tables = filter_tables(kb, algorithm=algorithm)
    if not tables:
        raise AnalyticsError(f"algorithm {algorithm!r} not in knowledge base")
    ref_config = None
    if reference_mode == RECOMMENDED_DEFAULTS:
        space = kb.space(algorithm)
        ref_config = recommended_configuration(kb, algorithm, top_q)
        description = "nearest sampled configuration to " + ", ".join(
            f"{n}={v}" for n, v in zip(space.names, ref_config))
    else:
        description = "median score of each dataset"
    deltas = []
    for t in tables:
        best = best_record(t).score
        if ref_config is not None:
            ref = t.records[nearest_record(t, space, ref_config)].score
        else:
            ref = float(np.median(t.scores))
        deltas.append(best - ref)
    deltas = np.array(deltas)
    return TunabilityResult(algorithm, [t.dataset for t in tables], deltas,
                            _sample_std(deltas), float(deltas.mean()), description, ref_config)


# ---------------------------------------------------------------------------
# rankings


def best_score_matrix(kb: KnowledgeBase, algorithms: Sequence[str] | None = None):
    """``(algorithms, datasets, M)`` with ``M[d, a]`` the best score or NaN."""
    algorithms = list(algorithms) if algorithms is not None else kb.algorithms
    datasets = sorted({d for a, d in kb.tables if a in algorithms})
    M = np.full((len(datasets), len(algorithms)), np.nan)
    for j, a in enumerate(algorithms):
        for i, d in enumerate(datasets):
            t = kb.get(a, d)
            if t is not None:
                M[i, j] = best_record(t).score
    return algorithms, datasets, M


@dataclass
class RankSummary:
    algorithms: list[str]
    mean_rank: np.ndarray
    ci_halfwidth: np.ndarray
    n_datasets: int
    n_excluded: int
    per_dataset_ranks: np.ndarray = field(repr=False)

    def order(self) -> list[str]:
        """Algorithms from best (lowest mean rank) to worst; name breaks ties."""
        return [self.algorithms[i] for i in
                sorted(range(len(self.algorithms)),
                       key=lambda i: (self.mean_rank[i], self.algorithms[i]))]


def mean_rank(kb: KnowledgeBase, algorithms: Sequence[str] | None = None) -> RankSummary:
    """Average per-dataset rank of each algorithm's best score (1 = best).

    Ties get average ranks; datasets lacking any algorithm are dropped.
    The half-width is ``1.96 * sd / sqrt(D)`` with the sample sd.
    """
    algorithms, datasets, M = best_score_matrix(kb, algorithms)
    if len(algorithms) < 2:
        raise AnalyticsError("ranking needs at least two algorithms")
    complete = ~np.isnan(M).any(axis=1)
    D = int(complete.sum())
    if D == 0:
        raise AnalyticsError("no dataset is shared by all algorithms")
    ranks = np.vstack([rankdata(-row, method="average") for row in M[complete]])
    sd = ranks.std(axis=0, ddof=1) if D > 1 else np.zeros(len(algorithms))
    return RankSummary(algorithms, ranks.mean(axis=0), 1.96 * sd / math.sqrt(D), D,
                       len(datasets) - D, ranks)


@dataclass
class WinMatrix:
    """Row ``i``, column ``j``: percentage of common datasets where ``i`` beats ``j``.

    Absent pairs (no common dataset) and the diagonal are NaN.
    """

    algorithms: list[str]
    win: np.ndarray
    tie: np.ndarray
    loss: np.ndarray
    n_common: np.ndarray
    tie_band: float
    relative: bool = False

    def rows(self):
        m = len(self.algorithms)
        for i, j in itertools.product(range(m), range(m)):
            if i != j:
                yield (self.algorithms[i], self.algorithms[j], self.win[i, j], self.tie[i, j],
                       self.loss[i, j], int(self.n_common[i, j]))


def win_matrix(kb: KnowledgeBase, tie_band: float = DEFAULT_TIE_BAND, relative: bool = False,
               algorithms: Sequence[str] | None = None) -> WinMatrix:
    """Pairwise win/tie/loss percentages of best scores.

    Two scores tie when they differ by at most ``tie_band`` (absolute score
    units, or a fraction of the larger score with ``relative``). Rows follow
    the overall mean rank, best first.
    """
    if tie_band < 0:
        raise AnalyticsError("tie_band must be >= 0")
    algorithms, _, M = best_score_matrix(kb, algorithms)
    try:
        algorithms = mean_rank(kb, algorithms).order()
        _, _, M = best_score_matrix(kb, algorithms)
    except AnalyticsError:
        pass
    m = len(algorithms)
    win = np.full((m, m), np.nan)
    tie = np.full((m, m), np.nan)
    loss = np.full((m, m), np.nan)
    n_common = np.zeros((m, m), dtype=int)
    for i, j in itertools.product(range(m), range(m)):
        if i == j:
            continue
        both = ~np.isnan(M[:, i]) & ~np.isnan(M[:, j])
        n = int(both.sum())
        n_common[i, j] = n
        if n == 0:
            continue
        a, b = M[both, i], M[both, j]
        band = tie_band * np.maximum(a, b) if relative else tie_band
        tied = np.abs(a - b) <= band + _BAND_EPS
        wins = ~tied & (a > b)
        losses = ~tied & (a < b)
        win[i, j] = 100.0 * wins.sum() / n
        loss[i, j] = 100.0 * losses.sum() / n
        tie[i, j] = 100.0 - win[i, j] - loss[i, j]
    return WinMatrix(algorithms, win, tie, loss, n_common, float(tie_band), relative)


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n_effective: int
    degenerate: bool = False
    method: str = "exact"


def signed_rank_null_counts(doubled_ranks: Sequence[int]) -> np.ndarray:
    """Number of sign patterns giving each value of twice the positive rank sum.

    Entry ``s`` counts the subsets of ``doubled_ranks`` summing to ``s``; the
    counts over all ``2**n`` patterns are exact integers.
    """
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(x: Sequence[float], y: Sequence[float], method: str = "auto") -> WilcoxonResult:
    """Two-sided paired Wilcoxon signed-rank test.

    Zero differences are dropped and tied absolute differences share average
    ranks. ``W = min(W+, W-)``. With at most 20 nonzero differences (or
    ``method="exact"``) the p-value is ``2 * P(W+ <= W)`` under the exact
    permutation null over all sign patterns, capped at 1; otherwise a normal
    approximation with tie and continuity corrections is used.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 1:
        raise AnalyticsError("x and y must be 1-d sequences of equal nonzero length")
    if method not in ("auto", "exact", "approx"):
        raise AnalyticsError("method must be 'auto', 'exact' or 'approx'")
    d = x - y
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, True, "degenerate")
    ranks = rankdata(np.abs(d), method="average")
    doubled = np.rint(2 * ranks).astype(np.int64)
    w_plus2 = int(doubled[d > 0].sum())
    w_minus2 = int(doubled.sum()) - w_plus2
    w2 = min(w_plus2, w_minus2)
    if method == "exact" or (method == "auto" and n <= EXACT_MAX_N):
        counts = signed_rank_null_counts(doubled)
        tail = int(sum(counts[: w2 + 1]))
        p = min(1.0, 2 * tail / 2 ** n)
        return WilcoxonResult(w2 / 2.0, p, n, False, "exact")
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
    if var <= 0:
        return WilcoxonResult(w2 / 2.0, 1.0, n, True, "approx")
    z = (w2 / 2.0 - mean + 0.5) / math.sqrt(var)
    p = min(1.0, 2.0 * float(norm.cdf(z)))
    return WilcoxonResult(w2 / 2.0, p, n, False, "approx")


@dataclass(frozen=True)
class PairwiseSignificance:
    first: str
    second: str
    p_value: float
    significant: bool
    n_datasets: int
    median_difference: float
    insufficient: bool = False

    @property
    def more_important(self) -> str | None:
        """Label of the subset with larger fractions when the difference is significant."""
        if not self.significant:
            return None
        return self.first if self.median_difference > 0 else self.second


def significance_report(importance_tables, subsets: Sequence | None = None,
                        alpha: float = SIGNIFICANCE_LEVEL) -> list[PairwiseSignificance]:
    """Pairwise signed-rank tests between subsets' fractions across datasets.

    ``importance_tables`` maps dataset id to an :class:`ImportanceReport` (or
    is a sequence of objects with ``dataset`` and ``report`` attributes).
    Subsets are labels like ``"gamma"`` or ``"kernel+gamma"``; by default all
    singletons. Only datasets whose reports contain both subsets are used.
    """
    reports = _as_report_map(importance_tables)
    if subsets is None:
        first = next(iter(reports.values()), None)
        subsets = [e.label for e in first.entries if len(e.subset) == 1] if first else []
    labels = [s if isinstance(s, str) else "+".join(s) for s in subsets]
    if len(labels) < 2:
        raise AnalyticsError("significance needs at least two subsets")
    fractions: dict[str, dict[str, float]] = {label: {} for label in labels}
    for ds, rep in reports.items():
        for label in labels:
            try:
                fractions[label][ds] = rep.fraction(label)
            except KeyError:
                pass
    out = []
    for a, b in itertools.combinations(labels, 2):
        common = sorted(set(fractions[a]) & set(fractions[b]))
        xa = np.array([fractions[a][d] for d in common])
        xb = np.array([fractions[b][d] for d in common])
        if len(common) < 2:
            med = float(np.median(xa - xb)) if common else 0.0
            out.append(PairwiseSignificance(a, b, 1.0, False, len(common), med, True))
            continue
        res = wilcoxon_signed_rank(xa, xb)
        out.append(PairwiseSignificance(a, b, res.p_value, res.p_value < alpha, len(common),
                                        float(np.median(xa - xb))))
    return out


def _as_report_map(importance_tables) -> dict:
    if isinstance(importance_tables, Mapping):
        return dict(importance_tables)
    return {item.dataset: item.report for item in importance_tables}
