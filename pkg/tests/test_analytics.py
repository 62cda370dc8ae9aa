import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import wilcoxon as scipy_wilcoxon

from hyperimp.analytics import (
    DEFAULT_TIE_BAND,
    PER_DATASET_MEDIAN,
    best_score_matrix,
    mean_rank,
    nearest_record,
    significance_report,
    tunability,
    wilcoxon_signed_rank,
    win_matrix,
)
from hyperimp.config_space import HyperparameterDomain, define_space
from hyperimp.perfdata import PerformanceRecord, PerformanceTable
from hyperimp.synthetic import planted_kb
from oracles import SPACE_1D, enumerate_signed_rank, kb_from_scores, naive_win_counts, random_kb


# ---------------------------------------------------------------------------
# Wilcoxon


def test_all_positive_differences_of_five():
    res = wilcoxon_signed_rank([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
    assert res.statistic == 0.0
    assert res.p_value == 0.0625
    assert res.n_effective == 5 and res.method == "exact"


def test_identical_samples_are_degenerate():
    res = wilcoxon_signed_rank([0.3, 0.4], [0.3, 0.4])
    assert res.degenerate and res.p_value == 1.0 and res.n_effective == 0


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(-4, 4), st.integers(-4, 4)), min_size=1, max_size=12))
def test_exact_p_equals_enumeration(pairs):
    x = [a for a, _ in pairs]
    y = [b for _, b in pairs]
    w, p = enumerate_signed_rank(x, y)
    res = wilcoxon_signed_rank(x, y)
    assert res.statistic == w
    assert res.p_value == p


@pytest.mark.parametrize("n", range(1, 13))
def test_exact_p_for_every_n_up_to_twelve(n):
    rng = np.random.default_rng(n)
    for _ in range(5):
        x = rng.normal(size=n).round(1)
        y = rng.normal(size=n).round(1)
        _, p = enumerate_signed_rank(list(x), list(y))
        assert wilcoxon_signed_rank(x, y).p_value == p


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=30))
def test_swap_symmetry(pairs):
    x = [a for a, _ in pairs]
    y = [b for _, b in pairs]
    a = wilcoxon_signed_rank(x, y)
    b = wilcoxon_signed_rank(y, x)
    assert (a.statistic, a.p_value) == (b.statistic, b.p_value)


def test_normal_approximation_close_to_exact():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.normal(size=25)
        y = rng.normal(loc=0.2, size=25)
        approx = wilcoxon_signed_rank(x, y)
        assert approx.method == "approx"
        exact = wilcoxon_signed_rank(x, y, method="exact")
        assert abs(approx.p_value - exact.p_value) <= 0.02
        # the twenty-pair truncation stays on the exact path
        assert wilcoxon_signed_rank(x[:20], y[:20]).method == "exact"


def test_agrees_with_scipy():
    rng = np.random.default_rng(1)
    for n in (8, 15, 30):
        x, y = rng.normal(size=n), rng.normal(size=n)
        ours = wilcoxon_signed_rank(x, y).p_value
        method = "exact" if n <= 20 else "approx"
        ref = scipy_wilcoxon(x, y, method=method, correction=True).pvalue
        assert ours == pytest.approx(ref, rel=1e-9)


# ---------------------------------------------------------------------------
# significance


class _Report:
    def __init__(self, fractions):
        self._f = fractions

    def fraction(self, label):
        return self._f[label]


def test_identical_vectors_not_significant():
    reports = {f"d{j}": _Report({"a": 0.3, "b": 0.3}) for j in range(10)}
    (res,) = significance_report(reports, ["a", "b"])
    assert res.p_value == 1.0 and not res.significant


def test_planted_separation_significant():
    rng = np.random.default_rng(0)
    reports = {}
    for j in range(30):
        b = rng.uniform(0.0, 0.3)
        reports[f"d{j}"] = _Report({"a": b + 0.2 + rng.uniform(0, 0.3), "b": b})
    (res,) = significance_report(reports, ["a", "b"])
    assert res.p_value < 0.05 and res.significant
    assert res.more_important == "a"


def test_single_dataset_is_insufficient():
    (res,) = significance_report({"d0": _Report({"a": 0.9, "b": 0.1})}, ["a", "b"])
    assert res.insufficient and res.p_value == 1.0 and not res.significant


def test_coverage_restricted_to_common_datasets():
    reports = {f"d{j}": _Report({"a": 0.5 + j / 100, "b": 0.1}) for j in range(6)}
    reports["d9"] = _Report({"a": 0.1})
    (res,) = significance_report(reports, ["a", "b"])
    assert res.n_datasets == 6


# ---------------------------------------------------------------------------
# ranks and wins


def test_unanimous_ordering():
    kb = kb_from_scores({
        "A": {f"d{j}": [0.9] for j in range(10)},
        "B": {f"d{j}": [0.8] for j in range(10)},
    })
    rs = mean_rank(kb)
    assert list(rs.mean_rank) == [1.0, 2.0]
    assert list(rs.ci_halfwidth) == [0.0, 0.0]


def test_full_tie_gives_average_rank():
    kb = kb_from_scores({a: {f"d{j}": [0.7] for j in range(5)} for a in "AB"})
    assert list(mean_rank(kb).mean_rank) == [1.5, 1.5]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(2, 6))
def test_rank_sum_conservation(seed, m):
    kb = random_kb(np.random.default_rng(seed), m=m)
    rs = mean_rank(kb)
    assert rs.mean_rank.sum() == pytest.approx(m * (m + 1) / 2, abs=1e-9)


def test_three_algorithm_rank_sum():
    kb = random_kb(np.random.default_rng(3), m=3)
    assert mean_rank(kb).mean_rank.sum() == pytest.approx(6.0, abs=1e-9)


def test_incomplete_datasets_excluded_from_ranks():
    kb = kb_from_scores({"A": {"d1": [0.9], "d2": [0.9]}, "B": {"d1": [0.8]}})
    rs = mean_rank(kb)
    assert rs.n_datasets == 1 and rs.n_excluded == 1


def test_half_percent_gap_is_a_tie():
    kb = kb_from_scores({"i": {"d": [0.905]}, "j": {"d": [0.900]}})
    wm = win_matrix(kb)
    assert wm.tie_band == DEFAULT_TIE_BAND == 0.01
    assert wm.tie[0, 1] == 100.0


def test_band_edge_counts_as_tie():
    kb = kb_from_scores({"i": {"d": [0.91]}, "j": {"d": [0.90]}})
    assert win_matrix(kb).tie[0, 1] == 100.0


def test_zero_band_has_no_ties():
    kb = random_kb(np.random.default_rng(4), m=3)
    wm = win_matrix(kb, tie_band=0.0)
    _, _, M = _best(kb, wm.algorithms)
    for i, j in itertools.permutations(range(3), 2):
        if not np.any(M[:, i] == M[:, j]):
            assert wm.win[i, j] + wm.loss[i, j] == 100.0


def _best(kb, algorithms):
    return best_score_matrix(kb, algorithms)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), band=st.sampled_from([0.0, 0.01, 0.05]))
def test_win_matrix_matches_recount(seed, band):
    kb = random_kb(np.random.default_rng(seed), m=4, missing=0.2)
    wm = win_matrix(kb, tie_band=band)
    _, _, M = _best(kb, wm.algorithms)
    m = len(wm.algorithms)
    for i, j in itertools.permutations(range(m), 2):
        win, tie, loss, n = naive_win_counts(M, i, j, band)
        assert wm.n_common[i, j] == n
        if n == 0:
            assert np.isnan(wm.win[i, j])
            continue
        assert wm.win[i, j] == pytest.approx(100 * win / n, abs=1e-9)
        assert wm.loss[i, j] == pytest.approx(100 * loss / n, abs=1e-9)
        assert wm.win[i, j] + wm.tie[i, j] + wm.loss[i, j] == pytest.approx(100, abs=1e-9)
        assert wm.win[i, j] + wm.win[j, i] + wm.tie[i, j] == pytest.approx(100, abs=1e-9)


def test_win_matrix_rows_follow_mean_rank():
    kb = kb_from_scores({
        "worst": {f"d{j}": [0.5] for j in range(4)},
        "best": {f"d{j}": [0.9] for j in range(4)},
        "mid": {f"d{j}": [0.7] for j in range(4)},
    })
    assert win_matrix(kb).algorithms == ["best", "mid", "worst"]


def test_relative_band():
    kb = kb_from_scores({"i": {"d": [0.5]}, "j": {"d": [0.496]}})
    assert win_matrix(kb, tie_band=0.01, relative=True).tie[0, 1] == 100.0
    assert win_matrix(kb, tie_band=0.001).win[0, 1] == 100.0


def test_planted_dominance_ranks_first():
    spec = {"n_samples": 30, "algorithms": [
        {"name": "A", "space": "decision_tree", "datasets": 8, "offset": 0.8, "scale": 0.05,
         "noise": 0.0, "terms": [{"hyperparameters": ["max_features"]}]},
        {"name": "B", "space": "decision_tree", "datasets": 8, "offset": 0.7, "scale": 0.05,
         "noise": 0.0, "terms": [{"hyperparameters": ["max_features"]}]},
    ]}
    rs = mean_rank(planted_kb(spec, seed=0))
    assert dict(zip(rs.algorithms, rs.mean_rank))["A"] == 1.0


# ---------------------------------------------------------------------------
# tunability


def test_constant_scores_are_untunable():
    kb = kb_from_scores({"A": {f"d{j}": [0.7] * 20 for j in range(4)}})
    for mode in ("recommended-defaults", PER_DATASET_MEDIAN):
        res = tunability(kb, "A", mode)
        assert np.all(res.deltas == 0.0)
        assert res.aggregate_std == 0.0


def test_two_dataset_sample_std():
    kb = kb_from_scores({"A": {"d1": [0.5, 0.6, 0.7], "d2": [0.4, 0.5, 0.8]}})
    res = tunability(kb, "A", PER_DATASET_MEDIAN)
    np.testing.assert_allclose(res.deltas, [0.1, 0.3], atol=1e-12)
    assert res.aggregate_std == pytest.approx(math.sqrt(0.02), abs=1e-12)
    assert res.aggregate_std == pytest.approx(0.1414, abs=1e-4)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_median_reference_deltas_nonnegative(seed):
    kb = random_kb(np.random.default_rng(seed), m=2, k=7)
    for alg in kb.algorithms:
        assert np.all(tunability(kb, alg, PER_DATASET_MEDIAN).deltas >= 0.0)


def test_planted_variance_ordering():
    spec = {"n_samples": 100, "algorithms": [
        {"name": "X", "space": "svm", "datasets": 10, "scale": 0.4, "noise": 0.005,
         "dataset_jitter": 0.0, "term_jitter": 0.5,
         "terms": [{"hyperparameters": ["gamma"], "shape": "peak"}]},
        {"name": "Y", "space": "decision_tree", "datasets": 10, "scale": 0.02, "noise": 0.005,
         "term_jitter": 0.5, "terms": [{"hyperparameters": ["max_features"], "shape": "peak"}]},
    ]}
    kb = planted_kb(spec, seed=1)
    assert tunability(kb, "X").aggregate_std > tunability(kb, "Y").aggregate_std


def test_nearest_record_treats_categories_as_mismatch():
    space = define_space("t", [SPACE_1D, HyperparameterDomain("k", "categorical",
                                                              categories=("p", "q", "r"))])
    recs = [PerformanceRecord("t", "d", cfg, 0.5, i + 1)
            for i, cfg in enumerate([(0.5, "r"), (0.45, "p"), (0.9, "q")])]
    table = PerformanceTable("t", "d", tuple(recs))
    # index distance would favour "q" (1 step) over "r" (2 steps); a mismatch is a mismatch
    assert nearest_record(table, space, (0.5, "p")) == 1
    assert nearest_record(table, space, (0.52, "q")) == 2
