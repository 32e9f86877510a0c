import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import rankdata

from cadebench.errors import ValidationError
from cadebench.evaluation import EvalReport, MetricSummary
from cadebench.stats import bh_adjust, compare_models, grids_from_reports, wilcoxon_signed_rank


def enumerated_p(d):
    """Two-sided exact p by listing all 2^n sign assignments of the non-zero |d| ranks."""
    d = np.asarray([x for x in d if x != 0], dtype=float)
    ranks = rankdata(np.abs(d))
    w_obs = min(ranks[d > 0].sum(), ranks[d < 0].sum())
    hits = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        wp = sum(r for r, s in zip(ranks, signs) if s)
        hits += wp <= w_obs + 1e-9
    return min(1.0, 2 * hits / 2 ** len(d))


def test_all_positive_five():
    r = wilcoxon_signed_rank([1, 2, 3, 4, 5], [0] * 5)
    assert (r.w_statistic, r.n_effective, r.method) == (0, 5, "exact")
    assert r.p_raw == 0.0625


def test_zeros_are_dropped():
    r = wilcoxon_signed_rank([0, 0, 1], [0, 0, 0])
    assert r.n_effective == 1 and r.w_statistic == 0 and r.p_raw == 1.0


def test_degenerate_when_identical():
    r = wilcoxon_signed_rank([0.3, 0.5], [0.3, 0.5])
    assert r.degenerate and r.p_raw == 1.0


def test_input_errors():
    with pytest.raises(ValidationError):
        wilcoxon_signed_rank([1, 2], [1])
    with pytest.raises(ValidationError):
        wilcoxon_signed_rank([], [])


@given(st.integers(0, 2 ** 32), st.integers(1, 12))
def test_exact_matches_enumeration(seed, n):
    rng = np.random.default_rng(seed)
    # small integer grid gives ties and zeros
    d = rng.integers(-4, 5, size=n).astype(float)
    if not d.any():
        d[0] = 1
    r = wilcoxon_signed_rank(d, np.zeros(n))
    assert r.method == "exact"
    assert r.p_raw == pytest.approx(enumerated_p(d), abs=1e-12)


def test_method_switch_at_25(rng):
    d = rng.normal(size=26)
    assert wilcoxon_signed_rank(d[:25], np.zeros(25)).method == "exact"
    assert wilcoxon_signed_rank(d, np.zeros(26)).method == "normal-approx"


@pytest.mark.parametrize("seed", range(50))
def test_normal_approximation_close_at_20(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(0.3, 1, size=20)
    b = rng.normal(0, 1, size=20)
    exact = wilcoxon_signed_rank(a, b, method="exact").p_raw
    approx = wilcoxon_signed_rank(a, b, method="approx").p_raw
    assert abs(exact - approx) < 0.01


@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=30))
def test_two_sided_symmetry(values):
    a = np.array(values)
    b = np.zeros_like(a)
    assert wilcoxon_signed_rank(a, b).p_raw == wilcoxon_signed_rank(b, a).p_raw


# -- Benjamini-Hochberg ----------------------------------------------------------

def test_bh_example():
    np.testing.assert_allclose(bh_adjust([0.005, 0.011, 0.02, 0.04, 0.13]),
                               [0.025, 0.0275, 0.02 * 5 / 3, 0.05, 0.13], rtol=1e-12)
    assert bh_adjust([0.3]) == [0.3]
    assert bh_adjust([0.04] * 6) == pytest.approx([0.04] * 6)
    assert bh_adjust([]) == []


@pytest.mark.parametrize("bad", [[0.0], [1.2], [float("nan")], [-0.1, 0.5]])
def test_bh_rejects_out_of_range(bad):
    with pytest.raises(ValidationError):
        bh_adjust(bad)


p_lists = st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=20)


@given(p_lists)
def test_bh_properties(ps):
    q = bh_adjust(ps)
    assert all(qi >= pi for pi, qi in zip(ps, q))
    assert all(qi <= 1.0 for qi in q)
    order = np.argsort(ps, kind="mergesort")
    sq = np.array(q)[order]
    assert np.all(np.diff(sq) >= 0)


@given(p_lists)
def test_bh_uninformative_addition_never_lowers(ps):
    before = bh_adjust(ps)
    after = bh_adjust(ps + [1.0])[:-1]
    assert all(a >= b - 1e-15 for a, b in zip(after, before))


def test_bh_duplicate_can_lower_others():
    # duplicating a small p-value raises the ranks above it faster than m grows
    ps = [0.02, 0.03, 0.5]
    assert bh_adjust(ps + [0.02])[1] < bh_adjust(ps)[1]


# -- model comparison ------------------------------------------------------------

def _grid(values, metrics=("AUROC_cls", "AUPRC_cls")):
    return {f"T{i}": {m: v + 0.01 * j for j, m in enumerate(metrics)} for i, v in enumerate(values)}


def test_strictly_better_on_eight_test_sets():
    ref = _grid([0.9 - 0.01 * i for i in range(8)])
    comp = _grid([0.5 + 0.02 * i for i in range(8)])
    res = compare_models({"ref": ref, "other": comp}, "ref")
    c = res.lookup("per_metric", "AUROC_cls", "other")
    assert c.result.n_effective == 8 and c.result.p_raw == pytest.approx(2 / 256)
    assert c.result.p_adjusted == c.result.p_raw and c.significant
    t = res.lookup("per_test_set", "T0", "other")
    assert t.result.n_effective == 2 and t.result.p_raw == 0.5 and not t.significant


def test_identical_comparator_is_degenerate():
    g = _grid([0.7, 0.8, 0.9])
    res = compare_models({"a": g, "b": {k: dict(v) for k, v in g.items()}}, "a")
    assert all(c.result.degenerate and not c.significant for c in res.comparisons)


def test_bh_family_is_comparators_per_cell():
    ref = _grid([0.9] * 8)
    strong = _grid([0.5 + 0.01 * i for i in range(8)])
    weak = _grid([0.91, 0.89, 0.92, 0.88, 0.93, 0.87, 0.94, 0.86])
    res = compare_models({"ref": ref, "strong": strong, "weak": weak}, "ref")
    assert res.comparators == ["strong", "weak"]
    assert len(res.comparisons) == 2 * (len(res.metrics) + len(res.test_sets))
    for cell in res.metrics:
        fam = [res.lookup("per_metric", cell, m).result for m in ("strong", "weak")]
        np.testing.assert_allclose([r.p_adjusted for r in fam], bh_adjust([r.p_raw for r in fam]))


def test_grid_mismatch():
    a = _grid([0.7, 0.8])
    b = _grid([0.7, 0.8, 0.9])
    with pytest.raises(ValidationError):
        compare_models({"a": a, "b": b}, "a")
    with pytest.raises(ValidationError):
        compare_models({"a": a}, "a")
    with pytest.raises(ValidationError):
        compare_models({"a": a, "b": a}, "z")


def test_grids_from_reports():
    def rep(model, ts, v):
        return EvalReport({"AUROC_cls": MetricSummary.of([v])}, 1, model, ts)

    grids = grids_from_reports([rep("a", "T1", 0.8), rep("a", "T2", 0.7), rep("b", "T1", 0.6)])
    assert grids == {"a": {"T1": {"AUROC_cls": 0.8}, "T2": {"AUROC_cls": 0.7}}, "b": {"T1": {"AUROC_cls": 0.6}}}
    with pytest.raises(ValidationError):
        grids_from_reports([rep("a", "T1", 0.8), rep("a", "T1", 0.7)])
