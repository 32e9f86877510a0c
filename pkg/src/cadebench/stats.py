"""Paired model comparison: Wilcoxon signed-rank tests with Benjamini-Hochberg adjustment."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError

EXACT_MAX_N = 25


@dataclass
class TestResult:
    w_statistic: float
    n_effective: int
    p_raw: float
    method: str
    p_adjusted: float | None = None
    degenerate: bool = False
    w_plus: float = 0.0
    w_minus: float = 0.0

    __test__ = False  # not a pytest class

    def to_json(self) -> dict:
        return {
            "w": self.w_statistic,
            "w_plus": self.w_plus,
            "w_minus": self.w_minus,
            "n_effective": self.n_effective,
            "method": self.method,
            "p_raw": self.p_raw,
            "p_adjusted": self.p_adjusted,
            "degenerate": self.degenerate,
        }


def exact_lower_tail(doubled_ranks: Sequence[int], w2: int) -> float:
    """P(W+ <= w) under random signs, with ranks and ``w`` given doubled (integers)."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        counts[r:] = counts[r:] + counts[:total + 1 - r].copy()
    return float(counts[: w2 + 1].sum()) / float(2 ** len(doubled_ranks))


def wilcoxon_signed_rank(a, b, method: str = "auto") -> TestResult:
    """Two-sided Wilcoxon signed-rank test of paired samples.

    Zero differences are dropped and tied magnitudes share midranks.
    ``method="auto"`` uses the exact permutation distribution up to 25
    non-zero pairs and a continuity- and tie-corrected normal approximation
    beyond that. When every difference is zero the test is undefined:
    the result is flagged ``degenerate`` with ``p_raw = 1``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("paired samples must be 1-D and of equal length")
    if len(a) < 1:
        raise ValidationError("paired samples must not be empty")
    if method not in ("auto", "exact", "approx"):
        raise ValidationError(f"unknown method {method!r}")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return TestResult(0.0, 0, 1.0, "exact", degenerate=True)

    ranks = rankdata(np.abs(d), method="average")
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    use_exact = method == "exact" or (method == "auto" and n <= EXACT_MAX_N)
    if use_exact:
        doubled = [int(round(2 * r)) for r in ranks]
        p = 2.0 * exact_lower_tail(doubled, int(round(2 * w)))
        return TestResult(w, n, min(1.0, p), "exact", w_plus=w_plus, w_minus=w_minus)

    mu = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts ** 3 - tie_counts)) / 48.0
    z = (w - mu + 0.5) / math.sqrt(var)
    p = math.erfc(-z / math.sqrt(2.0))
    return TestResult(w, n, min(1.0, p), "normal-approx", w_plus=w_plus, w_minus=w_minus)


def bh_adjust(p_values: Sequence[float]) -> list[float]:
    """Benjamini-Hochberg step-up adjusted p-values, in input order."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.ndim != 1:
        raise ValidationError("p-values must be a flat sequence")
    if p.size == 0:
        return []
    if np.any(~np.isfinite(p)) or np.any(p <= 0) or np.any(p > 1):
        raise ValidationError("p-values must lie in (0, 1]")
    m = len(p)
    order = np.argsort(p, kind="mergesort")
    scaled = p[order] * m / np.arange(1, m + 1)
    adjusted = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    # q >= p holds exactly; the max guards against p * m / m rounding below p
    out[order] = np.minimum(np.maximum(adjusted, p[order]), 1.0)
    return out.tolist()


# ---------------------------------------------------------------------------
# Model comparison
# ---------------------------------------------------------------------------

Grid = Mapping[str, Mapping[str, float]]  # test set -> metric -> value

GROUPINGS = ("per_metric", "per_test_set")


@dataclass
class Comparison:
    grouping: str
    cell: str
    comparator: str
    result: TestResult
    significant: bool

    def to_json(self) -> dict:
        return {"grouping": self.grouping, "cell": self.cell, "comparator": self.comparator,
                "significant": self.significant, **self.result.to_json()}


@dataclass
class ComparisonResult:
    reference: str
    comparators: list[str]
    test_sets: list[str]
    metrics: list[str]
    alpha: float
    comparisons: list[Comparison]

    def to_json(self) -> dict:
        return {
            "reference": self.reference,
            "comparators": self.comparators,
            "test_sets": self.test_sets,
            "metrics": self.metrics,
            "alpha": self.alpha,
            "families": "one BH family per (grouping, cell) across comparators",
            "comparisons": [c.to_json() for c in self.comparisons],
        }

    def lookup(self, grouping, cell, comparator) -> Comparison:
        for c in self.comparisons:
            if (c.grouping, c.cell, c.comparator) == (grouping, cell, comparator):
                return c
        raise KeyError((grouping, cell, comparator))


def _grid_axes(grid: Grid):
    tests = sorted(grid)
    metrics = sorted({m for t in tests for m in grid[t]})
    return tests, metrics


def compare_models(grids: Mapping[str, Grid], reference: str, alpha: float = 0.05,
                   method: str = "auto") -> ComparisonResult:
    """Wilcoxon tests of the reference model against every comparator.

    Two groupings are produced. ``per_metric``: for each metric, the values
    across test sets form one paired sample. ``per_test_set``: for each test
    set, the values across metrics form one paired sample. Within a grouping,
    the tests of all comparators on the same cell form one BH family.
    """
    if reference not in grids:
        raise ValidationError(f"reference model {reference!r} not among {sorted(grids)}")
    comparators = [m for m in grids if m != reference]
    if not comparators:
        raise ValidationError("need at least one comparator model")
    tests, metrics = _grid_axes(grids[reference])
    for model, grid in grids.items():
        t, m = _grid_axes(grid)
        if t != tests or m != metrics or any(set(grid[x]) != set(metrics) for x in t):
            raise ValidationError(f"model {model!r} was not evaluated on the reference grid")

    comparisons = []
    for grouping in GROUPINGS:
        cells = metrics if grouping == "per_metric" else tests
        for cell in cells:
            def values(model):
                g = grids[model]
                if grouping == "per_metric":
                    return [g[t][cell] for t in tests]
                return [g[cell][m] for m in metrics]

            ref = values(reference)
            results = [wilcoxon_signed_rank(ref, values(c), method) for c in comparators]
            adjusted = bh_adjust([r.p_raw for r in results])
            for comp, res, q in zip(comparators, results, adjusted):
                res.p_adjusted = q
                comparisons.append(Comparison(grouping, cell, comp, res,
                                              significant=(not res.degenerate) and q <= alpha))
    return ComparisonResult(reference, comparators, tests, metrics, alpha, comparisons)


def grids_from_reports(reports) -> dict[str, dict[str, dict[str, float]]]:
    """model -> test set -> metric -> mean, from a list of evaluation reports."""
    grids: dict[str, dict[str, dict[str, float]]] = {}
    for rep in reports:
        per_model = grids.setdefault(rep.model, {})
        if rep.test_set in per_model:
            raise ValidationError(f"two reports for model {rep.model!r} on test set {rep.test_set!r}")
        per_model[rep.test_set] = {k: v.mean for k, v in rep.metrics.items()}
    return grids
