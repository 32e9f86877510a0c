"""Deterministic SVG bar plots and mean±std result tables."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .errors import ValidationError
from .evaluation import EvalReport


@dataclass(frozen=True)
class Bar:
    label: str
    mean: float
    std: float = 0.0


@dataclass(frozen=True)
class PlotSpec:
    title: str
    bars: tuple[Bar, ...]
    reference: tuple[float, float] | None = None
    y_range: tuple[float, float] | None = None

    def __post_init__(self):
        bars = tuple(b if isinstance(b, Bar) else Bar(*b) for b in self.bars)
        object.__setattr__(self, "bars", bars)
        if not bars:
            raise ValidationError("a plot needs at least one bar")
        labels = [b.label for b in bars]
        if len(set(labels)) != len(labels):
            raise ValidationError("bar labels must be unique")
        values = [(b.mean, b.std) for b in bars]
        if self.reference is not None:
            values.append(tuple(self.reference))
        for mean, std in values:
            if not (math.isfinite(mean) and math.isfinite(std)):
                raise ValidationError("plot values must be finite")
            if std < 0:
                raise ValidationError("standard deviations must be >= 0")
        if self.y_range is not None and not self.y_range[0] < self.y_range[1]:
            raise ValidationError("y_range must be increasing")

    def axis_range(self) -> tuple[float, float]:
        if self.y_range is not None:
            return self.y_range
        tops = [b.mean + b.std for b in self.bars]
        if self.reference is not None:
            tops.append(self.reference[0] + self.reference[1])
        return 0.0, max(1.0, math.ceil(max(tops) * 10) / 10)


# layout, in SVG user units
_BAR_W, _GAP, _LEFT, _RIGHT, _TOP, _BOTTOM, _PLOT_H = 48, 24, 64, 24, 40, 72, 280


def _f(x: float) -> str:
    s = f"{x:.2f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


def render_svg(spec: PlotSpec) -> str:
    """SVG markup: one ``rect.bar`` per bar, one ``path.errorbar`` per bar and,
    with a reference, a ``line.ref-line`` (dashed) over a ``path.ref-band``."""
    lo, hi = spec.axis_range()
    n = len(spec.bars)
    width = _LEFT + n * (_BAR_W + _GAP) + _GAP + _RIGHT
    height = _TOP + _PLOT_H + _BOTTOM
    base = _TOP + _PLOT_H
    x_end = width - _RIGHT

    def y(v):
        v = min(max(v, lo), hi)
        return base - (v - lo) / (hi - lo) * _PLOT_H

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<text class="title" x="{_f(width / 2)}" y="24" text-anchor="middle" font-size="14">'
        f'{escape(spec.title)}</text>',
    ]
    ticks = 5
    for i in range(ticks + 1):
        v = lo + (hi - lo) * i / ticks
        out.append(f'<path class="grid" d="M{_LEFT},{_f(y(v))}H{x_end}" stroke="#dddddd" stroke-width="1"/>')
        out.append(f'<text class="tick" x="{_LEFT - 6}" y="{_f(y(v) + 4)}" text-anchor="end">{v:.2f}</text>')
    if spec.reference is not None:
        m, s = spec.reference
        out.append(f'<path class="ref-band" d="M{_LEFT},{_f(y(m + s))}H{x_end}V{_f(y(m - s))}H{_LEFT}Z" '
                   f'fill="#1f77b4" fill-opacity="0.15" stroke="none"/>')
    for i, bar in enumerate(spec.bars):
        x0 = _LEFT + _GAP + i * (_BAR_W + _GAP)
        top = y(bar.mean)
        out.append(f'<rect class="bar" x="{x0}" y="{_f(top)}" width="{_BAR_W}" height="{_f(base - top)}" '
                   f'fill="#7f7f7f"/>')
        cx = x0 + _BAR_W / 2
        y1, y2 = y(bar.mean - bar.std), y(bar.mean + bar.std)
        out.append(f'<path class="errorbar" d="M{_f(cx)},{_f(y1)}V{_f(y2)}M{_f(cx - 6)},{_f(y1)}H{_f(cx + 6)}'
                   f'M{_f(cx - 6)},{_f(y2)}H{_f(cx + 6)}" stroke="#000000" stroke-width="1.5" fill="none"/>')
        out.append(f'<text class="label" x="{_f(cx)}" y="{base + 16}" text-anchor="end" '
                   f'transform="rotate(-35 {_f(cx)} {base + 16})">{escape(bar.label)}</text>')
    if spec.reference is not None:
        ry = _f(y(spec.reference[0]))
        out.append(f'<line class="ref-line" x1="{_LEFT}" y1="{ry}" x2="{x_end}" y2="{ry}" '
                   f'stroke="#1f77b4" stroke-width="1.5" stroke-dasharray="6,4"/>')
    out.append(f'<path class="axis" d="M{_LEFT},{_TOP}V{base}H{x_end}" stroke="#000000" fill="none"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_barplot(spec: PlotSpec, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_svg(spec), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def format_cell(mean: float, std: float) -> str:
    """``0.974±.004``: three decimals, leading zero of the deviation dropped."""
    s = f"{std:.3f}"
    if s.startswith("0."):
        s = s[1:]
    return f"{mean:.3f}±{s}"


@dataclass
class Table:
    columns: list[str]              # "test_set/metric"
    rows: list[str]                 # model names
    cells: dict[tuple[str, str], str]
    best: set[tuple[str, str]]
    csv: str
    text: str


def _grid(reports: Sequence[EvalReport]):
    by_model: dict[str, dict[str, EvalReport]] = {}
    for rep in reports:
        slot = by_model.setdefault(rep.model, {})
        if rep.test_set in slot:
            raise ValidationError(f"duplicate report for model {rep.model!r} on {rep.test_set!r}")
        slot[rep.test_set] = rep
    shapes = {m: {(t, k) for t, r in g.items() for k in r.metrics} for m, g in by_model.items()}
    ref_model = next(iter(shapes))
    for model, cells in shapes.items():
        if cells != shapes[ref_model]:
            raise ValidationError(f"metric grid of {model!r} differs from that of {ref_model!r}")
    columns = sorted(shapes[ref_model])
    return by_model, columns


def render_tables(reports: Sequence[EvalReport]) -> Table:
    """Models as rows, (test set, metric) as columns.

    Text cells read ``mean±std`` at three decimals. The best cell of each
    column (highest mean, compared at the displayed precision) is marked
    with ``*``; tied cells are all marked. The CSV keeps full precision.
    """
    if not reports:
        raise ValidationError("no reports to tabulate")
    by_model, columns = _grid(reports)
    rows = list(by_model)
    cells, best = {}, set()
    for t, k in columns:
        shown = {m: float(f"{by_model[m][t].metrics[k].mean:.3f}") for m in rows}
        top = max(shown.values())
        for m in rows:
            s = by_model[m][t].metrics[k]
            cells[(m, f"{t}/{k}")] = format_cell(s.mean, s.std)
            if shown[m] == top:
                best.add((m, f"{t}/{k}"))
    names = [f"{t}/{k}" for t, k in columns]

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "test_set", "metric", "mean", "std", "n_runs", "best"])
    for m in rows:
        for t, k in columns:
            s = by_model[m][t].metrics[k]
            w.writerow([m, t, k, repr(s.mean), repr(s.std), by_model[m][t].n_runs,
                        int((m, f"{t}/{k}") in best)])

    shown_cells = {key: v + ("*" if key in best else "") for key, v in cells.items()}
    header = ["model", *names]
    body = [[m, *(shown_cells[(m, c)] for c in names)] for m in rows]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(v.ljust(widths[i]) for i, v in enumerate(r)).rstrip() for r in [header, *body]]
    return Table(names, rows, cells, best, buf.getvalue(), "\n".join(lines) + "\n")
