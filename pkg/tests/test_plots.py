import csv
import io
import xml.etree.ElementTree as ET

import pytest

from cadebench.errors import ValidationError
from cadebench.evaluation import EvalReport, MetricSummary
from cadebench.plots import Bar, PlotSpec, format_cell, render_barplot, render_svg, render_tables

NS = "{http://www.w3.org/2000/svg}"


def classes(svg):
    root = ET.fromstring(svg)
    out = {}
    for el in root.iter():
        c = el.get("class")
        if c:
            out.setdefault(c, []).append(el)
    return out


def test_two_bars_with_reference():
    svg = render_svg(PlotSpec("AUROC", (Bar("a", 0.9, 0.02), Bar("b", 0.8, 0.05)), reference=(0.95, 0.01)))
    c = classes(svg)
    assert len(c["bar"]) == 2 and len(c["errorbar"]) == 2
    assert len(c["ref-line"]) == 1 and c["ref-line"][0].get("stroke-dasharray")
    assert c["ref-line"][0].tag == f"{NS}line" and len(c["ref-band"]) == 1


def test_zero_std_error_bar_still_drawn():
    c = classes(render_svg(PlotSpec("t", (Bar("a", 0.5, 0.0),))))
    assert len(c["errorbar"]) == 1 and "ref-line" not in c


def test_bar_heights_scale_with_means():
    c = classes(render_svg(PlotSpec("t", (Bar("lo", 0.25), Bar("hi", 0.75)), y_range=(0, 1))))
    h = [float(r.get("height")) for r in c["bar"]]
    assert h[1] == pytest.approx(3 * h[0])


def test_plot_is_byte_identical(tmp_path):
    spec = PlotSpec("x & <y>", (Bar("m1", 0.7, 0.1), Bar("m2", 0.6, 0.0)), reference=(0.8, 0.05))
    a = render_barplot(spec, tmp_path / "a.svg").read_bytes()
    b = render_barplot(spec, tmp_path / "sub" / "b.svg").read_bytes()
    assert a == b
    ET.fromstring(a)  # escaping keeps it well-formed


@pytest.mark.parametrize("kwargs", [
    {"bars": ()},
    {"bars": (Bar("a", 0.5), Bar("a", 0.6))},
    {"bars": (Bar("a", 0.5, -0.1),)},
    {"bars": (Bar("a", float("nan")),)},
    {"bars": (Bar("a", 0.5),), "y_range": (1, 0)},
])
def test_invalid_specs(kwargs):
    with pytest.raises(ValidationError):
        PlotSpec("t", **kwargs)


def test_format_cell():
    assert format_cell(0.974, 0.004) == "0.974±.004"
    assert format_cell(0.5, 0.0) == "0.500±.000"
    assert format_cell(0.9996, 1.2) == "1.000±1.200"


def _rep(model, ts, **metrics):
    return EvalReport({k: MetricSummary.of(v) for k, v in metrics.items()}, 2, model, ts)


def test_table_cells_best_and_csv():
    reps = [_rep("a", "T1", AUROC=[0.97, 0.978]), _rep("b", "T1", AUROC=[0.9, 0.92]),
            _rep("a", "T2", AUROC=[0.8, 0.8]), _rep("b", "T2", AUROC=[0.85, 0.83])]
    t = render_tables(reps)
    assert t.columns == ["T1/AUROC", "T2/AUROC"] and t.rows == ["a", "b"]
    assert t.cells[("a", "T1/AUROC")] == "0.974±.006"
    assert t.best == {("a", "T1/AUROC"), ("b", "T2/AUROC")}
    assert "0.974±.006*" in t.text
    rows = list(csv.DictReader(io.StringIO(t.csv)))
    r = next(x for x in rows if x["model"] == "a" and x["test_set"] == "T1")
    assert float(r["mean"]) == 0.974 and r["best"] == "1" and r["n_runs"] == "2"


def test_ties_at_displayed_precision_are_all_marked():
    t = render_tables([_rep("a", "T", M=[0.9001]), _rep("b", "T", M=[0.9004]), _rep("c", "T", M=[0.8])])
    assert t.best == {("a", "T/M"), ("b", "T/M")}


def test_single_model_is_marked_best():
    t = render_tables([_rep("only", "T", M=[0.7])])
    assert t.best == {("only", "T/M")}


def test_table_grid_mismatch():
    with pytest.raises(ValidationError):
        render_tables([_rep("a", "T", M=[0.1]), _rep("b", "T", N=[0.1])])
    with pytest.raises(ValidationError):
        render_tables([_rep("a", "T", M=[0.1]), _rep("a", "T", M=[0.2])])
    with pytest.raises(ValidationError):
        render_tables([])
