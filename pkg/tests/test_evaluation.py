import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cadebench.core import DatasetManifest, SampleRecord, Split, Tier, save_binary_mask, save_image, save_manifest, \
    save_soft_mask
from cadebench.errors import ValidationError
from cadebench.evaluation import (
    CallbackError,
    EvalConfig,
    EvalReport,
    FusionStrategy,
    MetricSummary,
    PredictionRecord,
    augmented_validation,
    auprc,
    auroc,
    evaluate,
    fuse,
    fuse_arrays,
    load_predictions,
    mean_dice,
    run_metrics,
)

from conftest import random_image


# -- brute-force oracles ---------------------------------------------------------

def auroc_pairs(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    credit = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return credit / (len(pos) * len(neg))


def auprc_sweep(scores, labels):
    """Average precision by sweeping every distinct threshold from high to low."""
    n_pos = sum(labels)
    total, prev_recall = 0.0, 0.0
    for thr in sorted(set(scores), reverse=True):
        picked = [y for s, y in zip(scores, labels) if s >= thr]
        recall = sum(picked) / n_pos
        total += (recall - prev_recall) * (sum(picked) / len(picked))
        prev_recall = recall
    return total


def random_instance(rng, n):
    labels = list(rng.integers(0, 2, size=n))
    labels[0], labels[1] = 0, 1
    # a coarse grid injects ties
    scores = list(np.round(rng.uniform(size=n), int(rng.integers(1, 4))))
    return scores, labels


# -- AUROC / AUPRC ---------------------------------------------------------------

def test_auroc_examples():
    assert auroc([.9, .8, .3, .2], [1, 1, 0, 0]) == 1.0
    assert auroc([.9, .3, .4, .2], [1, 1, 0, 0]) == 0.75
    assert auroc([.5] * 6, [0, 1] * 3) == 0.5


def test_auroc_errors():
    with pytest.raises(ValidationError):
        auroc([.1, .2], [1, 1])
    with pytest.raises(ValidationError):
        auroc([.1, .2], [1, 2])
    with pytest.raises(ValidationError):
        auroc([.1], [1, 0])


def test_auprc_examples():
    assert auprc([.9, .8, .7], [1, 0, 1]) == pytest.approx(5 / 6, abs=1e-15)
    assert auprc([.9, .8, .1, .05], [1, 1, 0, 0]) == 1.0
    assert auprc([.3] * 8, [1, 0, 0, 0, 1, 0, 0, 0]) == pytest.approx(0.25)
    with pytest.raises(ValidationError):
        auprc([.1, .2], [0, 0])


@pytest.mark.parametrize("seed", range(200))
def test_metrics_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    scores, labels = random_instance(rng, int(rng.integers(2, 201)))
    assert abs(auroc(scores, labels) - auroc_pairs(scores, labels)) < 1e-12
    assert abs(auprc(scores, labels) - auprc_sweep(scores, labels)) < 1e-12


@given(st.integers(0, 2 ** 32))
def test_auroc_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    scores, labels = random_instance(rng, 40)
    s = np.array(scores)
    assert auroc(np.exp(3 * s) - 7, labels) == pytest.approx(auroc(s, labels), abs=1e-12)


# -- fusion ----------------------------------------------------------------------

def test_fuse_examples():
    assert fuse(0.8, 0.4, "average") == pytest.approx(0.6)
    assert fuse(0.8, 0.4, "or") == 0.8 and fuse(0.8, 0.4, "and") == 0.4
    assert fuse(0.8, 0.4, FusionStrategy.CLS_ONLY) == 0.8 and fuse(0.8, 0.4, "seg") == 0.4
    assert {fuse(0.3, 0.3, s) for s in FusionStrategy} == {0.3}


@given(st.floats(0, 1), st.floats(0, 1))
def test_fuse_ordering(c, s):
    a, m, o = (fuse(c, s, k) for k in ("and", "average", "or"))
    assert a <= m + 1e-15 and m <= o + 1e-15


def test_fused_or_auroc_matches_oracle(rng):
    cls = rng.uniform(size=60)
    seg = rng.uniform(size=60)
    y = (rng.uniform(size=60) > 0.5).astype(int)
    fused = fuse_arrays(cls, seg, "or")
    assert auroc(fused, y) == pytest.approx(auroc_pairs(list(np.maximum(cls, seg)), list(y)), abs=1e-12)


# -- Dice ------------------------------------------------------------------------

def _pred(sid, seg):
    return PredictionRecord(sid, 0.5, seg_map=seg)


def test_mean_dice_examples():
    gt = np.zeros((1, 10), bool)
    gt[0, :4] = True
    assert mean_dice({"a": _pred("a", gt.astype(float))}, {"a": gt}) == 1.0
    assert mean_dice({"a": _pred("a", np.full((1, 10), 0.49))}, {"a": gt}) == 0.0
    assert mean_dice({"a": _pred("a", np.full((1, 10), 0.5))}, {"a": gt}) == pytest.approx(8 / 14)
    # Dice 0.6 and 0.8
    p1 = np.zeros((1, 10))
    p1[0, 1:7] = 1
    g2 = np.zeros((1, 10), bool)
    g2[0, :5] = True
    p2 = np.zeros((1, 10))
    p2[0, 1:6] = 1
    got = mean_dice({"a": _pred("a", p1), "b": _pred("b", p2), "c": _pred("c", p2)},
                    {"a": gt, "b": g2, "c": None})
    assert got == pytest.approx(0.7)


def test_mean_dice_requires_prediction():
    with pytest.raises(ValidationError):
        mean_dice({"a": PredictionRecord("a", 0.1, 0.2)}, {"a": np.ones((2, 2), bool)})
    with pytest.raises(ValidationError):
        mean_dice({}, {"a": None})


@given(st.permutations(range(5)))
def test_mean_dice_order_free(order):
    rng = np.random.default_rng(1)
    preds = {f"s{i}": _pred(f"s{i}", rng.uniform(size=(4, 4))) for i in range(5)}
    gts = {f"s{i}": rng.uniform(size=(4, 4)) > 0.5 for i in range(5)}
    shuffled = {f"s{i}": gts[f"s{i}"] for i in order}
    assert mean_dice(preds, shuffled) == mean_dice(preds, gts)


# -- reports ---------------------------------------------------------------------

def _manifest(labels, name="ts"):
    return DatasetManifest(name, Split.TEST, tuple(
        SampleRecord(f"s{i}", f"p{i}", int(y), Tier.IMAGE, f"s{i}.png") for i, y in enumerate(labels)))


def _run(rng, labels):
    return {f"s{i}": PredictionRecord(f"s{i}", float(rng.uniform()), float(rng.uniform()))
            for i in range(len(labels))}


def test_identical_runs_have_zero_std(rng):
    labels = [0, 1, 0, 1, 1, 0]
    run = _run(rng, labels)
    rep = evaluate(_manifest(labels), [run] * 5)
    assert rep.n_runs == 5 and not rep.single_run
    assert all(m.std == 0.0 for m in rep.metrics.values())
    assert rep.test_set == "ts"


def test_single_run_is_flagged(rng):
    labels = [0, 1, 0, 1]
    rep = evaluate(_manifest(labels), [_run(rng, labels)])
    assert rep.single_run and rep.to_json()["single_run"] is True
    assert all(m.std == 0.0 for m in rep.metrics.values())


def test_sample_std_across_runs(rng):
    labels = [0, 1, 0, 1, 0, 1]
    runs = [_run(rng, labels) for _ in range(3)]
    rep = evaluate(_manifest(labels), runs)
    vals = [auroc([r[f"s{i}"].cls_score for i in range(6)], labels) for r in runs]
    assert rep.metrics["AUROC_cls"].per_run == vals
    assert rep.metrics["AUROC_cls"].std == pytest.approx(np.std(vals, ddof=1))


def test_cls_and_seg_branches_are_distinct():
    labels = [1, 1, 1, 0, 0, 0]
    preds = {f"s{i}": PredictionRecord(f"s{i}", 0.9 if y else 0.1, 0.1 if y else 0.9)
             for i, y in enumerate(labels)}
    m = run_metrics({f"s{i}": y for i, y in enumerate(labels)}, preds)
    assert m["AUROC_cls"] == 1.0 and m["AUROC_seg"] == 0.0
    assert m["AUROC_fused_average"] == 0.5
    assert set(m) >= {"AUPRC_cls", "AUPRC_seg", "AUROC_fused_or", "AUROC_fused_and"}


def test_missing_prediction_and_empty_runs(rng):
    labels = [0, 1, 1]
    run = _run(rng, labels)
    del run["s2"]
    with pytest.raises(ValidationError):
        evaluate(_manifest(labels), [run])
    with pytest.raises(ValidationError):
        evaluate(_manifest(labels), [])


def test_report_json_round_trip(rng):
    labels = [0, 1, 0, 1]
    rep = evaluate(_manifest(labels), [_run(rng, labels), _run(rng, labels)], model="m")
    back = EvalReport.from_json(rep.to_json())
    assert back.to_json() == rep.to_json()
    with pytest.raises(ValidationError):
        EvalReport.from_json({"metrics": {"x": {}}})


def test_metric_summary():
    s = MetricSummary.of([0.5])
    assert (s.mean, s.std) == (0.5, 0.0)


# -- prediction files ------------------------------------------------------------

def _csv(tmp_path, text, name="p.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_predictions_with_maps(tmp_path):
    seg = np.zeros((4, 4))
    seg[1, 1] = 0.8
    save_soft_mask(tmp_path / "a.png", seg)
    preds = load_predictions(_csv(tmp_path, "id,cls_score,seg_max,seg_path\na,0.3,0.8,a.png\nb,0.7,0.2,\n"))
    assert preds["a"].seg_map.shape == (4, 4) and preds["b"].seg_map is None
    assert preds["b"].seg_max == 0.2


@pytest.mark.parametrize("body", [
    "id,cls_score\na,0.1\n",
    "id,cls_score,seg_max\na,1.5,0.1\n",
    "id,cls_score,seg_max\na,abc,0.1\n",
    "id,cls_score,seg_max\na,0.1,0.1\na,0.2,0.2\n",
    "id,cls_score,seg_max,seg_path\na,0.1,0.1,m.png\n",
])
def test_load_predictions_errors(tmp_path, body):
    save_soft_mask(tmp_path / "m.png", np.full((3, 3), 0.9))
    with pytest.raises(ValidationError):
        load_predictions(_csv(tmp_path, body))


def test_missing_prediction_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_predictions(tmp_path / "nope.csv")


# -- GT from manifests and augmented validation ---------------------------------

def _disk_manifest(tmp_path, rng, n=6):
    recs = []
    for i in range(n):
        save_image(tmp_path / f"i{i}.png", random_image(rng, 64, 64))
        gt = {}
        if i % 2:
            m = np.zeros((64, 64), bool)
            m[10:30, 20:40] = True
            save_binary_mask(tmp_path / f"g{i}.png", m)
            gt = {"plausible": f"g{i}.png"}
        recs.append(SampleRecord(f"s{i}", f"p{i}", i % 2, Tier.IMAGE, f"i{i}.png", gt=gt))
    m = DatasetManifest("val", Split.VALIDATION, tuple(recs), root=tmp_path)
    save_manifest(tmp_path / "m.jsonl", m)
    return m


def test_evaluate_reads_gt_from_manifest(tmp_path, rng):
    m = _disk_manifest(tmp_path, rng)
    gt = np.zeros((64, 64))
    gt[10:30, 20:40] = 1
    run = {r.id: PredictionRecord(r.id, float(r.label), seg_map=gt) for r in m.records}
    rep = evaluate(m, [run])
    assert rep.metrics["mDice"].mean == 1.0


def test_augmented_validation_constant_callback(tmp_path, rng):
    m = _disk_manifest(tmp_path, rng)
    labels = {r.id: r.label for r in m.records}

    def constant(sid, img):
        return PredictionRecord(sid, 0.9 if labels[sid] else 0.2, 0.6 if labels[sid] else 0.3)

    res = augmented_validation(m, constant, config=EvalConfig(gt="none"))
    assert len(res.per_set) == 4
    single = run_metrics(labels, {sid: constant(sid, None) for sid in labels})
    assert res.mean == pytest.approx(single)


def test_augmented_validation_mean_and_reproducibility(tmp_path, rng):
    m = _disk_manifest(tmp_path, rng)

    def brightness(sid, img):
        v = float(img.mean())
        return PredictionRecord(sid, v, 1 - v, seg_map=np.full((256, 256), 1 - v))

    a = augmented_validation(m, brightness)
    b = augmented_validation(m, brightness)
    assert a.per_set == b.per_set and "mDice" in a.mean
    for k, v in a.mean.items():
        assert v == pytest.approx(sum(s[k] for s in a.per_set) / 4)


def test_augmented_validation_callback_failure(tmp_path, rng):
    m = _disk_manifest(tmp_path, rng)

    def boom(sid, img):
        raise RuntimeError("adapter down")

    with pytest.raises(CallbackError) as exc:
        augmented_validation(m, boom)
    assert exc.value.sample_id == "s0"
