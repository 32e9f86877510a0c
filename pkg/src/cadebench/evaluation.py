"""Classification, classification-by-segmentation and localization metrics.

Model outputs enter as :class:`PredictionRecord` objects, usually loaded
from a prediction CSV (``id,cls_score,seg_max[,seg_path]``).
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .consensus import GtStrategy, consensus_from_experts, dice, ExpertDelineation
from .core import (
    DatasetManifest,
    SampleRecord,
    as_soft_mask,
    file_sha256,
    load_binary_mask,
    load_image,
    load_soft_mask,
    resize_nearest,
    resize_to_model_input,
)
from .errors import CadeError, ValidationError

SEG_MAX_TOLERANCE = 1.0 / 255.0


class FusionStrategy(str, enum.Enum):
    CLS_ONLY = "cls"
    SEG_ONLY = "seg"
    AVERAGE = "average"
    OR = "or"
    AND = "and"


@dataclass(frozen=True, eq=False)
class PredictionRecord:
    id: str
    cls_score: float
    seg_max: float | None = None
    seg_map: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.cls_score <= 1.0:
            raise ValidationError(f"{self.id}: cls_score {self.cls_score} outside [0, 1]")
        if self.seg_map is not None:
            seg = as_soft_mask(self.seg_map)
            object.__setattr__(self, "seg_map", seg)
            derived = float(seg.max())
            if self.seg_max is None:
                object.__setattr__(self, "seg_max", derived)
            elif abs(self.seg_max - derived) > SEG_MAX_TOLERANCE:
                raise ValidationError(
                    f"{self.id}: seg_max {self.seg_max} disagrees with segmentation map maximum {derived}")
        if self.seg_max is not None and not 0.0 <= self.seg_max <= 1.0:
            raise ValidationError(f"{self.id}: seg_max {self.seg_max} outside [0, 1]")


# ---------------------------------------------------------------------------
# Ranking metrics
# ---------------------------------------------------------------------------

def _scores_labels(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValidationError("scores and labels must be 1-D sequences of equal length")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("labels must be 0 or 1")
    return s, y.astype(bool)


def midranks(values) -> np.ndarray:
    """1-based ranks with ties sharing the average rank."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    ranks = np.empty(len(v), dtype=np.float64)
    i = 0
    while i < len(sv):
        j = i
        while j + 1 < len(sv) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auroc(scores, labels) -> float:
    """Area under the ROC curve; tied positive/negative pairs earn half credit."""
    s, y = _scores_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUROC needs both classes")
    r = midranks(s)
    u = r[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Average precision: sum over descending score groups of recall gain times precision."""
    s, y = _scores_labels(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValidationError("AUPRC needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of every tie group
    ends = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / n_pos
    gains = np.diff(np.r_[0.0, recall])
    return float(np.sum(gains * precision))


def fuse(cls_score: float, seg_max: float, strategy) -> float:
    strategy = FusionStrategy(strategy)
    if strategy is FusionStrategy.CLS_ONLY:
        return cls_score
    if strategy is FusionStrategy.SEG_ONLY:
        return seg_max
    if strategy is FusionStrategy.AVERAGE:
        return (cls_score + seg_max) / 2.0
    if strategy is FusionStrategy.OR:
        return max(cls_score, seg_max)
    return min(cls_score, seg_max)


def fuse_arrays(cls_scores, seg_maxes, strategy) -> np.ndarray:
    c = np.asarray(cls_scores, dtype=np.float64)
    s = np.asarray(seg_maxes, dtype=np.float64)
    strategy = FusionStrategy(strategy)
    return {
        FusionStrategy.CLS_ONLY: lambda: c,
        FusionStrategy.SEG_ONLY: lambda: s,
        FusionStrategy.AVERAGE: lambda: (c + s) / 2.0,
        FusionStrategy.OR: lambda: np.maximum(c, s),
        FusionStrategy.AND: lambda: np.minimum(c, s),
    }[strategy]()


# ---------------------------------------------------------------------------
# Localization
# ---------------------------------------------------------------------------

def binarize(seg_map, threshold=0.5) -> np.ndarray:
    return np.asarray(seg_map) >= threshold


def gt_mask_for(manifest: DatasetManifest, record: SampleRecord, strategy=GtStrategy.PLAUSIBLE_SPOT):
    """The record's GT mask for ``strategy``, or ``None`` when it has no GT.

    ``strategy`` may be any key of the record's ``gt`` mapping (e.g.
    ``"consensus"`` for single-mask external test sets). Without a stored
    file, a consensus is built from two or more LL/HL delineations.
    """
    key = strategy.value if isinstance(strategy, GtStrategy) else str(strategy)
    if key == GtStrategy.AVERAGE.value:
        raise ValidationError("the average GT is not binary and cannot score Dice")
    if key in record.gt:
        return load_binary_mask(manifest.resolve(record.gt[key]))
    usable = [d for d in record.delineations if d.hl_path is not None]
    if len(usable) >= 2 and key in {s.value for s in GtStrategy}:
        experts = [ExpertDelineation(d.expert_id, load_binary_mask(manifest.resolve(d.ll_path)),
                                     load_binary_mask(manifest.resolve(d.hl_path))) for d in usable]
        cs, _ = consensus_from_experts(experts)
        return cs.get(key)
    return None


def mean_dice(predictions: Mapping[str, PredictionRecord], gt_masks: Mapping[str, np.ndarray],
              threshold: float = 0.5) -> float:
    """Mean Dice between thresholded segmentation maps and GT, over GT-bearing samples.

    ``gt_masks`` maps sample ids to masks; ids whose mask is ``None`` are skipped.
    A GT mask whose size differs from the prediction is resized (nearest
    neighbour) onto the prediction grid.
    """
    values = []
    for sid in sorted(gt_masks):
        gt = gt_masks[sid]
        if gt is None:
            continue
        pred = predictions.get(sid)
        if pred is None or pred.seg_map is None:
            raise ValidationError(f"no segmentation prediction for GT-bearing sample {sid!r}")
        if gt.shape != pred.seg_map.shape:
            gt = resize_nearest(gt, pred.seg_map.shape[1], pred.seg_map.shape[0])
        values.append(dice(binarize(pred.seg_map, threshold), gt))
    if not values:
        raise ValidationError("no GT-bearing samples")
    return float(np.mean(values))


def _crop_mask(mask, crop):
    if mask is None or crop is None:
        return mask
    x, y, w, h = crop
    return mask[y:y + h, x:x + w]


def manifest_gt_masks(manifest: DatasetManifest, strategy=GtStrategy.PLAUSIBLE_SPOT) -> dict:
    """GT masks of every record, cropped to the record's active region."""
    return {r.id: _crop_mask(gt_mask_for(manifest, r, strategy), r.crop) for r in manifest.records}


# ---------------------------------------------------------------------------
# Prediction files
# ---------------------------------------------------------------------------

def _unit_float(text, where):
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise ValidationError(f"{where}: not a number: {text!r}") from None
    if not math.isfinite(v) or not 0.0 <= v <= 1.0:
        raise ValidationError(f"{where}: value {v} outside [0, 1]")
    return v


def load_predictions(path) -> dict[str, PredictionRecord]:
    """Read a prediction CSV; ``seg_path`` entries resolve relative to the CSV's folder."""
    path = Path(path)
    out: dict[str, PredictionRecord] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in ("id", "cls_score", "seg_max"):
            if col not in header:
                raise ValidationError(f"{path}: missing column {col!r}")
        for lineno, row in enumerate(reader, start=2):
            where = f"{path}:{lineno}"
            sid = row["id"]
            if not sid:
                raise ValidationError(f"{where}: empty id")
            if sid in out:
                raise ValidationError(f"{where}: duplicate id {sid!r}")
            seg_path = (row.get("seg_path") or "").strip()
            seg_map = None
            if seg_path:
                p = Path(seg_path)
                seg_map = load_soft_mask(p if p.is_absolute() else path.parent / p)
            seg_max = _unit_float(row["seg_max"], where) if (row["seg_max"] or "").strip() else None
            try:
                out[sid] = PredictionRecord(sid, _unit_float(row["cls_score"], where), seg_max, seg_map)
            except ValidationError as exc:
                raise ValidationError(f"{where}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalConfig:
    fusion: tuple[FusionStrategy, ...] = (FusionStrategy.AVERAGE, FusionStrategy.OR, FusionStrategy.AND)
    gt: str = GtStrategy.PLAUSIBLE_SPOT.value
    threshold: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "fusion", tuple(FusionStrategy(f) for f in self.fusion))
        gt = self.gt.value if isinstance(self.gt, GtStrategy) else str(self.gt)
        object.__setattr__(self, "gt", gt)

    def to_json(self):
        return {"fusion": [f.value for f in self.fusion], "gt": self.gt, "threshold": self.threshold}


@dataclass
class MetricSummary:
    mean: float
    std: float
    per_run: list[float]

    @classmethod
    def of(cls, values: Sequence[float]) -> "MetricSummary":
        v = [float(x) for x in values]
        if min(v) == max(v):
            # exact, free of summation rounding
            return cls(v[0], 0.0, v)
        return cls(float(np.mean(v)), float(np.std(v, ddof=1)), v)

    def to_json(self):
        return {"mean": self.mean, "std": self.std, "per_run": list(self.per_run)}


@dataclass
class EvalReport:
    metrics: dict[str, MetricSummary]
    n_runs: int
    model: str = ""
    test_set: str = ""
    config: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def single_run(self) -> bool:
        return self.n_runs == 1

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "test_set": self.test_set,
            "n_runs": self.n_runs,
            "single_run": self.single_run,
            "metrics": {k: v.to_json() for k, v in self.metrics.items()},
            "config": self.config,
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        try:
            metrics = {k: MetricSummary(float(v["mean"]), float(v["std"]), [float(x) for x in v["per_run"]])
                       for k, v in obj["metrics"].items()}
            return cls(metrics=metrics, n_runs=int(obj["n_runs"]), model=obj.get("model", ""),
                       test_set=obj.get("test_set", ""), config=obj.get("config", {}),
                       provenance=obj.get("provenance", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed report: {exc}") from None


def metric_name(measure: str, source: str) -> str:
    return f"{measure}_{source}"


def run_metrics(labels: Mapping[str, int], preds: Mapping[str, PredictionRecord],
                gt_masks: Mapping[str, np.ndarray | None] | None = None,
                config: EvalConfig = EvalConfig()) -> dict[str, float]:
    """All metrics of a single run."""
    ids = list(labels)
    missing = [i for i in ids if i not in preds]
    if missing:
        raise ValidationError(f"missing predictions for {len(missing)} samples, e.g. {missing[:3]}")
    y = np.array([labels[i] for i in ids])
    cls = np.array([preds[i].cls_score for i in ids])
    out = {"AUROC_cls": auroc(cls, y), "AUPRC_cls": auprc(cls, y)}
    if all(preds[i].seg_max is not None for i in ids):
        seg = np.array([preds[i].seg_max for i in ids])
        out["AUROC_seg"] = auroc(seg, y)
        out["AUPRC_seg"] = auprc(seg, y)
        for strategy in config.fusion:
            fused = fuse_arrays(cls, seg, strategy)
            out[metric_name("AUROC", f"fused_{strategy.value}")] = auroc(fused, y)
            out[metric_name("AUPRC", f"fused_{strategy.value}")] = auprc(fused, y)
    if gt_masks and any(m is not None for m in gt_masks.values()):
        out["mDice"] = mean_dice(preds, gt_masks, config.threshold)
    return out


def evaluate(manifest: DatasetManifest, runs: Sequence[Mapping[str, PredictionRecord]],
             config: EvalConfig = EvalConfig(), gt_masks: Mapping[str, np.ndarray | None] | None = None,
             model: str = "", test_set: str | None = None) -> EvalReport:
    """Per-run metrics plus mean and sample standard deviation across runs."""
    if len(runs) < 1:
        raise ValidationError("at least one prediction run is required")
    labels = {r.id: r.label for r in manifest.records}
    if gt_masks is None:
        gt_masks = manifest_gt_masks(manifest, config.gt)
    per_run = [run_metrics(labels, preds, gt_masks, config) for preds in runs]
    names = list(per_run[0])
    for i, m in enumerate(per_run[1:], start=2):
        if list(m) != names:
            raise ValidationError(f"run {i} yields metrics {sorted(m)} instead of {sorted(names)}")
    metrics = {n: MetricSummary.of([m[n] for m in per_run]) for n in names}
    return EvalReport(metrics=metrics, n_runs=len(runs), model=model,
                      test_set=manifest.name if test_set is None else test_set,
                      config=config.to_json())


def provenance(manifest_path, prediction_paths) -> dict:
    return {
        "manifest": {"path": str(manifest_path), "sha256": file_sha256(manifest_path)},
        "predictions": [{"path": str(p), "sha256": file_sha256(p)} for p in prediction_paths],
    }


# ---------------------------------------------------------------------------
# Augmented validation
# ---------------------------------------------------------------------------

class CallbackError(CadeError):
    """The external model adapter failed on a sample."""

    def __init__(self, sample_id, cause):
        self.sample_id = sample_id
        super().__init__(f"model callback failed on sample {sample_id!r}: {cause}")


@dataclass
class AugmentedValidationResult:
    mean: dict[str, float]
    per_set: list[dict[str, float]]


def augmented_validation(manifest: DatasetManifest,
                         model_callback: Callable[[str, np.ndarray], PredictionRecord],
                         preset="downstream-val-ndsa", seeds: Sequence[int] = (0, 1, 2, 3),
                         config: EvalConfig = EvalConfig(), side: int = 256,
                         val_cap: int | None = None) -> AugmentedValidationResult:
    """Score a model on several independently augmented copies of a validation set.

    ``model_callback(sample_id, image)`` returns a :class:`PredictionRecord`.
    GT masks are moved with the geometric transforms before scoring Dice.
    Returns the per-metric mean over the copies and the per-copy metrics.
    """
    from .augment import apply

    if not seeds:
        raise ValidationError("at least one seed is required")
    labels = {r.id: r.label for r in manifest.records}
    base = []
    for rec in manifest.records:
        img = resize_to_model_input(load_image(manifest.resolve(rec.image_path), rec.crop), side)
        gt = _crop_mask(gt_mask_for(manifest, rec, config.gt), rec.crop)
        if gt is not None:
            gt = resize_nearest(gt, side, side)
        base.append((rec.id, img, gt))

    per_set = []
    for seed in seeds:
        preds, masks = {}, {}
        for sid, img, gt in base:
            aug_img, aug_gt = apply(preset, img, gt, sample_id=sid, epoch_seed=seed, val_cap=val_cap)
            try:
                pred = model_callback(sid, aug_img)
            except Exception as exc:
                raise CallbackError(sid, exc) from exc
            if not isinstance(pred, PredictionRecord):
                raise CallbackError(sid, f"expected a PredictionRecord, got {type(pred).__name__}")
            preds[sid] = pred
            masks[sid] = aug_gt
        per_set.append(run_metrics(labels, preds, masks, config))
    names = per_set[0].keys()
    mean = {n: float(np.mean([m[n] for m in per_set])) for n in names}
    return AugmentedValidationResult(mean, per_set)
