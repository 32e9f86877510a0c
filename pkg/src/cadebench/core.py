"""Domain types, image/mask I/O, normalization and manifest handling.

Images are ``float64`` arrays of shape ``(H, W, 3)`` with intensities in
``[0, 1]``. Binary masks are ``bool`` arrays of shape ``(H, W)``; soft masks
are ``float64`` arrays of shape ``(H, W)`` in ``[0, 1]``.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import cv2
import numpy as np
from PIL import Image

from .errors import (
    DimensionMismatchError,
    DuplicateIdError,
    ManifestError,
    UnknownTierError,
    ValidationError,
)

MANIFEST_VERSION = 1
# Lossless but fast PNG settings; image encoding dominates bulk corruption runs.
PNG_PARAMS = [cv2.IMWRITE_PNG_COMPRESSION, 1,
              cv2.IMWRITE_PNG_STRATEGY, cv2.IMWRITE_PNG_STRATEGY_HUFFMAN_ONLY,
              cv2.IMWRITE_PNG_FILTER, cv2.IMWRITE_PNG_FILTER_SUB]


# ---------------------------------------------------------------------------
# Arrays
# ---------------------------------------------------------------------------

def as_rgb(image) -> np.ndarray:
    """Validate an RGB image and return it as a float64 ``(H, W, 3)`` array."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValidationError(f"expected a non-empty (H, W, 3) image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValidationError("image intensities must lie in [0, 1]")
    return arr


def as_binary_mask(mask) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValidationError(f"expected a 2-D mask, got shape {arr.shape}")
    if arr.dtype != bool:
        if not np.all((arr == 0) | (arr == 1)):
            raise ValidationError("binary mask contains values other than 0/1")
        arr = arr.astype(bool)
    return arr


def as_soft_mask(mask) -> np.ndarray:
    arr = np.asarray(mask, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"expected a 2-D mask, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min(initial=0.0) < 0.0 or arr.max(initial=0.0) > 1.0:
        raise ValidationError("soft mask values must lie in [0, 1]")
    return arr


def check_same_shape(*arrays) -> None:
    shapes = {np.shape(a)[:2] for a in arrays}
    if len(shapes) > 1:
        raise DimensionMismatchError(f"spatial dimensions differ: {sorted(shapes)}")


# ---------------------------------------------------------------------------
# Normalization and resizing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormalizationStats:
    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValidationError("normalization stats need exactly 3 channels")
        if any(s <= 0 for s in self.std):
            raise ValidationError(f"std components must be > 0, got {self.std}")
        object.__setattr__(self, "mean", tuple(float(m) for m in self.mean))
        object.__setattr__(self, "std", tuple(float(s) for s in self.std))


# Channel statistics of the Barrett's WLE development data.
BARRETT_STATS = NormalizationStats(mean=(0.64, 0.361, 0.313), std=(0.189, 0.156, 0.141))
IMAGENET_STATS = NormalizationStats(mean=(0.485, 0.456, 0.406), std=(0.229, 0.224, 0.225))


def normalize(image, stats: NormalizationStats = BARRETT_STATS) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    return (img - np.asarray(stats.mean)) / np.asarray(stats.std)


def denormalize(image, stats: NormalizationStats = BARRETT_STATS) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    return img * np.asarray(stats.std) + np.asarray(stats.mean)


def resize_bicubic(image: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bicubic resize of an image or soft mask; output clipped to [0, 1]."""
    if image.shape[1] == width and image.shape[0] == height:
        return image.copy()
    out = cv2.resize(np.ascontiguousarray(image, dtype=np.float64), (width, height),
                     interpolation=cv2.INTER_CUBIC)
    return np.clip(out, 0.0, 1.0)


def resize_nearest(mask: np.ndarray, width: int, height: int) -> np.ndarray:
    if mask.shape[1] == width and mask.shape[0] == height:
        return mask.copy()
    out = cv2.resize(mask.astype(np.uint8), (width, height), interpolation=cv2.INTER_NEAREST)
    return out.astype(bool)


def resize_to_model_input(image, side: int = 256) -> np.ndarray:
    """Resize to ``side x side`` with bicubic interpolation."""
    img = np.asarray(image, dtype=np.float64)
    if img.size == 0:
        raise ValidationError("cannot resize an empty image")
    if side <= 0:
        raise ValidationError("side must be positive")
    return resize_bicubic(img, side, side)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def load_image(path, crop: Sequence[int] | None = None) -> np.ndarray:
    """Decode an 8-bit image into ``[0, 1]``; ``crop`` is ``(x, y, w, h)``."""
    arr = _read_rgb(path).astype(np.float64) / 255.0
    if crop is not None:
        x, y, w, h = crop
        if x < 0 or y < 0 or w <= 0 or h <= 0 or x + w > arr.shape[1] or y + h > arr.shape[0]:
            raise ValidationError(f"crop {tuple(crop)} outside image of size {arr.shape[1]}x{arr.shape[0]}")
        arr = arr[y:y + h, x:x + w]
    return arr


def _read_rgb(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise OSError(f"cannot decode image: {path}")
    return bgr[..., ::-1]


def save_image(path, image: np.ndarray) -> None:
    """Write an RGB image as 8-bit PNG."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError(f"expected an (H, W, 3) image, got shape {image.shape}")
    bgr = np.ascontiguousarray(to_uint8(image)[..., ::-1])
    if not cv2.imwrite(str(path), bgr, PNG_PARAMS):
        raise OSError(f"cannot write image: {path}")


def load_binary_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    bad = (arr != 0) & (arr != 255)
    if bad.any():
        raise ValidationError(f"{path}: binary mask holds {int(bad.sum())} pixels that are neither 0 nor 255")
    return arr == 255


def save_binary_mask(path, mask: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(as_binary_mask(mask), 255, 0).astype(np.uint8), mode="L").save(path, format="PNG")


def load_soft_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def save_soft_mask(path, mask: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(as_soft_mask(mask)), mode="L").save(path, format="PNG")


def file_sha256(path) -> str:
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

class Tier(str, enum.Enum):
    IMAGE = "Image"
    HQ_FRAME = "HQFrame"
    MQ_FRAME = "MQFrame"
    LQ_FRAME = "LQFrame"


class Split(str, enum.Enum):
    TRAIN = "Train"
    VALIDATION = "Validation"
    TEST = "Test"


@dataclass(frozen=True)
class DelineationRef:
    """File references of one expert's delineation (HL optional for single-mask datasets)."""

    expert_id: str
    ll_path: str
    hl_path: str | None = None

    def to_json(self) -> dict:
        out = {"expert_id": self.expert_id, "ll_path": self.ll_path}
        if self.hl_path is not None:
            out["hl_path"] = self.hl_path
        return out


@dataclass(frozen=True)
class SampleRecord:
    id: str
    patient_id: str
    label: int
    tier: Tier
    image_path: str
    crop: tuple[int, int, int, int] | None = None
    delineations: tuple[DelineationRef, ...] = ()
    gt: Mapping[str, str] = field(default_factory=dict)
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in (0, 1) or isinstance(self.label, bool):
            raise ValidationError(f"record {self.id!r}: label must be 0 or 1, got {self.label!r}")
        if not isinstance(self.tier, Tier):
            object.__setattr__(self, "tier", Tier(self.tier))

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "patient_id": self.patient_id,
            "label": self.label,
            "tier": self.tier.value,
            "image_path": self.image_path,
        }
        if self.crop is not None:
            out["crop"] = list(self.crop)
        if self.delineations:
            out["delineations"] = [d.to_json() for d in self.delineations]
        if self.gt:
            out["gt"] = dict(self.gt)
        if self.meta:
            out["meta"] = dict(self.meta)
        return out


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    split: Split
    records: tuple[SampleRecord, ...]
    # Directory against which relative paths resolve; not part of identity.
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        if not isinstance(self.split, Split):
            object.__setattr__(self, "split", Split(self.split))
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for rec in self.records:
            if rec.id in seen:
                raise DuplicateIdError(f"duplicate record id {rec.id!r}", field="id")
            seen.add(rec.id)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self) -> dict[str, SampleRecord]:
        return {r.id: r for r in self.records}

    def resolve(self, rel_path: str) -> Path:
        p = Path(rel_path)
        return p if p.is_absolute() else Path(self.root) / p


_RECORD_KEYS = {"id", "patient_id", "label", "tier", "image_path", "crop", "delineations", "gt", "meta"}
_REQUIRED_KEYS = ("id", "patient_id", "label", "tier", "image_path")


def _parse_record(obj, lineno: int) -> SampleRecord:
    if not isinstance(obj, dict):
        raise ManifestError("record must be a JSON object", line=lineno)
    for key in obj:
        if key not in _RECORD_KEYS:
            raise ManifestError("unknown key", line=lineno, field=key)
    for key in _REQUIRED_KEYS:
        if key not in obj:
            raise ManifestError("missing required key", line=lineno, field=key)
    for key in ("id", "patient_id", "image_path"):
        if not isinstance(obj[key], str) or not obj[key]:
            raise ManifestError("expected a non-empty string", line=lineno, field=key)
    label = obj["label"]
    if isinstance(label, bool) or label not in (0, 1):
        raise ManifestError(f"label must be 0 or 1, got {label!r}", line=lineno, field="label")
    try:
        tier = Tier(obj["tier"])
    except ValueError:
        raise UnknownTierError(f"unknown tier {obj['tier']!r}", line=lineno, field="tier") from None

    crop = obj.get("crop")
    if crop is not None:
        if (not isinstance(crop, list) or len(crop) != 4
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in crop)):
            raise ManifestError("crop must be [x, y, w, h] integers", line=lineno, field="crop")
        crop = tuple(crop)

    delineations = []
    for i, d in enumerate(obj.get("delineations") or []):
        where = f"delineations[{i}]"
        if not isinstance(d, dict) or "expert_id" not in d or "ll_path" not in d:
            raise ManifestError("needs expert_id and ll_path", line=lineno, field=where)
        extra = set(d) - {"expert_id", "ll_path", "hl_path"}
        if extra:
            raise ManifestError(f"unknown keys {sorted(extra)}", line=lineno, field=where)
        delineations.append(DelineationRef(str(d["expert_id"]), d["ll_path"], d.get("hl_path")))

    gt = obj.get("gt") or {}
    if not isinstance(gt, dict) or not all(isinstance(v, str) for v in gt.values()):
        raise ManifestError("gt must map strategy names to paths", line=lineno, field="gt")
    meta = obj.get("meta") or {}
    if not isinstance(meta, dict):
        raise ManifestError("meta must be an object", line=lineno, field="meta")

    return SampleRecord(
        id=obj["id"], patient_id=obj["patient_id"], label=label, tier=tier,
        image_path=obj["image_path"], crop=crop, delineations=tuple(delineations),
        gt=dict(gt), meta=dict(meta),
    )


def parse_manifest(lines: Iterable[str], root=Path(".")) -> DatasetManifest:
    header = None
    records = []
    ids: dict[str, int] = {}
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=lineno) from None
        if header is None:
            if not isinstance(obj, dict):
                raise ManifestError("header must be a JSON object", line=lineno)
            for key in ("name", "split", "version"):
                if key not in obj:
                    raise ManifestError("missing header key", line=lineno, field=key)
            if obj["version"] != MANIFEST_VERSION:
                raise ManifestError(f"unsupported version {obj['version']!r}", line=lineno, field="version")
            try:
                Split(obj["split"])
            except ValueError:
                raise ManifestError(f"unknown split {obj['split']!r}", line=lineno, field="split") from None
            header = obj
            continue
        rec = _parse_record(obj, lineno)
        if rec.id in ids:
            raise DuplicateIdError(f"duplicate record id {rec.id!r} (first seen on line {ids[rec.id]})",
                                   line=lineno, field="id")
        ids[rec.id] = lineno
        records.append(rec)
    if header is None:
        raise ManifestError("empty manifest: header line missing", line=1)
    return DatasetManifest(name=str(header["name"]), split=Split(header["split"]),
                           records=tuple(records), root=Path(root))


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        return parse_manifest(fh, root=path.parent)


def dump_manifest(manifest: DatasetManifest) -> str:
    lines = [json.dumps({"name": manifest.name, "split": manifest.split.value, "version": MANIFEST_VERSION})]
    lines.extend(json.dumps(r.to_json(), sort_keys=False) for r in manifest.records)
    return "\n".join(lines) + "\n"


def save_manifest(path, manifest: DatasetManifest) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_manifest(manifest), encoding="utf-8")


def rebase_path(path: str, old_root, new_root) -> str:
    """Re-express a manifest path relative to ``new_root``."""
    p = Path(path)
    if not p.is_absolute():
        p = Path(old_root) / p
    return Path(os.path.relpath(os.path.abspath(p), os.path.abspath(new_root))).as_posix()


def rebase_record(rec: SampleRecord, old_root, new_root, **changes) -> SampleRecord:
    """Copy of ``rec`` whose file references resolve from ``new_root``; ``changes`` override fields."""
    def rb(p):
        return rebase_path(p, old_root, new_root)

    fields = {
        "image_path": rb(rec.image_path),
        "delineations": tuple(DelineationRef(d.expert_id, rb(d.ll_path),
                                             None if d.hl_path is None else rb(d.hl_path))
                              for d in rec.delineations),
        "gt": {k: rb(v) for k, v in rec.gt.items()},
    }
    fields.update(changes)
    return replace(rec, **fields)


def worker_count(requested: int | None = None) -> int:
    """Thread count, capped by ``CADE_BENCH_THREADS`` when set."""
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("CADE_BENCH_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValidationError(f"CADE_BENCH_THREADS must be an integer, got {cap!r}") from None
    return max(1, n)


# ---------------------------------------------------------------------------
# Patient split validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitViolation:
    patient_id: str
    manifests: tuple[str, ...]


def validate_patient_split(train: DatasetManifest, val: DatasetManifest,
                           tests: Sequence[DatasetManifest] = ()) -> list[SplitViolation]:
    """List patients shared between train, validation and the test sets.

    Overlap between two test manifests is allowed; only the three roles
    (train / validation / any test) must be patient-disjoint.
    """
    roles = [("train", [train]), ("val", [val]), ("test", list(tests))]
    seen: dict[str, dict[str, list[str]]] = {}
    for role, manifests in roles:
        for m in manifests:
            for pid in sorted({r.patient_id for r in m.records}):
                seen.setdefault(pid, {}).setdefault(role, []).append(m.name)
    violations = []
    for pid in sorted(seen):
        by_role = seen[pid]
        if len(by_role) > 1:
            names = tuple(name for role, _ in roles for name in by_role.get(role, []))
            violations.append(SplitViolation(pid, names))
    return violations
