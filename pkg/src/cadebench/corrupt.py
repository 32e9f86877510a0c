"""Corrupted robustness test sets: random compositions of severity-graded corruptions."""

from __future__ import annotations

import enum
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import cv2
import numpy as np
from PIL import Image

from .augment import ops
from .augment.pipeline import sample_rng
from .augment.specs import (
    BRIGHTNESS_DOWN,
    BRIGHTNESS_UP,
    CONTRAST_DOWN,
    CONTRAST_UP,
    FIVE_SIZES_LARGE,
    HUE_GREEN_SHIFT,
    HUE_RED_SHIFT,
    SATURATION_DOWN,
    SATURATION_UP,
    SHARP_KERNEL,
    SHARP_VISIBILITY,
    RangeBucket,
    buckets,
    fixed,
)
from .core import (
    DatasetManifest,
    SampleRecord,
    as_rgb,
    load_image,
    rebase_record,
    worker_count,
    resize_bicubic,
    save_image,
    to_uint8,
)
from .errors import CodecError, ValidationError

N_SEVERITIES = 5


class Category(str, enum.Enum):
    USER = "user"
    ACQUISITION = "acquisition"
    COMPRESSION = "compression"


class CorruptionKind(str, enum.Enum):
    MOTION_BLUR = "motion_blur"
    LOCAL_FOCUS_BLUR = "local_focus_blur"
    OVEREXPOSURE = "overexposure"
    CONTRAST = "contrast"
    SATURATION = "saturation"
    HUE = "hue"
    BRIGHTNESS = "brightness"
    SHARPNESS = "sharpness"
    JPEG = "jpeg"
    JPEG2000 = "jpeg2000"
    RESOLUTION_REDUCTION = "resolution_reduction"

    @property
    def category(self) -> Category:
        return _CATEGORY[self]

    @property
    def directions(self) -> tuple[str, ...]:
        return _DIRECTIONS.get(self, ())


_CATEGORY = {
    CorruptionKind.MOTION_BLUR: Category.USER,
    CorruptionKind.LOCAL_FOCUS_BLUR: Category.USER,
    CorruptionKind.OVEREXPOSURE: Category.USER,
    CorruptionKind.CONTRAST: Category.ACQUISITION,
    CorruptionKind.SATURATION: Category.ACQUISITION,
    CorruptionKind.HUE: Category.ACQUISITION,
    CorruptionKind.BRIGHTNESS: Category.ACQUISITION,
    CorruptionKind.SHARPNESS: Category.ACQUISITION,
    CorruptionKind.JPEG: Category.COMPRESSION,
    CorruptionKind.JPEG2000: Category.COMPRESSION,
    CorruptionKind.RESOLUTION_REDUCTION: Category.COMPRESSION,
}

_UP_DOWN = ("increase", "decrease")
_DIRECTIONS = {
    CorruptionKind.CONTRAST: _UP_DOWN,
    CorruptionKind.SATURATION: _UP_DOWN,
    CorruptionKind.BRIGHTNESS: _UP_DOWN,
    CorruptionKind.SHARPNESS: _UP_DOWN,
    CorruptionKind.HUE: ("red", "green"),
}

# Severity tables. The acquisition kinds reuse the augmentation buckets, except
# that sharpening keeps lightness at 1: below 1 the kernel also darkens, and
# the two effects cancel between the upper severities.
_TABLES: dict[tuple[CorruptionKind, str | None], dict[str, tuple[RangeBucket, ...]]] = {
    (CorruptionKind.MOTION_BLUR, None): {"kernel": FIVE_SIZES_LARGE},
    (CorruptionKind.LOCAL_FOCUS_BLUR, None): {
        "area": fixed(0.2, 0.3, 0.4, 0.5, 0.6),
        "radius": fixed(3, 5, 7, 9, 11),
    },
    (CorruptionKind.OVEREXPOSURE, None): {
        "gamma": buckets((1.2, 1.4), (1.5, 1.7), (1.9, 2.1), (2.4, 2.6), (3.0, 3.4)),
        "knee": fixed(0.98, 0.95, 0.92, 0.88, 0.85),
    },
    (CorruptionKind.CONTRAST, "increase"): {"factor": CONTRAST_UP},
    (CorruptionKind.CONTRAST, "decrease"): {"factor": CONTRAST_DOWN},
    (CorruptionKind.BRIGHTNESS, "increase"): {"factor": BRIGHTNESS_UP},
    (CorruptionKind.BRIGHTNESS, "decrease"): {"factor": BRIGHTNESS_DOWN},
    (CorruptionKind.SATURATION, "increase"): {"factor": SATURATION_UP},
    (CorruptionKind.SATURATION, "decrease"): {"factor": SATURATION_DOWN},
    (CorruptionKind.HUE, "red"): {"shift": HUE_RED_SHIFT},
    (CorruptionKind.HUE, "green"): {"shift": HUE_GREEN_SHIFT},
    (CorruptionKind.SHARPNESS, "increase"): {"visibility": SHARP_VISIBILITY, "lightness": fixed(1, 1, 1, 1, 1)},
    (CorruptionKind.SHARPNESS, "decrease"): {"visibility": SHARP_VISIBILITY, "kernel": SHARP_KERNEL},
    (CorruptionKind.JPEG, None): {"quality": fixed(60, 45, 30, 20, 10)},
    (CorruptionKind.JPEG2000, None): {"ratio": fixed(10, 20, 40, 80, 160)},
    (CorruptionKind.RESOLUTION_REDUCTION, None): {"scale": fixed(0.9, 0.75, 0.6, 0.45, 0.3)},
}


def _check_direction(kind: CorruptionKind, direction):
    if kind.directions:
        if direction not in kind.directions:
            raise ValidationError(f"{kind.value} needs a direction in {kind.directions}, got {direction!r}")
    elif direction is not None:
        raise ValidationError(f"{kind.value} takes no direction")


def severity_table(kind, direction=None) -> dict[str, tuple[RangeBucket, ...]]:
    """Parameter buckets per severity level, mildest first (index 0 is severity 1)."""
    kind = CorruptionKind(kind)
    _check_direction(kind, direction)
    return dict(_TABLES[(kind, direction)])


@dataclass(frozen=True)
class CorruptionSpec:
    kind: CorruptionKind
    severity: int
    direction: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", CorruptionKind(self.kind))
        if isinstance(self.severity, bool) or self.severity not in range(1, N_SEVERITIES + 1):
            raise ValidationError(f"severity must be in 1..{N_SEVERITIES}, got {self.severity!r}")
        _check_direction(self.kind, self.direction)

    def to_json(self) -> dict:
        out = {"kind": self.kind.value, "severity": self.severity}
        if self.direction is not None:
            out["direction"] = self.direction
        return out


@dataclass(frozen=True)
class CorruptionPlan:
    """Recipe for one output image."""

    source_id: str
    replicate: int
    specs: tuple[CorruptionSpec, ...]
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        if len(self.specs) > N_SEVERITIES:
            raise ValidationError("a plan holds at most five corruptions")
        kinds = [s.kind for s in self.specs]
        if len(set(kinds)) != len(kinds):
            raise ValidationError("a plan may not repeat a corruption kind")
        if self.replicate < 1:
            raise ValidationError("replicate index starts at 1")

    @property
    def output_id(self) -> str:
        return f"{self.source_id}_c{self.replicate}"

    def to_json(self) -> dict:
        return {"output_id": self.output_id, "source_id": self.source_id, "replicate": self.replicate,
                "seed": self.seed, "specs": [s.to_json() for s in self.specs]}


def plan_corruption(manifest: DatasetManifest, seed: int, replicates: int = 5,
                    max_k: int = 5) -> list[CorruptionPlan]:
    """One plan per (record, replicate), ordered by record then replicate.

    Each plan draws k uniformly from 1..max_k, then k distinct kinds in
    random order, each at a uniform severity (and direction where the kind
    has two).
    """
    if replicates < 1:
        raise ValidationError("replicates must be >= 1")
    if not 1 <= max_k <= len(CorruptionKind):
        raise ValidationError(f"max_k must be in 1..{len(CorruptionKind)}")
    if max_k > N_SEVERITIES:
        raise ValidationError("max_k may not exceed 5")
    if len(manifest) == 0:
        raise ValidationError("manifest is empty")
    kinds = list(CorruptionKind)
    plans = []
    for rec in manifest.records:
        for r in range(1, replicates + 1):
            rng = sample_rng(seed, rec.id, r, "plan")
            k = int(rng.integers(1, max_k + 1))
            chosen = rng.choice(len(kinds), size=k, replace=False)
            specs = []
            for i in chosen:
                kind = kinds[int(i)]
                severity = int(rng.integers(1, N_SEVERITIES + 1))
                direction = None
                if kind.directions:
                    direction = kind.directions[int(rng.integers(len(kind.directions)))]
                specs.append(CorruptionSpec(kind, severity, direction))
            plans.append(CorruptionPlan(rec.id, r, tuple(specs), int(seed)))
    return plans


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

def overexposure(image, gamma, knee):
    """Lift tones with ``1 - (1 - x)^gamma``, then saturate everything above ``knee``."""
    lifted = 1.0 - (1.0 - image) ** gamma
    return np.clip(lifted / knee, 0.0, 1.0)


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    a: float
    b: float
    angle: float

    def extents(self) -> tuple[float, float]:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return math.hypot(self.a * c, self.b * s), math.hypot(self.a * s, self.b * c)

    def box(self, height, width) -> tuple[int, int, int, int]:
        """``(y0, y1, x0, x1)`` covering every pixel the ellipse touches."""
        ex, ey = self.extents()
        return (max(0, math.floor(self.cy - ey)), min(height, math.ceil(self.cy + ey) + 1),
                max(0, math.floor(self.cx - ex)), min(width, math.ceil(self.cx + ex) + 1))

    def weights(self, height, width, feather=0.15):
        """Soft membership on the bounding box: 1 inside, a linear ramp over the outer ``feather`` of the radius."""
        y0, y1, x0, x1 = self.box(height, width)
        yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
        c, s = math.cos(self.angle), math.sin(self.angle)
        u = (xx - self.cx) * c + (yy - self.cy) * s
        v = -(xx - self.cx) * s + (yy - self.cy) * c
        rho = np.sqrt((u / self.a) ** 2 + (v / self.b) ** 2)
        return np.clip((1.0 - rho) / feather, 0.0, 1.0), (y0, y1, x0, x1)

    def to_json(self) -> dict:
        return {"centre": [self.cx, self.cy], "axes": [self.a, self.b], "angle": self.angle}


def random_ellipse(height, width, area, rng) -> Ellipse:
    """Ellipse of ``area`` times the frame, placed fully inside the frame when it fits."""
    aspect = float(rng.uniform(0.75, 1.33))
    angle = float(rng.uniform(0.0, math.pi))
    total = area * height * width
    a = math.sqrt(total * aspect / math.pi)
    b = math.sqrt(total / (math.pi * aspect))
    ex, ey = Ellipse(0, 0, a, b, angle).extents()

    def centre(extent, size):
        lo, hi = extent, size - extent
        return size / 2.0 if lo >= hi else float(rng.uniform(lo, hi))

    return Ellipse(centre(ex, width), centre(ey, height), a, b, angle)


def ellipse_mask(height, width, ellipse: Ellipse) -> np.ndarray:
    """Full-frame soft mask of an ellipse."""
    out = np.zeros((height, width))
    w, (y0, y1, x0, x1) = ellipse.weights(height, width)
    out[y0:y1, x0:x1] = w
    return out


def local_focus_blur(image, area, radius, rng):
    """Disk blur blended in through a feathered random ellipse.

    Only the ellipse's bounding box is filtered; a margin of real pixels
    around it keeps the result equal to blurring the whole frame.
    """
    h, w = image.shape[:2]
    ell = random_ellipse(h, w, area, rng)
    m, (y0, y1, x0, x1) = ell.weights(h, w)
    r = int(math.ceil(radius))
    py0, py1, px0, px1 = max(0, y0 - r), min(h, y1 + r), max(0, x0 - r), min(w, x1 + r)
    blurred = ops.lens_blur(image[py0:py1, px0:px1], radius)[y0 - py0:y1 - py0, x0 - px0:x1 - px0]
    out = image.copy()
    m = m[..., None]
    out[y0:y1, x0:x1] = m * blurred + (1.0 - m) * image[y0:y1, x0:x1]
    return out, ell.to_json()


def _decode(data: bytes, codec: str) -> np.ndarray:
    bgr = cv2.imdecode(np.frombuffer(data, np.uint8), cv2.IMREAD_COLOR)
    if bgr is None:
        raise CodecError(f"{codec} stream could not be decoded")
    return bgr[..., ::-1].astype(np.float64) / 255.0


def jpeg(image, quality):
    buf = io.BytesIO()
    try:
        Image.fromarray(to_uint8(image), mode="RGB").save(buf, format="JPEG", quality=int(quality))
    except Exception as exc:  # codec libraries raise assorted types
        raise CodecError(f"JPEG encoding failed: {exc}") from exc
    return _decode(buf.getvalue(), "JPEG")


def jpeg2000_rate_code(ratio) -> int:
    """OpenJPEG rate setting for a target compression ratio (ratio = 1000 / code)."""
    return int(min(1000, max(1, round(1000.0 / float(ratio)))))


J2K_MIN_SIDE = 32  # the encoder's default wavelet depth needs this much


def jpeg2000(image, ratio):
    """Round trip through a single-layer JPEG 2000 stream at roughly ``ratio``:1."""
    h, w = image.shape[:2]
    if min(h, w) < J2K_MIN_SIDE:
        padded = np.pad(image, ((0, max(0, J2K_MIN_SIDE - h)), (0, max(0, J2K_MIN_SIDE - w)), (0, 0)),
                        mode="edge")
        return jpeg2000(padded, ratio)[:h, :w]
    bgr = np.ascontiguousarray(to_uint8(image)[..., ::-1])
    try:
        ok, data = cv2.imencode(".jp2", bgr, [cv2.IMWRITE_JPEG2000_COMPRESSION_X1000,
                                              jpeg2000_rate_code(ratio)])
    except cv2.error as exc:
        raise CodecError(f"JPEG 2000 encoding failed: {exc}") from exc
    if not ok:
        raise CodecError("JPEG 2000 encoding failed")
    return _decode(data.tobytes(), "JPEG 2000")


def resolution_reduction(image, scale):
    h, w = image.shape[:2]
    sw, sh = max(1, round(w * scale)), max(1, round(h * scale))
    small = resize_bicubic(image, sw, sh)
    return resize_bicubic(small, w, h)


def _as_float(v):
    return float(v) if isinstance(v, (float, np.floating)) else v


def apply_corruption(spec: CorruptionSpec, image, rng):
    """Apply one corruption; returns ``(image, drawn parameters)``."""
    table = _TABLES[(spec.kind, spec.direction)]
    p = {name: b[spec.severity - 1].draw(rng) for name, b in table.items()}
    k, d = spec.kind, spec.direction
    if k is CorruptionKind.MOTION_BLUR:
        p["angle"] = float(rng.uniform(0.0, 180.0))
        out = ops.motion_blur(image, int(p["kernel"]), p["angle"])
    elif k is CorruptionKind.LOCAL_FOCUS_BLUR:
        out, geom = local_focus_blur(image, p["area"], p["radius"], rng)
        p.update(geom)
    elif k is CorruptionKind.OVEREXPOSURE:
        out = overexposure(image, p["gamma"], p["knee"])
    elif k is CorruptionKind.CONTRAST:
        out = ops.contrast(image, p["factor"])
    elif k is CorruptionKind.BRIGHTNESS:
        out = ops.brightness(image, p["factor"])
    elif k is CorruptionKind.SATURATION:
        out = ops.saturation(image, p["factor"])
    elif k is CorruptionKind.HUE:
        out = ops.hue_shift(image, p["shift"])
    elif k is CorruptionKind.SHARPNESS:
        out = (ops.sharpen(image, p["visibility"], p["lightness"]) if d == "increase"
               else ops.soften(image, p["visibility"], int(p["kernel"])))
    elif k is CorruptionKind.JPEG:
        out = jpeg(image, p["quality"])
    elif k is CorruptionKind.JPEG2000:
        out = jpeg2000(image, p["ratio"])
    else:
        out = resolution_reduction(image, p["scale"])
    return out, {n: _as_float(v) for n, v in p.items()}


def execute(plan: CorruptionPlan, image):
    """Run a plan's corruptions in order; returns ``(image, per-step log)``.

    Output dimensions equal the input. An empty plan returns an identical copy.
    """
    image = as_rgb(image)
    rng = sample_rng(plan.seed, plan.source_id, plan.replicate, "execute")
    log = []
    out = image.copy()
    for spec in plan.specs:
        out, params = apply_corruption(spec, out, rng)
        log.append({**spec.to_json(), "params": params})
    return out, log


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

def derived_record(rec: SampleRecord, plan: CorruptionPlan, image_path: str,
                   old_root: Path, new_root: Path) -> SampleRecord:
    """Record for a corrupted output; label, patient and GT references carry over."""
    meta = {**rec.meta, "source_id": rec.id, "replicate": plan.replicate}
    return rebase_record(rec, old_root, new_root, id=plan.output_id, image_path=image_path, meta=meta)


def generate(manifest: DatasetManifest, plans: Sequence[CorruptionPlan], out_dir,
             workers: int | None = None):
    """Execute every plan and write ``images/<output_id>.png`` under ``out_dir``.

    Images keep their full frame; any crop box stays on the record so GT
    masks remain aligned. Returns ``(derived manifest, plan log lines)``.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    records = manifest.by_id()
    missing = {p.source_id for p in plans} - set(records)
    if missing:
        raise ValidationError(f"plans reference unknown records: {sorted(missing)[:5]}")

    # one work unit per source image, so each source is decoded once
    groups: dict[str, list[CorruptionPlan]] = {}
    for plan in plans:
        groups.setdefault(plan.source_id, []).append(plan)

    def run(source_id: str):
        rec = records[source_id]
        image = load_image(manifest.resolve(rec.image_path))
        done = {}
        for plan in groups[source_id]:
            out, log = execute(plan, image)
            rel = f"images/{plan.output_id}.png"
            save_image(out_dir / rel, out)
            done[plan] = (derived_record(rec, plan, rel, Path(manifest.root), out_dir),
                          {**plan.to_json(), "applied": log})
        return done

    n = worker_count(workers)
    if n == 1:
        finished = [run(s) for s in groups]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            finished = list(pool.map(run, groups))
    by_plan = {k: v for part in finished for k, v in part.items()}
    results = [by_plan[p] for p in plans]
    derived = DatasetManifest(name=f"{manifest.name}-C", split=manifest.split,
                              records=tuple(r for r, _ in results), root=out_dir)
    return derived, [log for _, log in results]


def plan_log_lines(logs: Sequence[Mapping]) -> str:
    return "".join(json.dumps(entry, sort_keys=True) + "\n" for entry in logs)
