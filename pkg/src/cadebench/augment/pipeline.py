"""Seeded application of augmentation presets to image/mask pairs."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..core import (
    BARRETT_STATS,
    IMAGENET_STATS,
    as_binary_mask,
    as_rgb,
    check_same_shape,
    normalize,
)
from ..errors import ValidationError
from . import ops
from .specs import (
    LOCAL_SIZE,
    Kind,
    Preset,
    TransformSpec,
    ViewRole,
    preset_specs,
    resolve_exclusions,
    sample_bucket,
)

SEED_LIMIT = 2 ** 64


def sample_rng(seed: int, *keys) -> np.random.Generator:
    """Generator keyed on ``(seed, *keys)``; independent of call order or worker layout."""
    if not 0 <= int(seed) < SEED_LIMIT:
        raise ValidationError(f"seed must be an unsigned 64-bit integer, got {seed}")
    h = hashlib.blake2b(digest_size=16)
    h.update(int(seed).to_bytes(8, "little"))
    for key in keys:
        h.update(b"\x1f")
        h.update(str(key).encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int.from_bytes(h.digest(), "little")))


@dataclass
class AppliedTransform:
    kind: str
    params: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": self.params}


def _num(v):
    return float(v) if isinstance(v, (float, np.floating)) else v


def run_transform(spec: TransformSpec, image, mask, rng, max_option=None):
    """Apply one (already activated) transform and return ``(image, mask, params)``."""
    params = {}
    if spec.parametric:
        cap = None if max_option is None else min(max_option, spec.n_options)
        params = sample_bucket(spec, rng, cap)
    k = spec.kind
    h, w = image.shape[:2]

    if k is Kind.FLIP:
        modes = spec.options.get("modes", ("h", "v", "hv"))
        params["mode"] = modes[int(rng.integers(len(modes)))] if len(modes) > 1 else modes[0]
        image, mask = ops.flip(image, mask, params["mode"])
    elif k is Kind.ROTATE90:
        params["quarter_turns"] = int(rng.integers(1, 4))
        image, mask = ops.rotate90(image, mask, params["quarter_turns"])
    elif k is Kind.AFFINE:
        image, mask = ops.affine(image, mask, params["rotation"], params["translate_x"],
                                 params["translate_y"], params["shear"])
    elif k is Kind.RANDOM_CROP:
        size = spec.options.get("size")
        out_w, out_h = (size, size) if size else (w, h)
        box = ops.crop_box(w, h, params["scale"], rng)
        params["box"] = list(box)
        image, mask = ops.crop_resize(image, mask, box, out_w, out_h)
    elif k is Kind.SHARPNESS:
        params["factor"] = spec.options.get("factor", 2.0)
        image = ops.enhance_sharpness(image, params["factor"])
    elif k is Kind.SHARPNESS_INCREASE:
        image = ops.sharpen(image, params["visibility"], params["lightness"])
    elif k is Kind.SHARPNESS_DECREASE:
        image = ops.soften(image, params["visibility"], params["kernel"])
    elif k is Kind.GRAYSCALE:
        image = ops.grayscale(image)
    elif k is Kind.GAUSSIAN_BLUR:
        image = ops.gaussian_blur(image, params["sigma"])
    elif k is Kind.COLOR_JITTER:
        image = ops.brightness(image, params["brightness"])
        image = ops.contrast(image, params["contrast"])
        image = ops.saturation(image, params["saturation"])
        if "hue" in params:
            image = ops.hue_shift(image, params["hue"])
    elif k is Kind.GAUSSIAN_NOISE:
        image = ops.gaussian_noise(image, params["variance"], rng)
    elif k is Kind.MOTION_BLUR:
        params["angle"] = float(rng.uniform(0.0, 180.0))
        image = ops.motion_blur(image, params["kernel"], params["angle"])
    elif k is Kind.ZOOM_BLUR:
        image = ops.zoom_blur(image, params["max_factor"])
    elif k is Kind.LENS_BLUR:
        image = ops.lens_blur(image, params["radius"])
    elif k is Kind.MEDIAN_BLUR:
        image = ops.median_blur(image, params["aperture"])
    elif k is Kind.DEFOCUS_BLUR:
        image = ops.defocus_blur(image, params["radius"])
    elif k in (Kind.CONTRAST_INCREASE, Kind.CONTRAST_DECREASE):
        image = ops.contrast(image, params["factor"])
    elif k in (Kind.BRIGHTNESS_INCREASE, Kind.BRIGHTNESS_DECREASE):
        image = ops.brightness(image, params["factor"])
    elif k in (Kind.SATURATION_INCREASE, Kind.SATURATION_DECREASE):
        image = ops.saturation(image, params["factor"])
    elif k in (Kind.HUE_RED, Kind.HUE_GREEN):
        image = ops.hue_shift(image, params["shift"])
    elif k is Kind.SOLARIZE:
        params["threshold"] = spec.options.get("threshold", 0.5)
        image = ops.solarize(image, params["threshold"])
    else:  # pragma: no cover - enum is closed
        raise ValidationError(f"unsupported transform {k}")
    return image, mask, {n: _num(v) for n, v in params.items()}


def run_specs(specs: Sequence[TransformSpec], image, mask, rng, max_option=None):
    log = []
    for spec in resolve_exclusions(specs, rng):
        image, mask, params = run_transform(spec, image, mask, rng, max_option)
        log.append(AppliedTransform(spec.kind.value, params))
    return image, mask, log


def apply_logged(preset, image, mask=None, sample_id="", epoch_seed=0, val_cap=None):
    """Like :func:`apply` but also returns the list of fired transforms and their parameters."""
    preset = Preset(preset)
    if preset.is_pretrain:
        raise ValidationError("pretraining presets produce view sets; use pretrain_views")
    image = as_rgb(image)
    if mask is not None:
        mask = as_binary_mask(mask)
        check_same_shape(image, mask)
    rng = sample_rng(epoch_seed, sample_id)
    return run_specs(preset_specs(preset), image, mask, rng, val_cap)


def apply(preset, image, mask=None, sample_id="", epoch_seed=0, val_cap=None):
    """Augment one sample with a downstream preset.

    The random stream is derived from ``(epoch_seed, sample_id)`` so the result
    does not depend on which other samples were processed, or in what order.
    Geometric transforms move ``mask`` with the image; photometric ones leave
    it untouched.
    """
    image, mask, _ = apply_logged(preset, image, mask, sample_id, epoch_seed, val_cap)
    return image, mask


def draw_active(preset, sample_id, epoch_seed, view=None) -> list[str]:
    """Names of the transforms that fire for a sample, without touching pixels."""
    if view is None:
        rng = sample_rng(epoch_seed, sample_id)
    else:
        view = ViewRole(view)
        rng = sample_rng(epoch_seed, sample_id, view_key(view))
    return [s.kind.value for s in resolve_exclusions(preset_specs(preset, view), rng)]


# ---------------------------------------------------------------------------
# Multi-crop views for self-supervised pretraining
# ---------------------------------------------------------------------------

@dataclass
class ViewSet:
    global1: np.ndarray
    global2: np.ndarray
    locals: list = field(default_factory=list)
    logs: dict = field(default_factory=dict)


def view_key(role: ViewRole, index: int = 0) -> str:
    return f"local{index}" if role is ViewRole.LOCAL else role.value


def pretrain_views(image, flavor="ndsa", n_local=8, sample_id="", seed=0, normalized=True) -> ViewSet:
    """Two 256x256 global views and ``n_local`` 96x96 local views of one image.

    N-DSA views are normalized with ImageNet statistics, DSA views with the
    Barrett statistics; pass ``normalized=False`` to keep ``[0, 1]`` pixels.
    """
    flavor = flavor.lower()
    if flavor not in ("ndsa", "dsa"):
        raise ValidationError(f"flavor must be 'ndsa' or 'dsa', got {flavor!r}")
    if n_local < 0:
        raise ValidationError("n_local must be >= 0")
    image = as_rgb(image)
    if min(image.shape[:2]) < LOCAL_SIZE:
        raise ValidationError(f"image must be at least {LOCAL_SIZE}x{LOCAL_SIZE}, got {image.shape[1]}x{image.shape[0]}")
    preset = Preset.PRETRAIN_NDSA if flavor == "ndsa" else Preset.PRETRAIN_DSA
    stats = IMAGENET_STATS if flavor == "ndsa" else BARRETT_STATS

    def make(role, index=0):
        key = view_key(role, index)
        rng = sample_rng(seed, sample_id, key)
        out, _, log = run_specs(preset_specs(preset, role), image, None, rng)
        return (normalize(out, stats) if normalized else out), log

    g1, log1 = make(ViewRole.GLOBAL1)
    g2, log2 = make(ViewRole.GLOBAL2)
    views = ViewSet(g1, g2, logs={"global1": log1, "global2": log2})
    for i in range(n_local):
        v, log = make(ViewRole.LOCAL, i)
        views.locals.append(v)
        views.logs[view_key(ViewRole.LOCAL, i)] = log
    return views


__all__ = [
    "AppliedTransform", "ViewSet", "apply", "apply_logged", "draw_active",
    "pretrain_views", "run_specs", "run_transform", "sample_rng",
]
