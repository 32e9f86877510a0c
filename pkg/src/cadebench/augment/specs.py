"""Declarative augmentation tables, bucket sampling and exclusion groups."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from ..errors import ValidationError


class Kind(str, enum.Enum):
    FLIP = "Flip"
    ROTATE90 = "Rotate90"
    AFFINE = "Affine"
    SHARPNESS = "Sharpness"
    SHARPNESS_INCREASE = "SharpnessIncrease"
    SHARPNESS_DECREASE = "SharpnessDecrease"
    GRAYSCALE = "Grayscale"
    GAUSSIAN_BLUR = "GaussianBlur"
    COLOR_JITTER = "ColorJitter"
    RANDOM_CROP = "RandomCrop"
    GAUSSIAN_NOISE = "GaussianNoise"
    MOTION_BLUR = "MotionBlur"
    ZOOM_BLUR = "ZoomBlur"
    LENS_BLUR = "LensBlur"
    MEDIAN_BLUR = "MedianBlur"
    DEFOCUS_BLUR = "DefocusBlur"
    CONTRAST_INCREASE = "ContrastIncrease"
    CONTRAST_DECREASE = "ContrastDecrease"
    BRIGHTNESS_INCREASE = "BrightnessIncrease"
    BRIGHTNESS_DECREASE = "BrightnessDecrease"
    SATURATION_INCREASE = "SaturationIncrease"
    SATURATION_DECREASE = "SaturationDecrease"
    HUE_RED = "HueRed"
    HUE_GREEN = "HueGreen"
    SOLARIZE = "Solarize"


GEOMETRIC_KINDS = frozenset({Kind.FLIP, Kind.ROTATE90, Kind.AFFINE, Kind.RANDOM_CROP})


@dataclass(frozen=True)
class RangeBucket:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValidationError(f"bucket lower bound {self.lo} exceeds upper bound {self.hi}")

    def draw(self, rng: np.random.Generator) -> float:
        if self.lo == self.hi:
            return self.lo
        return float(rng.uniform(self.lo, self.hi))

    def __contains__(self, value) -> bool:
        return self.lo <= value <= self.hi


def buckets(*pairs) -> tuple[RangeBucket, ...]:
    return tuple(RangeBucket(float(lo), float(hi)) for lo, hi in pairs)


def fixed(*values) -> tuple[RangeBucket, ...]:
    return tuple(RangeBucket(float(v), float(v)) for v in values)


@dataclass(frozen=True)
class Param:
    name: str
    buckets: tuple[RangeBucket, ...]


@dataclass(frozen=True)
class TransformSpec:
    """One augmentation step.

    All parameters share a bucket index: a single option is picked, then
    every parameter is drawn inside its own bucket at that index.
    """

    kind: Kind
    probability: float
    params: tuple[Param, ...] = ()
    exclusion_group: str | None = None
    options: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValidationError(f"{self.kind.value}: probability {self.probability} outside [0, 1]")
        sizes = {len(p.buckets) for p in self.params}
        if len(sizes) > 1:
            raise ValidationError(f"{self.kind.value}: parameters disagree on the number of options")
        if sizes and 0 in sizes:
            raise ValidationError(f"{self.kind.value}: parametric transform needs at least one bucket")

    @property
    def parametric(self) -> bool:
        return bool(self.params)

    @property
    def n_options(self) -> int:
        return len(self.params[0].buckets) if self.params else 0

    @property
    def buckets(self) -> tuple[RangeBucket, ...]:
        """Buckets of the first parameter (the only one for most transforms)."""
        return self.params[0].buckets if self.params else ()

    def capped(self, max_option: int) -> "TransformSpec":
        if not self.params:
            return self
        n = min(max_option, self.n_options)
        return replace(self, params=tuple(Param(p.name, p.buckets[:n]) for p in self.params))


def sample_bucket(spec: TransformSpec, rng: np.random.Generator,
                  max_option: int | None = None) -> dict[str, float]:
    """Pick one option uniformly (among the first ``max_option``) and draw every parameter in it."""
    if not spec.parametric:
        raise ValidationError(f"{spec.kind.value} has no sampled parameters")
    n = spec.n_options
    if max_option is not None:
        if not 1 <= max_option <= n:
            raise ValidationError(f"max_option {max_option} out of range 1..{n} for {spec.kind.value}")
        n = max_option
    idx = int(rng.integers(n)) if n > 1 else 0
    return {p.name: p.buckets[idx].draw(rng) for p in spec.params}


def resolve_exclusions(specs: Sequence[TransformSpec], rng: np.random.Generator) -> list[TransformSpec]:
    """Decide which transforms fire on this draw.

    Ungrouped specs fire independently with their own probability. Members of
    an exclusion group share one uniform draw that is partitioned into
    consecutive intervals of length ``p_i``, so at most one member fires and
    each member keeps its marginal probability ``p_i``. The draw for a group
    happens at the position of its first member.
    """
    winners: dict[str, int | None] = {}
    groups: dict[str, list[int]] = {}
    for i, s in enumerate(specs):
        if s.exclusion_group is not None:
            groups.setdefault(s.exclusion_group, []).append(i)

    active = []
    for i, s in enumerate(specs):
        g = s.exclusion_group
        if g is None:
            if rng.random() < s.probability:
                active.append(s)
            continue
        if g not in winners:
            u = rng.random()
            winner = None
            acc = 0.0
            for j in groups[g]:
                acc += specs[j].probability
                if u < acc:
                    winner = j
                    break
            winners[g] = winner
        if winners[g] == i:
            active.append(s)
    return active


def check_groups(specs: Sequence[TransformSpec]) -> None:
    totals: dict[str, float] = {}
    for s in specs:
        if s.exclusion_group is not None:
            totals[s.exclusion_group] = totals.get(s.exclusion_group, 0.0) + s.probability
    over = {g: t for g, t in totals.items() if t > 1.0 + 1e-12}
    if over:
        raise ValidationError(f"exclusion groups with total probability above 1: {over}")


# ---------------------------------------------------------------------------
# Preset tables
# ---------------------------------------------------------------------------

class Preset(str, enum.Enum):
    DOWNSTREAM_TRAIN_NDSA = "downstream-train-ndsa"
    DOWNSTREAM_VAL_NDSA = "downstream-val-ndsa"
    DOWNSTREAM_TRAIN_DSA = "downstream-train-dsa"
    DOWNSTREAM_VAL_DSA = "downstream-val-dsa"
    PRETRAIN_NDSA = "pretrain-ndsa"
    PRETRAIN_DSA = "pretrain-dsa"

    @property
    def is_pretrain(self) -> bool:
        return self in (Preset.PRETRAIN_NDSA, Preset.PRETRAIN_DSA)


class ViewRole(str, enum.Enum):
    GLOBAL1 = "global1"
    GLOBAL2 = "global2"
    LOCAL = "local"


FIVE_SIZES_SMALL = fixed(1, 3, 5, 7, 9)
FIVE_SIZES_LARGE = fixed(9, 11, 17, 21, 25)
ZOOM_FACTORS = buckets((1.01, 1.02), (1.03, 1.04), (1.05, 1.06), (1.07, 1.08), (1.09, 1.1))
SHARP_VISIBILITY = buckets((0.1, 0.2), (0.2, 0.3), (0.3, 0.4), (0.4, 0.5), (0.5, 0.6))
SHARP_KERNEL = fixed(3, 5, 7, 9, 11)
CONTRAST_UP = buckets((1.01, 1.1), (1.11, 1.2), (1.21, 1.25), (1.26, 1.3), (1.31, 1.4))
CONTRAST_DOWN = buckets((0.95, 0.99), (0.9, 0.94), (0.85, 0.89), (0.75, 0.84), (0.65, 0.74))
BRIGHTNESS_UP = buckets((1.01, 1.2), (1.21, 1.4), (1.41, 1.6), (1.61, 1.8), (1.81, 2.0))
BRIGHTNESS_DOWN = buckets((0.9, 0.99), (0.85, 0.89), (0.8, 0.84), (0.75, 0.79), (0.7, 0.74))
SATURATION_UP = buckets((1.01, 1.05), (1.06, 1.1), (1.11, 1.15), (1.16, 1.2), (1.21, 1.25))
SATURATION_DOWN = buckets((0.9, 0.99), (0.8, 0.89), (0.7, 0.79), (0.6, 0.69), (0.5, 0.59))
HUE_RED_SHIFT = buckets((0.0, 0.01), (0.011, 0.013), (0.014, 0.016), (0.017, 0.018), (0.019, 0.02))
HUE_GREEN_SHIFT = buckets((-0.01, 0.0), (-0.013, -0.011), (-0.016, -0.014), (-0.02, -0.017), (-0.025, -0.021))
NOISE_VARIANCES = fixed(0.01, 0.02, 0.03, 0.05)
JITTER_NDSA = buckets((0.5, 1.5), (0.7, 1.3), (0.9, 1.1))


def _spec(kind, p, params=(), group=None, **options):
    return TransformSpec(kind, p, tuple(Param(n, b) for n, b in params), group, dict(options))


def _color_jitter_ndsa(p, jitter=JITTER_NDSA):
    return _spec(Kind.COLOR_JITTER, p,
                 [("brightness", jitter), ("contrast", jitter), ("saturation", jitter)], "color")


def _downstream_ndsa():
    return [
        _spec(Kind.FLIP, 0.5, modes=("h", "v", "hv")),
        _spec(Kind.ROTATE90, 0.6),
        _spec(Kind.AFFINE, 0.2, [("rotation", buckets((-25, 25))),
                                 ("translate_x", buckets((-0.05, 0.05))),
                                 ("translate_y", buckets((-0.05, 0.05))),
                                 ("shear", buckets((-15, 15)))], "blur_sharp_affine"),
        _spec(Kind.SHARPNESS, 0.2, group="blur_sharp_affine", factor=2.0),
        _spec(Kind.GRAYSCALE, 0.2, group="color"),
        _spec(Kind.GAUSSIAN_BLUR, 0.2, [("sigma", buckets((0.1, 2.0)))], "blur_sharp_affine"),
        _color_jitter_ndsa(0.6),
        _spec(Kind.RANDOM_CROP, 0.33, [("scale", buckets((0.7, 1.1)))]),
        _spec(Kind.GAUSSIAN_NOISE, 0.5, [("variance", NOISE_VARIANCES)]),
    ]


def _blur_family(p_each, with_defocus=True):
    out = [
        _spec(Kind.MOTION_BLUR, p_each, [("kernel", FIVE_SIZES_LARGE)], "blur"),
        _spec(Kind.ZOOM_BLUR, p_each, [("max_factor", ZOOM_FACTORS)], "blur"),
        _spec(Kind.LENS_BLUR, p_each, [("radius", FIVE_SIZES_SMALL)], "blur"),
        _spec(Kind.MEDIAN_BLUR, p_each, [("aperture", FIVE_SIZES_SMALL)], "blur"),
    ]
    if with_defocus:
        out.append(_spec(Kind.DEFOCUS_BLUR, p_each, [("radius", FIVE_SIZES_LARGE)], "blur"))
    return out


def _sharpness_pair(p):
    return [
        _spec(Kind.SHARPNESS_INCREASE, p, [("visibility", SHARP_VISIBILITY),
                                           ("lightness", SHARP_VISIBILITY)], "sharpness"),
        _spec(Kind.SHARPNESS_DECREASE, p, [("visibility", SHARP_VISIBILITY),
                                           ("kernel", SHARP_KERNEL)], "sharpness"),
    ]


def _photometric_pairs(p):
    return [
        _spec(Kind.CONTRAST_INCREASE, p, [("factor", CONTRAST_UP)], "contrast"),
        _spec(Kind.CONTRAST_DECREASE, p, [("factor", CONTRAST_DOWN)], "contrast"),
        _spec(Kind.BRIGHTNESS_INCREASE, p, [("factor", BRIGHTNESS_UP)], "brightness"),
        _spec(Kind.BRIGHTNESS_DECREASE, p, [("factor", BRIGHTNESS_DOWN)], "brightness"),
        _spec(Kind.SATURATION_INCREASE, p, [("factor", SATURATION_UP)], "saturation"),
        _spec(Kind.SATURATION_DECREASE, p, [("factor", SATURATION_DOWN)], "saturation"),
        _spec(Kind.HUE_RED, p, [("shift", HUE_RED_SHIFT)], "hue"),
        _spec(Kind.HUE_GREEN, p, [("shift", HUE_GREEN_SHIFT)], "hue"),
    ]


def _downstream_dsa():
    return [
        _spec(Kind.FLIP, 0.5, modes=("h", "v", "hv")),
        _spec(Kind.ROTATE90, 0.6),
        _spec(Kind.RANDOM_CROP, 0.33, [("scale", buckets((0.7, 1.1)))]),
        *_blur_family(0.1),
        *_sharpness_pair(0.25),
        *_photometric_pairs(0.25),
        _spec(Kind.GAUSSIAN_NOISE, 0.5, [("variance", NOISE_VARIANCES)]),
    ]


GLOBAL_SIZE = 256
LOCAL_SIZE = 96


def _crop(role):
    if role is ViewRole.LOCAL:
        return _spec(Kind.RANDOM_CROP, 1.0, [("scale", buckets((0.05, 0.4)))], size=LOCAL_SIZE)
    return _spec(Kind.RANDOM_CROP, 1.0, [("scale", buckets((0.4, 1.0)))], size=GLOBAL_SIZE)


# DINO-style colour jitter: one fixed range per aspect.
def _color_jitter_dino():
    return _spec(Kind.COLOR_JITTER, 0.4, [("brightness", buckets((0.6, 1.4))),
                                          ("contrast", buckets((0.6, 1.4))),
                                          ("saturation", buckets((0.8, 1.2))),
                                          ("hue", buckets((-0.1, 0.1)))], "color")


def _pretrain_ndsa(role):
    blur_p = {ViewRole.GLOBAL1: 1.0, ViewRole.GLOBAL2: 0.1, ViewRole.LOCAL: 0.5}[role]
    out = [
        _crop(role),
        _spec(Kind.FLIP, 0.5, modes=("h",)),
        _color_jitter_dino(),
        _spec(Kind.GRAYSCALE, 0.1, group="color"),
        _spec(Kind.GAUSSIAN_BLUR, blur_p, [("sigma", buckets((0.1, 2.0)))]),
    ]
    if role is ViewRole.GLOBAL2:
        out.append(_spec(Kind.SOLARIZE, 0.2, threshold=0.5))
    return out


def _pretrain_dsa(role):
    # Listed probabilities apply to the blur family as a whole.
    blur_p = {ViewRole.GLOBAL1: 0.25, ViewRole.GLOBAL2: 0.025, ViewRole.LOCAL: 0.125}[role]
    family = _blur_family(blur_p / 4, with_defocus=False)
    if role is ViewRole.LOCAL:
        return [_crop(role), *family, *_photometric_pairs(0.4)]
    out = [
        _crop(role),
        _spec(Kind.FLIP, 0.5, modes=("h", "v", "hv")),
        _color_jitter_dino(),
        *family,
    ]
    if role is ViewRole.GLOBAL2:
        out.extend(_sharpness_pair(0.1))
    out.extend(_photometric_pairs(0.4))
    return out


def preset_specs(preset: Preset | str, view: ViewRole | str | None = None) -> list[TransformSpec]:
    """Ordered transform list of a preset (and view role, for pretraining presets)."""
    preset = Preset(preset)
    if preset.is_pretrain != (view is not None):
        raise ValidationError(
            f"{preset.value}: a view role is {'required' if preset.is_pretrain else 'not accepted'}")
    if preset is Preset.DOWNSTREAM_TRAIN_NDSA:
        specs = _downstream_ndsa()
    elif preset is Preset.DOWNSTREAM_VAL_NDSA:
        specs = [_spec(Kind.FLIP, 0.5, modes=("h", "v", "hv")),
                 _spec(Kind.ROTATE90, 0.6),
                 _color_jitter_ndsa(0.6, JITTER_NDSA[1:])]
    elif preset is Preset.DOWNSTREAM_TRAIN_DSA:
        specs = _downstream_dsa()
    elif preset is Preset.DOWNSTREAM_VAL_DSA:
        specs = [s.capped(3) for s in _downstream_dsa()]
    elif preset is Preset.PRETRAIN_NDSA:
        specs = _pretrain_ndsa(ViewRole(view))
    else:
        specs = _pretrain_dsa(ViewRole(view))
    check_groups(specs)
    return specs
