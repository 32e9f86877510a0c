"""Seeded augmentation pipelines for downstream training and multi-crop pretraining."""

from .pipeline import (
    AppliedTransform,
    ViewSet,
    apply,
    apply_logged,
    draw_active,
    pretrain_views,
    sample_rng,
)
from .specs import (
    GEOMETRIC_KINDS,
    Kind,
    Param,
    Preset,
    RangeBucket,
    TransformSpec,
    ViewRole,
    preset_specs,
    resolve_exclusions,
    sample_bucket,
)

__all__ = [
    "AppliedTransform", "GEOMETRIC_KINDS", "Kind", "Param", "Preset", "RangeBucket",
    "TransformSpec", "ViewRole", "ViewSet", "apply", "apply_logged", "draw_active",
    "pretrain_views", "preset_specs", "resolve_exclusions", "sample_bucket", "sample_rng",
]
