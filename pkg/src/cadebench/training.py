"""Loss kernels with analytic gradients and training-control helpers.

The network and optimizer live in an external trainer; this module supplies
the pieces around them that can be verified in isolation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from .consensus import GtStrategy, SINGLE_MASK_STRATEGIES
from .core import DatasetManifest, Tier
from .errors import ControllerStoppedError, ValidationError

CLAMP_EPS = 1e-7

# Optimizer settings consumed verbatim by the external trainer.
OPTIMIZER_PRESET = {
    "name": "adam",
    "amsgrad": True,
    "weight_decay": 1e-4,
    "betas": [0.9, 0.999],
    "lr_range": [1e-6, 1e-4],
}


@dataclass(frozen=True)
class LossConfig:
    label_smoothing: float = 0.01
    dice_smooth: float = 1.0
    w_bce: float = 1.0
    w_dice: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.label_smoothing < 0.5:
            raise ValidationError("label_smoothing must lie in [0, 0.5)")
        if self.dice_smooth <= 0:
            raise ValidationError("dice_smooth must be > 0")
        if self.w_bce < 0 or self.w_dice < 0:
            raise ValidationError("loss weights must be >= 0")


def _pair(pred, target):
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValidationError(f"shape mismatch: pred {p.shape} vs target {t.shape}")
    if p.size == 0:
        raise ValidationError("empty input")
    return p, t


def smooth_labels(target, eps):
    return target * (1.0 - eps) + eps / 2.0


def bce_loss(pred, target, cfg: LossConfig = LossConfig()):
    """Mean binary cross-entropy against label-smoothed targets.

    Returns ``(loss, d loss / d pred)``. Predictions are clamped to
    ``[1e-7, 1 - 1e-7]``; the gradient is zero where clamping is active.
    """
    p, t = _pair(pred, target)
    if t.min() < 0 or t.max() > 1:
        raise ValidationError("BCE targets must lie in [0, 1]")
    ts = smooth_labels(t, cfg.label_smoothing)
    pc = np.clip(p, CLAMP_EPS, 1.0 - CLAMP_EPS)
    n = p.size
    loss = -np.mean(ts * np.log(pc) + (1.0 - ts) * np.log(1.0 - pc))
    grad = (-ts / pc + (1.0 - ts) / (1.0 - pc)) / n
    grad = np.where((p < CLAMP_EPS) | (p > 1.0 - CLAMP_EPS), 0.0, grad)
    return float(loss), grad


def dice_loss(pred, target, cfg: LossConfig = LossConfig()):
    """Soft Dice loss ``1 - (2 sum(p t) + s) / (sum(p) + sum(t) + s)`` and its gradient."""
    p, t = _pair(pred, target)
    if not np.all((t == 0) | (t == 1)):
        raise ValidationError("Dice loss needs a binary target; use BCE for soft targets")
    s = cfg.dice_smooth
    inter = float(np.sum(p * t))
    denom = float(np.sum(p) + np.sum(t) + s)
    num = 2.0 * inter + s
    loss = 1.0 - num / denom
    grad = -(2.0 * t * denom - num) / denom ** 2
    return float(loss), grad


def _composite(pred, target, cfg):
    lb, gb = bce_loss(pred, target, cfg)
    ld, gd = dice_loss(pred, target, cfg)
    return cfg.w_bce * lb + cfg.w_dice * ld, cfg.w_bce * gb + cfg.w_dice * gd


def composite_seg_loss(pred, targets, strategy=GtStrategy.PLAUSIBLE_SPOT,
                       cfg: LossConfig = LossConfig(), rng: np.random.Generator | None = None):
    """Segmentation loss under a GT strategy.

    ``targets`` is one binary mask for the spot strategies, one soft mask for
    ``AVERAGE`` (BCE only) and four binary masks for ``MULTIPLE``. ``RANDOM``
    takes either the mask already drawn by ``training_target`` or all four,
    in which case one is drawn here with ``rng``.
    """
    strategy = GtStrategy(strategy)
    pred = np.asarray(pred, dtype=np.float64)
    if strategy in SINGLE_MASK_STRATEGIES:
        if isinstance(targets, (list, tuple)):
            raise ValidationError(f"{strategy.value} expects a single mask")
        return _composite(pred, targets, cfg)
    if strategy is GtStrategy.AVERAGE:
        if isinstance(targets, (list, tuple)):
            raise ValidationError("average expects a single soft mask")
        return bce_loss(pred, targets, cfg)
    if strategy is GtStrategy.RANDOM and not isinstance(targets, (list, tuple)):
        # mask already drawn by training_target
        return _composite(pred, targets, cfg)
    if not isinstance(targets, (list, tuple)) or len(targets) != 4:
        raise ValidationError(f"{strategy.value} expects the four consensus masks")
    if strategy is GtStrategy.RANDOM:
        if rng is None:
            raise ValidationError("the random strategy needs a generator")
        return _composite(pred, targets[int(rng.integers(4))], cfg)
    terms = [_composite(pred, t, cfg) for t in targets]
    loss = sum(l for l, _ in terms) / 4.0
    grad = sum(g for _, g in terms) / 4.0
    return float(loss), grad


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def balanced_batch(manifest: DatasetManifest, batch_size: int, rng: np.random.Generator) -> list[str]:
    """Draw ids with replacement; every slot is a fair coin between the two classes."""
    if batch_size < 0:
        raise ValidationError("batch_size must be >= 0")
    by_class = {0: [], 1: []}
    for r in manifest.records:
        by_class[r.label].append(r.id)
    missing = [c for c, ids in by_class.items() if not ids]
    if missing:
        raise ValidationError(f"class {missing[0]} absent from manifest {manifest.name!r}")
    out = []
    for _ in range(batch_size):
        ids = by_class[int(rng.integers(2))]
        out.append(ids[int(rng.integers(len(ids)))])
    return out


FRAME_FRACTIONS = (0.10, 0.50, 1.00)
_TIER_ALIASES = {"hq": Tier.HQ_FRAME, "mq": Tier.MQ_FRAME, "lq": Tier.LQ_FRAME}


def parse_tier(name) -> Tier:
    if isinstance(name, Tier):
        return name
    key = str(name).strip()
    if key.lower() in _TIER_ALIASES:
        return _TIER_ALIASES[key.lower()]
    return Tier(key)


@dataclass(frozen=True)
class FrameAdditionPlan:
    tiers: tuple[Tier, ...]
    fraction: float
    selected: dict[Tier, tuple[str, ...]] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(len(v) for v in self.selected.values())


def plan_frame_addition(base: DatasetManifest, frames: DatasetManifest, tiers: Sequence,
                        fraction: float, rng: np.random.Generator):
    """Append ``floor(fraction * available)`` frames of each tier, drawn without replacement.

    Selected frames keep their order from the frames manifest.
    """
    if not any(math.isclose(fraction, f) for f in FRAME_FRACTIONS):
        raise ValidationError(f"fraction must be one of {FRAME_FRACTIONS}, got {fraction}")
    tiers = tuple(dict.fromkeys(parse_tier(t) for t in tiers))
    if not tiers:
        raise ValidationError("at least one tier is required")
    exact = Fraction(str(fraction))
    base_ids = {r.id for r in base.records}
    selected: dict[Tier, tuple[str, ...]] = {}
    added = []
    for tier in tiers:
        pool = [r for r in frames.records if r.tier is tier]
        if not pool:
            raise ValidationError(f"tier {tier.value} absent from frames manifest {frames.name!r}")
        k = math.floor(exact * len(pool))
        idx = np.sort(rng.choice(len(pool), size=k, replace=False)) if k else np.array([], dtype=int)
        chosen = [pool[i] for i in idx]
        clash = [r.id for r in chosen if r.id in base_ids]
        if clash:
            raise ValidationError(f"frame ids already present in base manifest: {clash[:5]}")
        selected[tier] = tuple(r.id for r in chosen)
        added.extend(chosen)
    merged = replace(base, records=base.records + tuple(added))
    return merged, FrameAdditionPlan(tiers, float(fraction), selected)


# ---------------------------------------------------------------------------
# Learning-rate plateau and early stopping
# ---------------------------------------------------------------------------

class Mode(str, enum.Enum):
    MINIMIZE = "minimize"
    MAXIMIZE = "maximize"


@dataclass(frozen=True)
class ControllerConfig:
    lr0: float = 1e-4
    factor: float = 10.0
    plateau: int = 10
    max_reductions: int = 3
    patience: int = 25
    min_delta: float = 5e-4
    mode: Mode = Mode.MINIMIZE

    def __post_init__(self):
        if self.lr0 <= 0 or self.factor <= 1:
            raise ValidationError("lr0 must be > 0 and factor > 1")
        object.__setattr__(self, "mode", Mode(self.mode))


@dataclass(frozen=True)
class ControllerState:
    best_metric: float | None
    epochs_since_improvement: int
    plateau_count: int
    lr: float
    reductions_used: int
    stopped: bool
    epoch: int = 0
    config: ControllerConfig = field(default_factory=ControllerConfig)

    @classmethod
    def start(cls, config: ControllerConfig = ControllerConfig(), baseline: float | None = None):
        """Fresh state; ``baseline`` is the metric measured before the first epoch, if any."""
        return cls(best_metric=baseline, epochs_since_improvement=0, plateau_count=0,
                   lr=config.lr0, reductions_used=0, stopped=False, config=config)


def _improved(cfg: ControllerConfig, best, metric) -> bool:
    if best is None:
        return True
    gain = best - metric if cfg.mode is Mode.MINIMIZE else metric - best
    # a gain equal to min_delta up to float rounding is not an improvement
    return gain > cfg.min_delta and not math.isclose(gain, cfg.min_delta, rel_tol=1e-9, abs_tol=1e-15)


def controller_step(state: ControllerState, val_metric: float, mode=None) -> ControllerState:
    """Advance by one epoch.

    An improvement must beat the best value by strictly more than
    ``min_delta``. Every ``plateau`` non-improving epochs the learning rate is
    divided by ``factor`` (at most ``max_reductions`` times); after
    ``patience`` consecutive non-improving epochs the controller stops.
    """
    if state.stopped:
        raise ControllerStoppedError(f"controller stopped at epoch {state.epoch}")
    cfg = state.config if mode is None else replace(state.config, mode=Mode(mode))
    epoch = state.epoch + 1
    if _improved(cfg, state.best_metric, val_metric):
        return replace(state, best_metric=float(val_metric), epochs_since_improvement=0,
                       plateau_count=0, epoch=epoch, config=cfg)
    since = state.epochs_since_improvement + 1
    plateau = state.plateau_count + 1
    lr, used = state.lr, state.reductions_used
    if plateau >= cfg.plateau:
        plateau = 0
        if used < cfg.max_reductions:
            used += 1
            lr = cfg.lr0 / cfg.factor ** used
    return replace(state, epochs_since_improvement=since, plateau_count=plateau, lr=lr,
                   reductions_used=used, stopped=since >= cfg.patience, epoch=epoch, config=cfg)


def config_preset(loss: LossConfig = LossConfig(), controller: ControllerConfig = ControllerConfig()) -> dict:
    """JSON-ready bundle of the constants an external trainer should use."""
    return {
        "optimizer": dict(OPTIMIZER_PRESET),
        "loss": {
            "label_smoothing": loss.label_smoothing,
            "dice_smooth": loss.dice_smooth,
            "w_bce": loss.w_bce,
            "w_dice": loss.w_dice,
        },
        "scheduler": {
            "factor": controller.factor,
            "plateau_epochs": controller.plateau,
            "max_reductions": controller.max_reductions,
            "monitor": "val_loss",
        },
        "early_stopping": {
            "patience": controller.patience,
            "min_delta": controller.min_delta,
            "monitor": "val_metric",
        },
        "balanced_sampling": True,
        "seeds": 5,
    }
