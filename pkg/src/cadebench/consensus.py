"""Consensus ground truth from multiple expert delineations."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import as_binary_mask, check_same_shape
from .errors import ValidationError

AGREEMENT_THRESHOLD = 0.30


class GtStrategy(str, enum.Enum):
    SOFT_SPOT = "soft"
    PLAUSIBLE_SPOT = "plausible"
    SWEET_SPOT = "sweet"
    HARD_SPOT = "hard"
    RANDOM = "random"
    MULTIPLE = "multiple"
    AVERAGE = "average"


SINGLE_MASK_STRATEGIES = (GtStrategy.SOFT_SPOT, GtStrategy.PLAUSIBLE_SPOT,
                          GtStrategy.SWEET_SPOT, GtStrategy.HARD_SPOT)


@dataclass(frozen=True, eq=False)
class ExpertDelineation:
    """Lower-likelihood (LL) and higher-likelihood (HL) masks of one expert; HL must lie inside LL."""

    expert_id: str
    ll: np.ndarray
    hl: np.ndarray

    def __post_init__(self):
        ll = as_binary_mask(self.ll)
        hl = as_binary_mask(self.hl)
        check_same_shape(ll, hl)
        if np.any(hl & ~ll):
            raise ValidationError(
                f"expert {self.expert_id!r}: {int((hl & ~ll).sum())} HL pixels fall outside LL")
        object.__setattr__(self, "ll", ll)
        object.__setattr__(self, "hl", hl)


@dataclass(frozen=True, eq=False)
class ConsensusSet:
    soft: np.ndarray
    plausible: np.ndarray
    sweet: np.ndarray
    hard: np.ndarray
    average: np.ndarray

    def masks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """The four binary masks, from least to most certain."""
        return (self.soft, self.plausible, self.sweet, self.hard)

    def get(self, strategy) -> np.ndarray:
        strategy = GtStrategy(strategy)
        if strategy is GtStrategy.AVERAGE:
            return self.average
        if strategy not in SINGLE_MASK_STRATEGIES:
            raise ValidationError(f"{strategy.value} is not a single mask")
        return getattr(self, strategy.name.split("_")[0].lower())

    def __eq__(self, other):
        if not isinstance(other, ConsensusSet):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(
            (*self.masks(), self.average), (*other.masks(), other.average)))


def dice(a, b) -> float:
    """Dice overlap of two binary masks; two empty masks agree perfectly (1.0)."""
    a = as_binary_mask(a)
    b = as_binary_mask(b)
    check_same_shape(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / total


def check_agreement(d1: ExpertDelineation, d2: ExpertDelineation,
                    threshold: float = AGREEMENT_THRESHOLD) -> bool:
    """True when the two HL delineations reach the Dice threshold (inclusive)."""
    return dice(d1.hl, d2.hl) >= threshold


def select_best_pair(*delineations: ExpertDelineation) -> tuple[int, int]:
    """Zero-based indices of the pair with the highest HL Dice.

    Ties go to the lexicographically smallest index pair.
    """
    if len(delineations) == 1 and not isinstance(delineations[0], ExpertDelineation):
        delineations = tuple(delineations[0])
    if len(delineations) < 2:
        raise ValidationError("need at least two delineations")
    best, best_pair = -1.0, None
    for i, j in itertools.combinations(range(len(delineations)), 2):
        d = dice(delineations[i].hl, delineations[j].hl)
        if d > best:
            best, best_pair = d, (i, j)
    return best_pair


def build_consensus(d1: ExpertDelineation, d2: ExpertDelineation) -> ConsensusSet:
    check_same_shape(d1.ll, d2.ll)
    soft = d1.ll | d2.ll
    sweet = d1.hl | d2.hl
    plausible = (d1.ll & d2.ll) | sweet
    hard = d1.hl & d2.hl
    average = (soft.astype(np.float64) + plausible + sweet + hard) / 4.0
    return ConsensusSet(soft=soft, plausible=plausible, sweet=sweet, hard=hard, average=average)


@dataclass(frozen=True)
class PairSelection:
    pair: tuple[int, int]
    hl_dice: float
    agreed: bool


def consensus_from_experts(delineations: Sequence[ExpertDelineation],
                           threshold: float = AGREEMENT_THRESHOLD) -> tuple[ConsensusSet, PairSelection]:
    """Apply the two-expert protocol.

    With two delineations both are used, and ``agreed`` reports whether they
    meet the threshold (otherwise a third opinion should be requested). With
    three or more, the best-overlapping pair is used.
    """
    if len(delineations) < 2:
        raise ValidationError("consensus needs at least two expert delineations")
    if len(delineations) == 2:
        pair = (0, 1)
    else:
        pair = select_best_pair(*delineations)
    a, b = delineations[pair[0]], delineations[pair[1]]
    d = dice(a.hl, b.hl)
    return build_consensus(a, b), PairSelection(pair, d, d >= threshold)


def training_target(cs: ConsensusSet, strategy, rng: np.random.Generator | None = None):
    """Training target for a GT strategy.

    Returns a single binary mask for the four spot strategies and for
    ``RANDOM`` (drawn uniformly with ``rng``), the soft mask for ``AVERAGE``,
    and the tuple of all four masks for ``MULTIPLE``.
    """
    strategy = GtStrategy(strategy)
    if strategy in SINGLE_MASK_STRATEGIES or strategy is GtStrategy.AVERAGE:
        return cs.get(strategy)
    if strategy is GtStrategy.MULTIPLE:
        return cs.masks()
    if rng is None:
        raise ValidationError("the random strategy needs a generator")
    return cs.masks()[int(rng.integers(4))]


def born_consensus(masks: Sequence[np.ndarray]) -> np.ndarray:
    """Pixelwise intersection of three delineations."""
    if len(masks) != 3:
        raise ValidationError(f"intersection consensus expects 3 masks, got {len(masks)}")
    return argos_consensus(masks, quorum=3)


def argos_consensus(masks: Sequence[np.ndarray], quorum: int) -> np.ndarray:
    """Pixels marked by at least ``quorum`` of the experts."""
    masks = [as_binary_mask(m) for m in masks]
    if not masks:
        raise ValidationError("no masks given")
    if not 1 <= quorum <= len(masks):
        raise ValidationError(f"quorum {quorum} not in 1..{len(masks)}")
    check_same_shape(*masks)
    votes = np.sum(np.stack(masks).astype(np.int32), axis=0)
    return votes >= quorum
