"""Tree-size choice and replanning triggers.

The scheduler scans the expected-length curve once and picks the size with the
best speed value l(size) / T_est(size); replanning fires on batch resizes,
sequence-length drift, or a fixed iteration period.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .cost_model import CostModel, InsufficientDataError


@dataclass(frozen=True)
class SchedulerConfig:
    resize_batch_delta: int = 1
    resize_seqlen_delta: int = 256
    replan_period: int = 16
    size_candidates: tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64)

    def __post_init__(self) -> None:
        if self.resize_batch_delta < 1 or self.resize_seqlen_delta < 1 or self.replan_period < 1:
            raise ValueError("replan thresholds must be positive")
        if not self.size_candidates or any(s < 1 for s in self.size_candidates):
            raise ValueError("size candidates must be positive")


@dataclass(frozen=True)
class RuntimeSnapshot:
    """What the replan decision looks at: current vs last-planned shape."""

    batch: int
    mean_seqlen: float
    iterations_since_plan: int
    planned_batch: int
    planned_seqlen: float


def choose_size(
    l_curve: Mapping[int, float],
    cost: CostModel,
    include_bonus: bool = False,
) -> int:
    """Size with the best speed value; falls back to the smallest candidate.

    Ties break to the smaller size (ascending scan, strict improvement only).
    Sizes whose time estimate is unusable or non-positive are skipped; if none
    is usable the smallest size in the curve wins (plain continuation).
    """
    if not l_curve:
        raise ValueError("l_curve is empty")
    best_size = None
    best_value = None
    for size in sorted(l_curve):
        try:
            t = cost.estimate(size)
        except InsufficientDataError:
            break
        if t <= 0.0:
            continue
        value = (l_curve[size] + (1.0 if include_bonus else 0.0)) / t
        if best_value is None or value > best_value:
            best_value = value
            best_size = size
    if best_size is None:
        return min(l_curve)
    return best_size


def should_replan(snapshot: RuntimeSnapshot, config: SchedulerConfig) -> bool:
    if abs(snapshot.batch - snapshot.planned_batch) >= config.resize_batch_delta:
        return True
    if abs(snapshot.mean_seqlen - snapshot.planned_seqlen) >= config.resize_seqlen_delta:
        return True
    return snapshot.iterations_since_plan >= config.replan_period
