"""Decision post-processing and proportional velocity control.

Low-confidence decisions are rejected (mapped to NM, cursor holds).
Accepted active decisions drive velocity from the summed-channel MAV,
normalized by class-specific percentile bounds learned from training
predictions and squashed through a logistic transfer function.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import ACTIVE_CLASSES, MotionClass
from .models import Decision, Decisions


@dataclass(frozen=True)
class RejectionConfig:
    threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")


@dataclass
class PcMap:
    """Per-class (low, high) summed-MAV percentile bounds plus sigmoid shape."""

    bounds: dict[int, tuple[float, float]]
    sigmoid_a: float = 10.0
    sigmoid_x0: float = 0.5
    percentiles: tuple[float, float] = (10.0, 95.0)


@dataclass
class ControlCommand:
    cls: int
    velocity: float
    rejected: bool = False


@dataclass
class DecisionStream:
    """Per-frame post-processed control output."""

    classes: np.ndarray
    confidence: np.ndarray
    velocity: np.ndarray
    rejected: np.ndarray

    def __len__(self) -> int:
        return len(self.classes)


def reject(decision: Decision, cfg: RejectionConfig) -> Decision:
    """Map a low-confidence decision to NM; otherwise pass through unchanged."""
    if decision.confidence < cfg.threshold:
        return Decision(cls=int(MotionClass.NM), confidence=decision.confidence,
                        posterior=decision.posterior)
    return decision


def reject_batch(decisions: Decisions, cfg: RejectionConfig) -> tuple[np.ndarray, np.ndarray]:
    """(post-rejection classes, rejected mask) for a decision batch."""
    rejected = decisions.confidence < cfg.threshold
    classes = decisions.classes.copy()
    classes[rejected] = int(MotionClass.NM)
    return classes, rejected


def fit_pc_map(
    mav_sums: np.ndarray,
    predicted: np.ndarray,
    percentiles: tuple[float, float] = (10.0, 95.0),
    min_count: int = 20,
    sigmoid_a: float = 10.0,
    sigmoid_x0: float = 0.5,
) -> PcMap:
    """Class-specific normalization bounds from the classifier's own training predictions.

    For each active class, collects the summed-channel MAV of frames the
    classifier predicted as that class and stores the chosen percentiles.
    Each classifier therefore gets its own map.
    """
    mav_sums = np.asarray(mav_sums, dtype=float)
    predicted = np.asarray(predicted)
    bounds: dict[int, tuple[float, float]] = {}
    for cls in ACTIVE_CLASSES:
        values = mav_sums[predicted == int(cls)]
        if values.size < min_count:
            raise ValueError(
                f"class {cls.name} predicted only {values.size} times "
                f"(need {min_count}) in training data"
            )
        lo, hi = np.percentile(values, percentiles)
        if hi <= lo:
            raise ValueError(f"class {cls.name} has degenerate bounds ({lo} == {hi})")
        bounds[int(cls)] = (float(lo), float(hi))
    return PcMap(bounds=bounds, sigmoid_a=sigmoid_a, sigmoid_x0=sigmoid_x0,
                 percentiles=percentiles)


def pc_value(mav_sum: float, cls: int, pc_map: PcMap) -> float:
    """Normalized velocity in [0, 1]; NM maps to exactly 0."""
    if cls == int(MotionClass.NM):
        return 0.0
    if cls not in pc_map.bounds:
        raise KeyError(f"class {cls} not present in the proportional-control map")
    lo, hi = pc_map.bounds[cls]
    x = float(np.clip((mav_sum - lo) / (hi - lo), 0.0, 1.0))
    return float(1.0 / (1.0 + np.exp(-pc_map.sigmoid_a * (x - pc_map.sigmoid_x0))))


def decision_stream(
    decisions: Decisions,
    mav_sums: np.ndarray,
    pc_map: PcMap,
    rejection: RejectionConfig,
) -> DecisionStream:
    """Full post-processing of a decision batch: rejection then proportional control."""
    classes, rejected = reject_batch(decisions, rejection)
    velocity = np.array(
        [pc_value(m, int(c), pc_map) for m, c in zip(mav_sums, classes)]
    )
    return DecisionStream(
        classes=classes,
        confidence=decisions.confidence.copy(),
        velocity=velocity,
        rejected=rejected,
    )


def normalize_speed(ranges: dict[str, float], t_ref: float = 2.0) -> dict[str, float]:
    """Per-axis gain (units/s) so a full-range traversal at velocity 1 takes t_ref."""
    if t_ref <= 0:
        raise ValueError("t_ref must be > 0")
    gains = {}
    for axis, extent in ranges.items():
        if extent <= 0:
            raise ValueError(f"axis {axis!r} has non-positive range {extent}")
        gains[axis] = extent / t_ref
    return gains
