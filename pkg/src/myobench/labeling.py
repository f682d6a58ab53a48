"""Frame labeling for ramp and continuous dynamic trials.

A frame's timestamp is its center, so a window spanning a class boundary is
attributed symmetrically. Continuous trials shift every prompt boundary by a
fixed reaction delay, the assumed lag between a visual prompt and the user
actually initiating the contraction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import MotionClass, PromptTimeline
from .features import FrameSequence


@dataclass(frozen=True)
class CrtConfig:
    """Choice-reaction-time compensation for continuous-trial labels."""

    delay: float = 0.464

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("delay must be >= 0")


class LabelingError(ValueError):
    pass


def _prompt_classes_at(times: np.ndarray, timeline: PromptTimeline, boundary_shift: float):
    onsets = timeline.onsets
    if np.any(times < onsets[0]) or np.any(times > timeline.span):
        raise LabelingError("frames fall outside the timeline span")
    idx = np.searchsorted(onsets + boundary_shift, times, side="right") - 1
    # Frames before the first shifted boundary belong to the first prompt.
    idx = np.clip(idx, 0, len(onsets) - 1)
    return timeline.classes[idx]


def label_ramp(
    seq: FrameSequence, timeline: PromptTimeline, nm_threshold: float
) -> FrameSequence:
    """Label by prompted class; relabel low-activity frames as NM.

    Frames whose summed-channel MAV falls below ``nm_threshold`` are treated
    as not-yet-contracting and assigned NM, whatever the prompt said.
    """
    labels = _prompt_classes_at(seq.times, timeline, boundary_shift=0.0)
    labels = labels.copy()
    labels[seq.mav_sum < nm_threshold] = int(MotionClass.NM)
    return seq.with_labels(labels)


def label_continuous(
    seq: FrameSequence, timeline: PromptTimeline, crt: CrtConfig = CrtConfig()
) -> FrameSequence:
    """Label with every class boundary delayed by the reaction time."""
    if len(timeline) > 1:
        shortest = min(p.duration for p in timeline.prompts)
        if crt.delay >= shortest:
            raise LabelingError(
                f"delay {crt.delay} s exceeds the shortest prompt ({shortest} s)"
            )
    labels = _prompt_classes_at(seq.times, timeline, boundary_shift=crt.delay)
    return seq.with_labels(labels)


def default_nm_threshold(seq: FrameSequence, timeline: PromptTimeline) -> float:
    """3x the mean summed MAV of NM-prompted frames in the same trial."""
    prompted = _prompt_classes_at(seq.times, timeline, boundary_shift=0.0)
    nm = prompted == int(MotionClass.NM)
    if not np.any(nm):
        raise LabelingError("trial has no NM prompts to estimate the threshold")
    return float(3.0 * seq.mav_sum[nm].mean())
