"""Per-frame feature extraction: the LSF4 set for classification, MAV for control.

The flattened 24-dim classification vector is ordered channel-major,
feature-minor: (ch0 L-scale, ch0 MFL, ch0 MSR, ch0 WAMP, ch1 L-scale, ...).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

LSF4_NAMES = ("l_scale", "mfl", "msr", "wamp")
FEATURE_ORDER = "lsf4:channel-major"
_MFL_FLOOR = 1e-12
_STD_FLOOR = 1e-8


def mav(window: np.ndarray) -> float:
    """Mean absolute value."""
    w = np.asarray(window, dtype=float)
    if w.size == 0:
        raise ValueError("empty window")
    return float(np.mean(np.abs(w)))


def l_scale(window: np.ndarray) -> float:
    """Unbiased sample second L-moment: 2*b1 - b0 over the order statistics."""
    w = np.sort(np.asarray(window, dtype=float))
    n = w.size
    if n < 2:
        raise ValueError("l_scale needs at least 2 samples")
    i = np.arange(1, n + 1)
    b0 = np.mean(w)
    b1 = np.sum(w * (i - 1)) / (n * (n - 1))
    return float(2 * b1 - b0)


def mfl(window: np.ndarray) -> float:
    """Maximum fractal length: log10 of the first-difference Euclidean norm."""
    w = np.asarray(window, dtype=float)
    if w.size < 2:
        raise ValueError("mfl needs at least 2 samples")
    d = np.diff(w)
    return float(np.log10(max(np.sqrt(np.sum(d * d)), _MFL_FLOOR)))


def msr(window: np.ndarray) -> float:
    """Mean square root of the sample magnitudes."""
    w = np.asarray(window, dtype=float)
    if w.size == 0:
        raise ValueError("empty window")
    return float(np.mean(np.sqrt(np.abs(w))))


def wamp(window: np.ndarray, threshold: float) -> int:
    """Willison amplitude: count of first differences exceeding the threshold."""
    w = np.asarray(window, dtype=float)
    if w.size < 2:
        raise ValueError("wamp needs at least 2 samples")
    if threshold <= 0:
        raise ValueError("wamp threshold must be > 0")
    return int(np.sum(np.abs(np.diff(w)) > threshold))


@dataclass
class FrameSequence:
    """Ordered feature frames for one trial.

    lsf4: (n, channels, 4), mav: (n, channels), starts: (n,) sample indices.
    """

    lsf4: np.ndarray
    mav: np.ndarray
    starts: np.ndarray
    frame_len: int
    sample_rate: int
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.starts):
            raise ValueError("label count must equal frame count")

    def __len__(self) -> int:
        return self.lsf4.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        """Flattened (n, channels*4) classification features."""
        return self.lsf4.reshape(len(self), -1)

    @property
    def mav_sum(self) -> np.ndarray:
        """Summed-channel MAV per frame, the proportional-control drive."""
        return self.mav.sum(axis=1)

    @property
    def times(self) -> np.ndarray:
        """Frame-center timestamps in seconds."""
        return (self.starts + self.frame_len / 2) / self.sample_rate

    def with_labels(self, labels: np.ndarray) -> "FrameSequence":
        return replace(self, labels=np.asarray(labels))


def _lsf4_batch(frames: np.ndarray, wamp_threshold: float) -> np.ndarray:
    """Vectorized LSF4 over (n, channels, frame_len); matches the scalar ops."""
    n_len = frames.shape[-1]
    s = np.sort(frames, axis=-1)
    i = np.arange(1, n_len + 1)
    coef = (2 * i - n_len - 1) / (n_len * (n_len - 1))
    ls = s @ coef

    d = np.diff(frames, axis=-1)
    mfl_v = np.log10(np.maximum(np.sqrt(np.sum(d * d, axis=-1)), _MFL_FLOOR))
    msr_v = np.mean(np.sqrt(np.abs(frames)), axis=-1)
    wamp_v = np.sum(np.abs(d) > wamp_threshold, axis=-1).astype(float)
    return np.stack([ls, mfl_v, msr_v, wamp_v], axis=-1)


def extract_features(
    frames: np.ndarray,
    starts: np.ndarray,
    wamp_threshold: float,
    sample_rate: int = 2000,
) -> FrameSequence:
    """Extract LSF4 and MAV from framed signal (n, channels, frame_len)."""
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 3:
        raise ValueError("frames must be (n, channels, frame_len)")
    return FrameSequence(
        lsf4=_lsf4_batch(frames, wamp_threshold),
        mav=np.mean(np.abs(frames), axis=-1),
        starts=np.asarray(starts),
        frame_len=frames.shape[-1],
        sample_rate=sample_rate,
    )


@dataclass(frozen=True)
class Standardizer:
    """Per-feature affine transform to zero mean, unit standard deviation."""

    mean: np.ndarray
    std: np.ndarray


def fit_standardizer(features: np.ndarray) -> Standardizer:
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("standardizer needs at least 2 training frames")
    return Standardizer(
        mean=x.mean(axis=0), std=np.maximum(x.std(axis=0), _STD_FLOOR)
    )


def apply_standardizer(s: Standardizer, features: np.ndarray) -> np.ndarray:
    return (np.asarray(features, dtype=float) - s.mean) / s.std


def estimate_wamp_threshold(
    filtered_signals: list[np.ndarray],
    timelines: list,
    sample_rate: int = 2000,
    settle_s: float = 0.75,
) -> float:
    """Default WAMP threshold: 2x the standard deviation of NM-prompted signal.

    The first ``settle_s`` of each NM prompt is skipped; in continuous trials
    the preceding contraction is still fading out there.
    """
    from .dataset import MotionClass

    chunks = []
    for signal, timeline in zip(filtered_signals, timelines):
        for p in timeline.prompts:
            if p.cls == MotionClass.NM:
                a = int(round((p.onset + min(settle_s, 0.5 * p.duration)) * sample_rate))
                b = int(round((p.onset + p.duration) * sample_rate))
                chunks.append(np.asarray(signal)[:, a:b].ravel())
    if not chunks:
        raise ValueError("no NM prompts found to estimate the WAMP threshold")
    return float(2.0 * np.std(np.concatenate(chunks)))
