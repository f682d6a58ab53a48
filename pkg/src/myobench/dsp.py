"""Zero-phase filtering and overlapping-frame segmentation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.signal


@dataclass(frozen=True)
class FilterSpec:
    """Band-pass plus mains-notch filter chain parameters."""

    band_low: float = 20.0
    band_high: float = 450.0
    band_order: int = 4
    notch_freq: float = 60.0
    notch_bandwidth: float = 2.0  # Q = notch_freq / bandwidth = 30

    def __post_init__(self):
        if self.band_order < 2 or self.band_order % 2:
            raise ValueError("band_order must be even and >= 2")


@dataclass(frozen=True)
class FrameSpec:
    """Overlapping analysis frames, in samples."""

    frame_len: int = 324  # 162 ms at 2 kHz
    frame_inc: int = 27  # 13.5 ms at 2 kHz, the Trigno packet rate

    def __post_init__(self):
        if self.frame_inc < 1:
            raise ValueError("frame_inc must be >= 1")
        if self.frame_len < self.frame_inc:
            raise ValueError("frame_len must be >= frame_inc")

    @classmethod
    def from_ms(cls, duration_ms: float = 162.0, increment_ms: float = 13.5, fs: int = 2000):
        return cls(
            frame_len=int(round(duration_ms * fs / 1000)),
            frame_inc=int(round(increment_ms * fs / 1000)),
        )


def design_bandpass(spec: FilterSpec, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """Butterworth band-pass of overall order ``spec.band_order`` as (b, a)."""
    if not 0 < spec.band_low < spec.band_high < fs / 2:
        raise ValueError(
            f"band edges ({spec.band_low}, {spec.band_high}) invalid for fs={fs}"
        )
    b, a = scipy.signal.butter(
        spec.band_order // 2, [spec.band_low, spec.band_high], btype="bandpass", fs=fs
    )
    if np.any(np.abs(np.roots(a)) >= 1.0):
        raise ValueError("designed band-pass is unstable")
    return b, a


def design_notch(spec: FilterSpec, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """Second-order IIR notch at ``spec.notch_freq``."""
    if not 0 < spec.notch_freq < fs / 2:
        raise ValueError(f"notch frequency {spec.notch_freq} invalid for fs={fs}")
    q = spec.notch_freq / spec.notch_bandwidth
    return scipy.signal.iirnotch(spec.notch_freq, q, fs=fs)


def filtfilt(coeffs: tuple[np.ndarray, np.ndarray], signal: np.ndarray) -> np.ndarray:
    """Forward-backward filtering with zero phase distortion.

    Uses odd-symmetric edge extension of length 3*(max(len(a), len(b)) - 1),
    the convention of the widely used zero-phase implementations, so results
    are comparable across toolchains. The two pass orders are averaged, which
    leaves the interior and the |H|^2 magnitude response unchanged but makes
    the edge handling exactly time-reversal symmetric.
    """
    b, a = coeffs
    padlen = 3 * (max(len(a), len(b)) - 1)
    x = np.asarray(signal, dtype=float)
    if x.shape[-1] <= padlen:
        raise ValueError(f"signal length {x.shape[-1]} too short for pad length {padlen}")
    fwd = scipy.signal.filtfilt(b, a, x, axis=-1, padtype="odd", padlen=padlen)
    rev = scipy.signal.filtfilt(b, a, x[..., ::-1], axis=-1, padtype="odd", padlen=padlen)
    return (fwd + rev[..., ::-1]) / 2.0


def frequency_response(
    coeffs: tuple[np.ndarray, np.ndarray], freqs: np.ndarray, fs: float
) -> np.ndarray:
    """Single-pass magnitude response |H(f)| at the given frequencies."""
    b, a = coeffs
    _, h = scipy.signal.freqz(b, a, worN=np.asarray(freqs, dtype=float), fs=fs)
    return np.abs(h)


def apply_filter_chain(signal: np.ndarray, spec: FilterSpec, fs: float) -> np.ndarray:
    """Zero-phase band-pass followed by zero-phase notch."""
    out = filtfilt(design_bandpass(spec, fs), signal)
    return filtfilt(design_notch(spec, fs), out)


def frame_signal(signal: np.ndarray, spec: FrameSpec) -> tuple[np.ndarray, np.ndarray]:
    """Split (channels x samples) into overlapping frames.

    Returns (frames, starts) where frames has shape
    (n_frames, channels, frame_len) and frame k starts at k * frame_inc.
    The frames are a read-only view, not a copy.
    """
    x = np.asarray(signal)
    if x.ndim == 1:
        x = x[None, :]
    n = x.shape[-1]
    if n < spec.frame_len:
        raise ValueError(f"signal length {n} shorter than one frame ({spec.frame_len})")
    windows = np.lib.stride_tricks.sliding_window_view(x, spec.frame_len, axis=-1)
    frames = windows[:, :: spec.frame_inc].transpose(1, 0, 2)
    starts = np.arange(frames.shape[0]) * spec.frame_inc
    return frames, starts
