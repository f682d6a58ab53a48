"""Synthetic sEMG sessions: prompt protocols, signal synthesis, and file I/O.

A session is a multichannel recording plus the timeline of visual prompts
shown while it was recorded. Real recordings are replaced here by a
synthetic generator: amplitude-modulated band-limited Gaussian noise whose
per-channel envelope follows a per-class gain pattern.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from . import dsp

SAMPLE_RATE = 2000
N_CHANNELS = 6
N_CLASSES = 7


class MotionClass(IntEnum):
    """The seven motion classes; NM is the inactive (rest) class."""

    WF = 0  # wrist flexion
    WE = 1  # wrist extension
    WP = 2  # wrist pronation
    WS = 3  # wrist supination
    HC = 4  # hand close
    HO = 5  # hand open
    NM = 6  # no movement


ACTIVE_CLASSES = tuple(c for c in MotionClass if c != MotionClass.NM)


class SessionFormatError(ValueError):
    """Base class for session-file parsing failures."""


class MalformedHeaderError(SessionFormatError):
    pass


class ChannelCountError(SessionFormatError):
    pass


class TruncatedPayloadError(SessionFormatError):
    pass


@dataclass(frozen=True)
class Prompt:
    cls: MotionClass
    onset: float
    duration: float


@dataclass(frozen=True)
class PromptTimeline:
    """Ordered, non-overlapping prompts with strictly increasing onsets."""

    prompts: tuple[Prompt, ...]

    def __post_init__(self):
        prev_end = -np.inf
        prev_onset = -np.inf
        for p in self.prompts:
            if p.duration <= 0:
                raise ValueError(f"prompt duration must be > 0, got {p.duration}")
            if p.onset <= prev_onset:
                raise ValueError("prompt onsets must be strictly increasing")
            if p.onset < prev_end:
                raise ValueError("prompts must not overlap")
            prev_onset = p.onset
            prev_end = p.onset + p.duration

    @property
    def span(self) -> float:
        last = self.prompts[-1]
        return last.onset + last.duration

    @property
    def onsets(self) -> np.ndarray:
        return np.array([p.onset for p in self.prompts])

    @property
    def classes(self) -> np.ndarray:
        return np.array([int(p.cls) for p in self.prompts])

    def __len__(self) -> int:
        return len(self.prompts)


@dataclass(eq=False)
class EmgSession:
    """Multichannel signal (channels x samples, float32) plus its prompt timeline."""

    signal: np.ndarray
    sample_rate: int
    timeline: PromptTimeline
    kind: str  # ramp | continuous | fitts

    def __post_init__(self):
        if self.signal.ndim != 2 or self.signal.shape[0] != N_CHANNELS:
            raise ValueError(f"signal must be {N_CHANNELS} x samples")
        if self.kind not in ("ramp", "continuous", "fitts"):
            raise ValueError(f"unknown session kind {self.kind!r}")
        if self.signal.shape[1] < int(self.timeline.span * self.sample_rate):
            raise ValueError("signal does not cover the timeline span")

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmgSession):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.sample_rate == other.sample_rate
            and self.timeline == other.timeline
            and self.signal.dtype == other.signal.dtype
            and np.array_equal(self.signal, other.signal)
        )


def default_gain_matrix(gain: float = 0.25, channel_spread: float = 1.0) -> np.ndarray:
    """Circular tuning curve per class: one dominant channel with graded crosstalk.

    The overlap makes adjacent classes genuinely confusable, the way
    neighboring forearm muscles share surface electrodes.
    """
    g = np.zeros((N_CLASSES, N_CHANNELS))
    for c in ACTIVE_CLASSES:
        for ch in range(N_CHANNELS):
            dist = min(abs(ch - int(c)), N_CHANNELS - abs(ch - int(c)))
            g[c, ch] = gain * np.exp(-(dist**2) / (2 * channel_spread**2))
    return g


@dataclass(frozen=True)
class SynthProfile:
    """Parameters of the synthetic EMG generator.

    The NM row of ``gain_matrix`` must be zero; every active class must have
    at least one channel gain above the noise floor.
    """

    gain_matrix: np.ndarray = field(default_factory=default_gain_matrix)
    noise_floor: float = 0.005
    transition_time: float = 0.25  # used by the online stream
    # Prompted class changes vary in speed and briefly pass through
    # co-contraction of both muscle groups.
    transition_range: tuple[float, float] = (0.25, 0.7)
    cocontraction_max: float = 0.3
    rng_seed: int = 0
    steady_jitter: float = 0.05  # slow fractional wobble of held intensity
    gain_jitter: float = 0.10  # per-trial uniform gain perturbation
    reaction_mean: float = 0.464
    reaction_sd: float = 0.05
    reaction_bounds: tuple[float, float] = (0.3, 0.7)
    # Held "moderate" contractions vary from prompt to prompt; this range
    # also gives the proportional-control percentiles a usable span.
    steady_intensity_range: tuple[float, float] = (0.35, 1.0)
    # Brief involuntary co-activations of other muscles; single frames become
    # ambiguous while longer temporal context stays informative.
    burst_rate_hz: float = 0.8
    burst_weight: tuple[float, float] = (0.15, 0.4)
    burst_duration: tuple[float, float] = (0.08, 0.2)
    # Per-channel gain drift between recording blocks (electrode shift,
    # posture); applied to sessions recorded after the ramp block.
    channel_drift: np.ndarray | None = None
    drift_sd: float = 0.18
    # Slow wander of the spatial activation pattern within a contraction
    # (motor-unit rotation, micro-shifts): log-normal per-channel modulation.
    pattern_sd: float = 0.22
    pattern_bandwidth_hz: float = 1.5

    def __post_init__(self):
        g = np.asarray(self.gain_matrix, dtype=float)
        if g.shape != (N_CLASSES, N_CHANNELS):
            raise ValueError(f"gain_matrix must be {N_CLASSES} x {N_CHANNELS}")
        if np.any(g < 0):
            raise ValueError("gain_matrix entries must be nonnegative")
        if np.any(g[MotionClass.NM] != 0):
            raise ValueError("NM row of gain_matrix must be all zeros")
        for c in ACTIVE_CLASSES:
            if g[c].max() <= self.noise_floor:
                raise ValueError(f"class {MotionClass(c).name} has no gain above the noise floor")
        object.__setattr__(self, "gain_matrix", g)
        if self.channel_drift is not None:
            drift = np.asarray(self.channel_drift, dtype=float)
            if drift.shape != (N_CHANNELS,) or np.any(drift <= 0):
                raise ValueError(f"channel_drift must be {N_CHANNELS} positive factors")
            object.__setattr__(self, "channel_drift", drift)

    def with_seed(self, seed: int) -> "SynthProfile":
        return dataclasses.replace(self, rng_seed=seed)

    def with_drift(self, drift: np.ndarray) -> "SynthProfile":
        return dataclasses.replace(self, channel_drift=np.asarray(drift, dtype=float))

    def effective_gains(self) -> np.ndarray:
        if self.channel_drift is None:
            return self.gain_matrix
        return self.gain_matrix * self.channel_drift[None, :]


def make_ramp_protocol(n_trials: int, prompt_duration: float = 3.0) -> list[PromptTimeline]:
    """Ramp trials: the 7 classes once each, fixed order, rest periods not recorded."""
    if n_trials < 0:
        raise ValueError("n_trials must be >= 0")
    timelines = []
    for _ in range(n_trials):
        prompts = tuple(
            Prompt(cls, onset=i * prompt_duration, duration=prompt_duration)
            for i, cls in enumerate(MotionClass)
        )
        timelines.append(PromptTimeline(prompts))
    return timelines


def _random_transition_sequence(rng: np.random.Generator) -> list[MotionClass]:
    """Random ordering of 43 prompts covering every ordered class pair exactly once.

    The pairs form the edge set of the complete digraph on 7 classes, which is
    Eulerian, so Hierholzer's algorithm always yields a valid circuit.
    """
    classes = list(MotionClass)
    remaining = {c: [d for d in classes if d != c] for c in classes}
    for c in classes:
        idx = rng.permutation(len(remaining[c]))
        remaining[c] = [remaining[c][i] for i in idx]
    stack = [classes[int(rng.integers(len(classes)))]]
    circuit: list[MotionClass] = []
    while stack:
        v = stack[-1]
        if remaining[v]:
            stack.append(remaining[v].pop())
        else:
            circuit.append(stack.pop())
    circuit.reverse()
    if len(circuit) != N_CLASSES * (N_CLASSES - 1) + 1:
        raise RuntimeError("internal error: transition circuit construction failed")
    return circuit


def make_continuous_protocol(
    n_trials: int, prompt_duration: float = 3.0, seed: int = 0
) -> list[PromptTimeline]:
    """Continuous dynamic trials: 43 prompts containing all 42 ordered class pairs."""
    if n_trials < 0:
        raise ValueError("n_trials must be >= 0")
    timelines = []
    for trial in range(n_trials):
        rng = np.random.default_rng(np.random.SeedSequence((seed, trial)))
        order = _random_transition_sequence(rng)
        prompts = tuple(
            Prompt(cls, onset=i * prompt_duration, duration=prompt_duration)
            for i, cls in enumerate(order)
        )
        timelines.append(PromptTimeline(prompts))
    return timelines


def _truncated_normal(rng: np.random.Generator, mean, sd, lo, hi) -> float:
    for _ in range(1000):
        x = rng.normal(mean, sd)
        if lo <= x <= hi:
            return float(x)
    return float(np.clip(mean, lo, hi))


def _bandlimited_unit_noise(rng: np.random.Generator, n_samples: int, fs: int) -> np.ndarray:
    """White noise shaped to the 20-450 Hz band, rescaled to unit variance."""
    b, a = dsp.design_bandpass(dsp.FilterSpec(), fs)
    white = rng.standard_normal((N_CHANNELS, n_samples))
    shaped = lfilter(b, a, white, axis=1)
    impulse = np.zeros(2048)
    impulse[0] = 1.0
    energy = np.sum(lfilter(b, a, impulse) ** 2)
    return shaped / np.sqrt(energy)


def _slow_noise(
    rng: np.random.Generator, shape: tuple, fs: int, bandwidth_hz: float = 2.0
) -> np.ndarray:
    """Unit-variance noise low-passed to the given bandwidth, along axis 0."""
    from scipy.signal import butter

    b, a = butter(2, bandwidth_hz, btype="low", fs=fs)
    raw = lfilter(b, a, rng.standard_normal(shape), axis=0)
    impulse = np.zeros(8192)
    impulse[0] = 1.0
    energy = np.sum(lfilter(b, a, impulse) ** 2)
    return raw / np.sqrt(energy)


def _onehot(cls: int) -> np.ndarray:
    w = np.zeros(N_CLASSES)
    w[cls] = 1.0
    return w


def _raised_cosine(n: int) -> np.ndarray:
    return 0.5 * (1 - np.cos(2 * np.pi * np.arange(n) / max(n - 1, 1)))


def _coactivation_bursts(
    rng: np.random.Generator, n_samples: int, fs: int, profile: SynthProfile
) -> np.ndarray:
    """Additive class-weight bursts from involuntary co-contractions."""
    extra = np.zeros((n_samples, N_CLASSES))
    count = rng.poisson(profile.burst_rate_hz * n_samples / fs)
    for _ in range(count):
        start = int(rng.integers(0, n_samples))
        length = int(rng.uniform(*profile.burst_duration) * fs)
        cls = int(rng.choice(ACTIVE_CLASSES))
        weight = rng.uniform(*profile.burst_weight)
        end = min(start + length, n_samples)
        extra[start:end, cls] += weight * _raised_cosine(length)[: end - start]
    return extra


def _class_weights_and_intent(
    timeline: PromptTimeline, profile: SynthProfile, kind: str, rng: np.random.Generator, fs: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample class mixture weights (n x 7) and ground-truth intent class (n,)."""
    n = int(round(timeline.span * fs))
    weights = np.zeros((n, N_CLASSES))
    intent = np.full(n, int(MotionClass.NM), dtype=np.int8)

    if kind == "ramp":
        for p in timeline.prompts:
            a = int(round(p.onset * fs))
            b = min(int(round((p.onset + p.duration) * fs)), n)
            ramp = np.arange(b - a) / max(b - a - 1, 1)
            weights[a:b] = ramp[:, None] * _onehot(p.cls)[None, :]
            intent[a:b] = int(p.cls)
        return weights, intent

    # Continuous: cross-fade between class patterns after a per-prompt
    # reaction delay; the user holds each contraction until the next switch.
    # Transition speed varies per switch and both patterns briefly co-contract.
    events = []
    for p in timeline.prompts:
        delay = _truncated_normal(
            rng, profile.reaction_mean, profile.reaction_sd, *profile.reaction_bounds
        )
        intensity = rng.uniform(*profile.steady_intensity_range)
        fade_len = max(int(round(rng.uniform(*profile.transition_range) * fs)), 1)
        bump = rng.uniform(0.0, profile.cocontraction_max)
        start = int(round((p.onset + delay) * fs))
        events.append((min(start, n - 1), int(p.cls), intensity, fade_len, bump))

    current = _onehot(MotionClass.NM)
    weights[: events[0][0]] = current
    for k, (start, cls, intensity, fade_len, bump) in enumerate(events):
        end = events[k + 1][0] if k + 1 < len(events) else n
        t = np.arange(end - start)
        alpha = np.clip(t / fade_len, 0.0, 1.0)
        target = _onehot(cls) * intensity
        blend = (1 - alpha)[:, None] * current + alpha[:, None] * target
        overshoot = bump * np.sin(np.pi * alpha)[:, None] * ((current + target) / 2)[None, :]
        weights[start:end] = blend + overshoot
        intent[start:end] = cls
        if end > start:
            current = weights[end - 1].copy()
    return weights, intent


def synthesize_with_intent(
    timeline: PromptTimeline, profile: SynthProfile, kind: str
) -> tuple[EmgSession, np.ndarray]:
    """Synthesize a session and return the per-sample ground-truth intent class.

    Each channel is zero-mean band-limited noise whose MAV envelope is
    ``noise_floor + gain[class][channel] * intensity(t)``. Output is
    deterministic for a fixed ``profile.rng_seed``.
    """
    fs = SAMPLE_RATE
    rng = np.random.default_rng(profile.rng_seed)
    gains = profile.effective_gains().copy()
    jit = rng.uniform(1 - profile.gain_jitter, 1 + profile.gain_jitter, gains.shape)
    gains = gains * jit

    weights, intent = _class_weights_and_intent(timeline, profile, kind, rng, fs)
    n = weights.shape[0]
    weights = weights + _coactivation_bursts(rng, n, fs, profile)
    wobble = 1.0 + profile.steady_jitter * _slow_noise(rng, (n,), fs)
    pattern = np.exp(
        profile.pattern_sd * _slow_noise(rng, (n, N_CHANNELS), fs, profile.pattern_bandwidth_hz)
    )
    envelope = profile.noise_floor + (weights @ gains) * pattern * wobble[:, None]  # (n, ch)

    noise = _bandlimited_unit_noise(rng, n, fs)
    # E|x| of a Gaussian with std s is s*sqrt(2/pi); scale so MAV tracks the envelope.
    signal = (noise * envelope.T * np.sqrt(np.pi / 2)).astype(np.float32)
    session = EmgSession(signal=signal, sample_rate=fs, timeline=timeline, kind=kind)
    return session, intent


def synthesize_session(timeline: PromptTimeline, profile: SynthProfile, kind: str) -> EmgSession:
    session, _ = synthesize_with_intent(timeline, profile, kind)
    return session


class EmgStream:
    """Incremental synthesizer for closed-loop use.

    Emits the signal chunk by chunk while the commanded (class, intensity)
    target changes over time; class switches cross-fade over the profile's
    transition time, like the offline generator.
    """

    def __init__(self, profile: SynthProfile, seed: int, fs: int = SAMPLE_RATE):
        self.profile = profile
        self.fs = fs
        self._rng = np.random.default_rng(seed)
        b, a = dsp.design_bandpass(dsp.FilterSpec(), fs)
        self._ba = (b, a)
        impulse = np.zeros(2048)
        impulse[0] = 1.0
        self._norm = 1.0 / np.sqrt(np.sum(lfilter(b, a, impulse) ** 2))
        self._zi = np.zeros((N_CHANNELS, max(len(a), len(b)) - 1))
        self._w = _onehot(MotionClass.NM) * 0.0
        self._target = self._w.copy()
        self._fade_from = self._w.copy()
        self._fade_pos = 0
        self._fade_len = max(int(round(profile.transition_time * fs)), 1)
        self._jitter = 0.0
        # AR(1) poles matching the wobble and pattern bandwidths at the chunk rate.
        self._jitter_rho = float(np.exp(-2 * np.pi * 2.0 / fs * 27))
        self._pattern = np.zeros(N_CHANNELS)
        self._pattern_rho = float(np.exp(-2 * np.pi * profile.pattern_bandwidth_hz / fs * 27))
        self._bursts: list[list] = []  # [class, weight, length, position]

    def set_intent(self, cls: MotionClass, intensity: float) -> None:
        target = _onehot(cls) * float(np.clip(intensity, 0.0, 1.0))
        if not np.array_equal(target, self._target):
            self._fade_from = self._current_weights()
            self._target = target
            self._fade_pos = 0

    def _current_weights(self) -> np.ndarray:
        alpha = min(self._fade_pos / self._fade_len, 1.0)
        return (1 - alpha) * self._fade_from + alpha * self._target

    def _burst_weights(self, n_samples: int) -> np.ndarray:
        extra = np.zeros((n_samples, N_CLASSES))
        profile = self.profile
        if self._rng.random() < profile.burst_rate_hz * n_samples / self.fs:
            length = int(self._rng.uniform(*profile.burst_duration) * self.fs)
            cls = int(self._rng.choice(ACTIVE_CLASSES))
            weight = float(self._rng.uniform(*profile.burst_weight))
            self._bursts.append([cls, weight, length, 0])
        alive = []
        for burst in self._bursts:
            cls, weight, length, pos = burst
            take = min(n_samples, length - pos)
            extra[:take, cls] += weight * _raised_cosine(length)[pos : pos + take]
            burst[3] = pos + take
            if burst[3] < length:
                alive.append(burst)
        self._bursts = alive
        return extra

    def emit(self, n_samples: int = 27) -> np.ndarray:
        t = np.arange(1, n_samples + 1) + self._fade_pos
        alpha = np.clip(t / self._fade_len, 0.0, 1.0)
        weights = (1 - alpha)[:, None] * self._fade_from + alpha[:, None] * self._target
        weights = weights + self._burst_weights(n_samples)
        self._fade_pos += n_samples

        rho = self._jitter_rho
        self._jitter = rho * self._jitter + np.sqrt(1 - rho**2) * self._rng.standard_normal()
        wobble = 1.0 + self.profile.steady_jitter * self._jitter
        p_rho = self._pattern_rho
        self._pattern = p_rho * self._pattern + np.sqrt(1 - p_rho**2) * self._rng.standard_normal(
            N_CHANNELS
        )
        pattern = np.exp(self.profile.pattern_sd * self._pattern)

        envelope = (
            self.profile.noise_floor
            + (weights @ self.profile.effective_gains()) * pattern[None, :] * wobble
        )
        white = self._rng.standard_normal((N_CHANNELS, n_samples))
        shaped, self._zi = lfilter(*self._ba, white, axis=1, zi=self._zi)
        return (shaped * self._norm * envelope.T * np.sqrt(np.pi / 2)).astype(np.float32)


_MAGIC = "EMGSESSION"
_FORMAT_VERSION = 1


def write_session(session: EmgSession, path: str | Path) -> None:
    """Write a session file: text header then float32 little-endian samples, channel-major."""
    lines = [
        f"{_MAGIC} {_FORMAT_VERSION}",
        f"kind {session.kind}",
        f"channels {session.signal.shape[0]}",
        f"sample_rate {session.sample_rate}",
        f"samples {session.signal.shape[1]}",
        f"prompts {len(session.timeline)}",
    ]
    for p in session.timeline.prompts:
        lines.append(f"prompt {p.cls.name} {p.onset!r} {p.duration!r}")
    lines.append("END")
    header = ("\n".join(lines) + "\n").encode("ascii")
    payload = np.ascontiguousarray(session.signal, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_session(path: str | Path) -> EmgSession:
    raw = Path(path).read_bytes()
    end_marker = b"\nEND\n"
    pos = raw.find(end_marker)
    if pos < 0:
        raise MalformedHeaderError(f"{path}: missing or unterminated header")
    try:
        header = raw[:pos].decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise MalformedHeaderError(f"{path}: header is not ASCII") from exc
    if not header or header[0].split() != [_MAGIC, str(_FORMAT_VERSION)]:
        raise MalformedHeaderError(f"{path}: bad magic line")

    fields: dict[str, str] = {}
    prompts: list[Prompt] = []
    for line in header[1:]:
        key, _, rest = line.partition(" ")
        if key == "prompt":
            try:
                name, onset, duration = rest.split()
                prompts.append(Prompt(MotionClass[name], float(onset), float(duration)))
            except (ValueError, KeyError) as exc:
                raise MalformedHeaderError(f"{path}: bad prompt line {line!r}") from exc
        else:
            fields[key] = rest
    try:
        channels = int(fields["channels"])
        sample_rate = int(fields["sample_rate"])
        n_samples = int(fields["samples"])
        n_prompts = int(fields["prompts"])
        kind = fields["kind"]
    except (KeyError, ValueError) as exc:
        raise MalformedHeaderError(f"{path}: missing or invalid header field") from exc
    if channels != N_CHANNELS:
        raise ChannelCountError(f"{path}: expected {N_CHANNELS} channels, file has {channels}")
    if len(prompts) != n_prompts:
        raise MalformedHeaderError(f"{path}: prompt count mismatch")

    payload = raw[pos + len(end_marker):]
    expected = 4 * channels * n_samples
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}"
        )
    if len(payload) > expected:
        raise MalformedHeaderError(f"{path}: {len(payload) - expected} unexpected trailing bytes")
    signal = np.frombuffer(payload, dtype="<f4").reshape(channels, n_samples)
    return EmgSession(
        signal=signal.copy(),
        sample_rate=sample_rate,
        timeline=PromptTimeline(tuple(prompts)),
        kind=kind,
    )
