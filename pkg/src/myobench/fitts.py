"""Closed-loop 3-DoF target acquisition test and its online metrics.

Targets live on a virtual sphere in (x, y, size); the depth coordinate maps
to the desired cursor diameter, the rest to screen position. The cursor is
never reset between targets. All distances are Manhattan, reflecting the
one-axis-at-a-time nature of classification-based control.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import dsp
from .analysis import changed_run_instability
from .control import PcMap, RejectionConfig, normalize_speed, pc_value
from .dataset import EmgStream, MotionClass, SynthProfile
from .features import _lsf4_batch


@dataclass(frozen=True)
class FittsConfig:
    amplitude: float = 300.0
    width: float = 40.0
    dwell_s: float = 3.0
    timeout_s: float = 13.0
    targets_total: int = 26
    targets_scored: int = 13
    tick_s: float = 0.0135
    xy_half_range: float = 300.0  # x and y each span [-300, 300]
    diameter_range: tuple[float, float] = (10.0, 310.0)
    t_ref: float = 2.0

    def __post_init__(self):
        if self.width >= self.amplitude:
            raise ValueError("width must be smaller than amplitude")
        if self.dwell_s >= self.timeout_s:
            raise ValueError("dwell must be shorter than the timeout")
        if self.targets_scored > self.targets_total:
            raise ValueError("cannot score more targets than presented")

    @property
    def index_of_difficulty(self) -> float:
        return math.log2(self.amplitude / self.width + 1.0)

    @property
    def dwell_ticks(self) -> int:
        return math.ceil(self.dwell_s / self.tick_s - 1e-9)

    @property
    def timeout_ticks(self) -> int:
        return math.ceil(self.timeout_s / self.tick_s - 1e-9)

    @property
    def axis_extents(self) -> dict[str, float]:
        return {
            "x": 2 * self.xy_half_range,
            "y": 2 * self.xy_half_range,
            "d": self.diameter_range[1] - self.diameter_range[0],
        }


@dataclass
class CursorState:
    x: float
    y: float
    diameter: float


@dataclass(frozen=True)
class Target:
    sphere_point: tuple[float, float, float]  # unit direction in the Manhattan metric
    x: float
    y: float
    diameter: float


# Class-to-axis mapping: which cursor attribute each contraction drives.
_AXIS = {
    int(MotionClass.WF): ("x", +1.0),
    int(MotionClass.WE): ("x", -1.0),
    int(MotionClass.WP): ("y", +1.0),
    int(MotionClass.WS): ("y", -1.0),
    int(MotionClass.HO): ("d", +1.0),
    int(MotionClass.HC): ("d", -1.0),
}


def next_target(state: CursorState, cfg: FittsConfig, rng: np.random.Generator) -> Target:
    """Random target at Manhattan distance ``amplitude`` from the current state."""
    for _ in range(1000):
        direction = rng.dirichlet(np.ones(3)) * rng.choice([-1.0, 1.0], size=3)
        tx = state.x + direction[0] * cfg.amplitude
        ty = state.y + direction[1] * cfg.amplitude
        td = state.diameter + direction[2] * cfg.amplitude
        if (
            abs(tx) <= cfg.xy_half_range
            and abs(ty) <= cfg.xy_half_range
            and cfg.diameter_range[0] <= td <= cfg.diameter_range[1]
        ):
            return Target(sphere_point=tuple(direction), x=tx, y=ty, diameter=td)
    raise RuntimeError("could not place a target inside the workspace")


def criteria(cursor: CursorState, target: Target, cfg: FittsConfig) -> tuple[bool, bool]:
    """(position held, size held): each within width/2 in its own metric."""
    pos_ok = abs(cursor.x - target.x) + abs(cursor.y - target.y) <= cfg.width / 2
    size_ok = abs(cursor.diameter - target.diameter) <= cfg.width / 2
    return pos_ok, size_ok


@dataclass
class FittsTrialLog:
    target: Target
    start: CursorState
    outcome: str  # success | timeout
    acquire_time: float
    scored: bool
    x: np.ndarray
    y: np.ndarray
    diameter: np.ndarray
    raw_class: np.ndarray
    confidence: np.ndarray
    command_class: np.ndarray
    velocity: np.ndarray
    rejected: np.ndarray
    pos_ok: np.ndarray
    size_ok: np.ndarray

    @property
    def n_ticks(self) -> int:
        return len(self.x)

    def step_distances(self) -> np.ndarray:
        """Per-tick Manhattan movement, including the step from the start state."""
        xs = np.concatenate([[self.start.x], self.x])
        ys = np.concatenate([[self.start.y], self.y])
        ds = np.concatenate([[self.start.diameter], self.diameter])
        return np.abs(np.diff(xs)) + np.abs(np.diff(ys)) + np.abs(np.diff(ds))

    def net_distance(self) -> float:
        return (
            abs(self.x[-1] - self.start.x)
            + abs(self.y[-1] - self.start.y)
            + abs(self.diameter[-1] - self.start.diameter)
        )


@dataclass
class FittsMetrics:
    completion_rate: float
    movement_time: float
    throughput: float
    path_efficiency: float
    stopping_distance: float
    overshoots: float
    instability: float

    def as_dict(self) -> dict[str, float]:
        return {
            "completion_rate": self.completion_rate,
            "movement_time": self.movement_time,
            "throughput": self.throughput,
            "path_efficiency": self.path_efficiency,
            "stopping_distance": self.stopping_distance,
            "overshoots": self.overshoots,
            "instability": self.instability,
        }


@dataclass(frozen=True)
class SimUser:
    """Greedy stand-in for the participant closing the loop."""

    reaction_delay_s: float = 0.25
    motor_noise: float = 0.05
    saturation_px: float = 200.0  # full effort beyond this error
    crawl_px: float = 40.0  # ease to the floor inside this error
    # Commanded contractions stay in the band the proportional-control
    # transfer actually responds to, the way practiced users hold a light
    # but deliberate contraction for fine corrections.
    intensity_floor: float = 0.68


# Oracle personas bypass the proportional-control transfer (velocity equals
# intent), so they ease to zero instead of holding the contraction floor.
IDEAL_USER = SimUser(
    reaction_delay_s=0.0, motor_noise=0.0, intensity_floor=0.0, crawl_px=0.0
)


def intended_action(
    cursor: CursorState, target: Target, cfg: FittsConfig, persona: SimUser
) -> tuple[int, float]:
    """Greedy intent: attack the largest remaining error among unmet criteria.

    Intensity is full effort beyond ``saturation_px`` of error, decelerates
    linearly down to the persona's floor at ``crawl_px``, and crawls at the
    floor inside it; when both criteria are met the intent is NM.
    """
    dx = target.x - cursor.x
    dy = target.y - cursor.y
    dd = target.diameter - cursor.diameter
    pos_ok, size_ok = criteria(cursor, target, cfg)
    if pos_ok and size_ok:
        return int(MotionClass.NM), 0.0
    candidates: list[tuple[float, int]] = []
    if not pos_ok:
        candidates.append((abs(dx), int(MotionClass.WF if dx > 0 else MotionClass.WE)))
        candidates.append((abs(dy), int(MotionClass.WP if dy > 0 else MotionClass.WS)))
    if not size_ok:
        candidates.append((abs(dd), int(MotionClass.HO if dd > 0 else MotionClass.HC)))
    err, cls = max(candidates)
    floor = persona.intensity_floor
    span = max(persona.saturation_px - persona.crawl_px, 1e-9)
    ramp = np.clip((err - persona.crawl_px) / span, 0.0, 1.0)
    return cls, floor + (1.0 - floor) * float(ramp)


class _DelayedIntent:
    """Applies the persona's reaction delay and motor noise to the raw intent."""

    def __init__(self, persona: SimUser, tick_s: float, rng: np.random.Generator):
        self.persona = persona
        self.rng = rng
        delay_ticks = int(round(persona.reaction_delay_s / tick_s))
        self.queue: deque[tuple[int, float]] = deque(
            [(int(MotionClass.NM), 0.0)] * delay_ticks
        )

    def act(self, desired: tuple[int, float]) -> tuple[int, float]:
        self.queue.append(desired)
        cls, intensity = self.queue.popleft()
        if self.persona.motor_noise > 0 and intensity > 0:
            intensity *= 1.0 + self.rng.normal(0.0, self.persona.motor_noise)
        return cls, float(np.clip(intensity, 0.0, 1.0))


class FittsEnv:
    """Single-attempt environment: applies commands, tracks dwell and timeout."""

    def __init__(self, cfg: FittsConfig, cursor: CursorState):
        self.cfg = cfg
        self.cursor = cursor
        self.gains = normalize_speed(cfg.axis_extents, cfg.t_ref)
        self.target: Target | None = None

    def begin(self, target: Target) -> None:
        self.target = target
        self.dwell_held = 0
        self.elapsed = 0

    def step(self, cls: int, velocity: float) -> tuple[bool, bool, bool, bool]:
        """Advance one tick; returns (done, success, pos_ok, size_ok)."""
        cfg = self.cfg
        if cls in _AXIS and velocity > 0:
            axis, sign = _AXIS[cls]
            delta = sign * velocity * self.gains[axis] * cfg.tick_s
            if axis == "x":
                self.cursor.x = float(np.clip(self.cursor.x + delta, -cfg.xy_half_range, cfg.xy_half_range))
            elif axis == "y":
                self.cursor.y = float(np.clip(self.cursor.y + delta, -cfg.xy_half_range, cfg.xy_half_range))
            else:
                self.cursor.diameter = float(
                    np.clip(self.cursor.diameter + delta, *cfg.diameter_range)
                )
        pos_ok, size_ok = criteria(self.cursor, self.target, cfg)
        self.dwell_held = self.dwell_held + 1 if (pos_ok and size_ok) else 0
        self.elapsed += 1
        if self.dwell_held >= cfg.dwell_ticks:
            return True, True, pos_ok, size_ok
        if self.elapsed >= cfg.timeout_ticks:
            return True, False, pos_ok, size_ok
        return False, False, pos_ok, size_ok


class _TrialRecorder:
    def __init__(self, target: Target, start: CursorState, scored: bool):
        self.target = target
        self.start = replace(start)
        self.scored = scored
        self.rows: list[tuple] = []

    def record(self, cursor, raw_cls, conf, cmd_cls, vel, rejected, pos_ok, size_ok):
        self.rows.append(
            (cursor.x, cursor.y, cursor.diameter, raw_cls, conf, cmd_cls, vel,
             rejected, pos_ok, size_ok)
        )

    def finish(self, success: bool, cfg: FittsConfig) -> FittsTrialLog:
        cols = list(zip(*self.rows))
        return FittsTrialLog(
            target=self.target,
            start=self.start,
            outcome="success" if success else "timeout",
            acquire_time=len(self.rows) * cfg.tick_s if success else cfg.timeout_s,
            scored=self.scored,
            x=np.array(cols[0]),
            y=np.array(cols[1]),
            diameter=np.array(cols[2]),
            raw_class=np.array(cols[3], dtype=int),
            confidence=np.array(cols[4]),
            command_class=np.array(cols[5], dtype=int),
            velocity=np.array(cols[6]),
            rejected=np.array(cols[7], dtype=bool),
            pos_ok=np.array(cols[8], dtype=bool),
            size_ok=np.array(cols[9], dtype=bool),
        )


@dataclass
class RunResult:
    logs: list[FittsTrialLog]
    frames: np.ndarray = field(default_factory=lambda: np.zeros((0, 24)))
    frame_predictions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def _start_cursor(cfg: FittsConfig) -> CursorState:
    return CursorState(x=0.0, y=0.0, diameter=sum(cfg.diameter_range) / 2)


def run_fitts_oracle(
    cfg: FittsConfig, persona: SimUser = IDEAL_USER, seed: int = 0
) -> RunResult:
    """Upper-bound harness run: perfect decisions, velocity equal to intent."""
    rng_targets = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    user = _DelayedIntent(persona, cfg.tick_s, np.random.default_rng(np.random.SeedSequence((seed, 2))))
    cursor = _start_cursor(cfg)
    env = FittsEnv(cfg, cursor)
    logs = []
    for idx in range(cfg.targets_total):
        target = next_target(cursor, cfg, rng_targets)
        env.begin(target)
        rec = _TrialRecorder(target, cursor, idx >= cfg.targets_total - cfg.targets_scored)
        while True:
            cls, intensity = user.act(intended_action(cursor, target, cfg, persona))
            done, success, pos_ok, size_ok = env.step(cls, intensity)
            rec.record(cursor, cls, 1.0, cls, intensity, False, pos_ok, size_ok)
            if done:
                logs.append(rec.finish(success, cfg))
                break
    return RunResult(logs=logs)


def run_fitts(
    decoder,
    pc_map: PcMap,
    profile: SynthProfile,
    cfg: FittsConfig,
    persona: SimUser,
    rejection: RejectionConfig,
    filter_spec: dsp.FilterSpec,
    frame_spec: dsp.FrameSpec,
    seed: int = 0,
    sample_rate: int = 2000,
) -> RunResult:
    """Closed loop over 26 sequential targets.

    Per tick: the simulated user picks an intent, the stream synthesizes one
    frame increment of EMG, the trailing window is zero-phase filtered,
    features are extracted and decoded, the decision is rejection-gated and
    mapped to a velocity, and the environment advances. Deterministic for a
    fixed seed.
    """
    rng_targets = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    user = _DelayedIntent(
        persona, cfg.tick_s, np.random.default_rng(np.random.SeedSequence((seed, 2)))
    )
    stream = EmgStream(profile, seed=int(np.random.SeedSequence((seed, 3)).generate_state(1)[0]))
    decoder.reset()

    frame_len, frame_inc = frame_spec.frame_len, frame_spec.frame_inc
    buf_len = 2 * frame_len
    raw_buf = np.zeros((6, buf_len))
    seen = 0
    bp = dsp.design_bandpass(filter_spec, sample_rate)
    notch = dsp.design_notch(filter_spec, sample_rate)

    cursor = _start_cursor(cfg)
    env = FittsEnv(cfg, cursor)
    logs = []
    all_frames: list[np.ndarray] = []
    all_preds: list[int] = []

    for idx in range(cfg.targets_total):
        target = next_target(cursor, cfg, rng_targets)
        env.begin(target)
        rec = _TrialRecorder(target, cursor, idx >= cfg.targets_total - cfg.targets_scored)
        while True:
            intent_cls, intensity = user.act(intended_action(cursor, target, cfg, persona))
            stream.set_intent(MotionClass(intent_cls), intensity)
            chunk = stream.emit(frame_inc)
            raw_buf = np.roll(raw_buf, -frame_inc, axis=1)
            raw_buf[:, -frame_inc:] = chunk
            seen += frame_inc

            if seen >= frame_len:
                tail = raw_buf[:, -min(seen, buf_len):]
                filtered = dsp.filtfilt(notch, dsp.filtfilt(bp, tail))[:, -frame_len:]
                lsf4 = _lsf4_batch(filtered[None], decoder.wamp_threshold)[0].reshape(-1)
                mav_sum = float(np.abs(filtered).mean(axis=1).sum())
                raw_cls, conf = decoder.push(lsf4)
                all_frames.append(lsf4)
                all_preds.append(raw_cls)
            else:
                raw_cls, conf, mav_sum = int(MotionClass.NM), 1.0, 0.0

            rejected = conf < rejection.threshold
            cmd_cls = int(MotionClass.NM) if rejected else raw_cls
            vel = pc_value(mav_sum, cmd_cls, pc_map)
            done, success, pos_ok, size_ok = env.step(cmd_cls, vel)
            rec.record(cursor, raw_cls, conf, cmd_cls, vel, rejected, pos_ok, size_ok)
            if done:
                logs.append(rec.finish(success, cfg))
                break

    frames = np.array(all_frames) if all_frames else np.zeros((0, 24))
    return RunResult(
        logs=logs, frames=frames, frame_predictions=np.array(all_preds, dtype=int)
    )


def compute_metrics(logs: list[FittsTrialLog], cfg: FittsConfig) -> FittsMetrics:
    """The seven online metrics over the scored trial logs."""
    if not logs:
        raise ValueError("no trial logs to score")
    successes = [log for log in logs if log.outcome == "success"]
    completion = len(successes) / len(logs)
    movement_time = float(np.mean([log.acquire_time for log in logs]))
    throughput = cfg.index_of_difficulty / movement_time

    efficiencies = []
    for log in logs:
        path = log.step_distances().sum()
        efficiencies.append(log.net_distance() / path if path > 0 else 0.0)
    path_efficiency = float(np.mean(efficiencies))

    if successes:
        # The dwell clock starts at the END of the tick that arrived on target,
        # so the arrival tick's own displacement is not dwell movement.
        dwell = cfg.dwell_ticks
        stopping = float(
            np.mean([log.step_distances()[-(dwell - 1):].sum() for log in successes])
        )
    else:
        stopping = 0.0

    overshoot_counts = []
    for log in logs:
        pos_exits = np.sum(log.pos_ok[:-1] & ~log.pos_ok[1:]) if log.n_ticks > 1 else 0
        size_exits = np.sum(log.size_ok[:-1] & ~log.size_ok[1:]) if log.n_ticks > 1 else 0
        overshoot_counts.append(int(pos_exits) + int(size_exits))
    overshoots = float(np.mean(overshoot_counts))

    instability = float(
        np.mean([changed_run_instability(log.command_class) for log in logs])
    )
    return FittsMetrics(
        completion_rate=completion,
        movement_time=movement_time,
        throughput=throughput,
        path_efficiency=path_efficiency,
        stopping_distance=stopping,
        overshoots=overshoots,
        instability=instability,
    )
