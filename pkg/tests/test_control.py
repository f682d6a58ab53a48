import numpy as np
import pytest

from myobench.dataset import MotionClass
from myobench.control import (
    PcMap,
    RejectionConfig,
    decision_stream,
    fit_pc_map,
    normalize_speed,
    pc_value,
    reject,
    reject_batch,
)
from myobench.models import Decision, Decisions

NM = int(MotionClass.NM)
WF = int(MotionClass.WF)


def decision(cls=WF, confidence=0.8):
    post = np.full(7, (1 - confidence) / 6)
    post[cls] = confidence
    return Decision(cls=cls, confidence=confidence, posterior=post)


def test_reject_examples():
    cfg = RejectionConfig(threshold=0.5)
    kept = reject(decision(confidence=0.6), cfg)
    assert kept.cls == WF
    dropped = reject(decision(confidence=0.4), cfg)
    assert dropped.cls == NM
    assert np.array_equal(dropped.posterior, decision(confidence=0.4).posterior)


def test_reject_threshold_zero_is_identity():
    cfg = RejectionConfig(threshold=0.0)
    for conf in (0.01, 0.2, 0.99):
        assert reject(decision(confidence=conf), cfg).cls == WF


def test_threshold_validation():
    with pytest.raises(ValueError):
        RejectionConfig(threshold=1.5)
    with pytest.raises(ValueError):
        RejectionConfig(threshold=-0.1)


def test_rejection_nested_across_thresholds():
    rng = np.random.default_rng(0)
    n = 500
    decisions = Decisions(
        classes=rng.integers(0, 7, n),
        confidence=rng.uniform(0, 1, n),
        posterior=np.ones((n, 7)) / 7,
    )
    previous = np.zeros(n, dtype=bool)
    for th in np.linspace(0, 1, 21):
        _, rejected = reject_batch(decisions, RejectionConfig(threshold=th))
        assert np.all(previous <= rejected)  # the rejected set only grows
        previous = rejected


def uniform_pc_training(seed=1, n_per_class=2000):
    rng = np.random.default_rng(seed)
    sums, preds = [], []
    for cls in range(6):
        sums.append(rng.uniform(0.0, 1.0, n_per_class))
        preds.append(np.full(n_per_class, cls))
    return np.concatenate(sums), np.concatenate(preds)


def test_pc_map_percentile_oracle():
    sums, preds = uniform_pc_training()
    pc = fit_pc_map(sums, preds)
    for cls in range(6):
        lo, hi = pc.bounds[cls]
        assert lo == pytest.approx(0.10, abs=0.02)
        assert hi == pytest.approx(0.95, abs=0.02)


def test_pc_map_requires_predictions_per_class():
    sums, preds = uniform_pc_training(n_per_class=50)
    preds[preds == 3] = 2  # class WS never predicted
    with pytest.raises(ValueError, match="WS"):
        fit_pc_map(sums, preds)


def test_pc_map_degenerate_bounds_rejected():
    sums, preds = uniform_pc_training(n_per_class=50)
    sums[preds == 1] = 0.5  # constant drive for WE
    with pytest.raises(ValueError, match="WE"):
        fit_pc_map(sums, preds)


def test_pc_maps_differ_between_classifiers():
    rng = np.random.default_rng(2)
    sums = rng.uniform(0, 1, 6 * 300)
    preds_a = np.repeat(np.arange(6), 300)
    preds_b = np.roll(preds_a, 150)
    a = fit_pc_map(sums, preds_a)
    b = fit_pc_map(sums, preds_b)
    assert a.bounds != b.bounds


def test_pc_value_sigmoid_examples():
    pc = PcMap(bounds={WF: (0.2, 0.8)})
    mid = pc_value(0.5, WF, pc)
    assert mid == pytest.approx(0.5)
    low = pc_value(0.1, WF, pc)
    assert low == pytest.approx(1 / (1 + np.exp(5)), rel=1e-6)
    high = pc_value(0.9, WF, pc)
    assert high == pytest.approx(1 / (1 + np.exp(-5)), rel=1e-6)


def test_pc_value_nm_is_zero():
    pc = PcMap(bounds={WF: (0.2, 0.8)})
    assert pc_value(123.0, NM, pc) == 0.0


def test_pc_value_unknown_class():
    pc = PcMap(bounds={WF: (0.2, 0.8)})
    with pytest.raises(KeyError):
        pc_value(0.5, int(MotionClass.HO), pc)


def test_pc_value_monotone_in_drive():
    pc = PcMap(bounds={WF: (0.1, 0.9)})
    values = [pc_value(x, WF, pc) for x in np.linspace(-0.5, 1.5, 101)]
    assert np.all(np.diff(values) >= 0)
    assert all(0.0 <= v <= 1.0 for v in values)


def test_normalize_speed_examples():
    gains = normalize_speed({"x": 600.0, "d": 300.0}, t_ref=2.0)
    assert gains == {"x": 300.0, "d": 150.0}
    equal = normalize_speed({"x": 500.0, "y": 500.0}, t_ref=2.5)
    assert equal["x"] == equal["y"]
    with pytest.raises(ValueError):
        normalize_speed({"x": 0.0})


def test_decision_stream_combines_rejection_and_control():
    decisions = Decisions(
        classes=np.array([WF, WF, NM]),
        confidence=np.array([0.9, 0.3, 0.99]),
        posterior=np.ones((3, 7)) / 7,
    )
    pc = PcMap(bounds={WF: (0.0, 1.0)})
    stream = decision_stream(decisions, np.array([0.5, 0.5, 0.5]),
                             pc, RejectionConfig(threshold=0.5))
    assert list(stream.classes) == [WF, NM, NM]
    assert list(stream.rejected) == [False, True, False]
    assert stream.velocity[0] == pytest.approx(0.5)
    assert stream.velocity[1] == 0.0  # rejected decisions never move the cursor
    assert stream.velocity[2] == 0.0
