import numpy as np
import pytest

from myobench.analysis import (
    balanced_latin_square,
    benjamini_yekutieli,
    changed_run_instability,
    cohens_d,
    effect_label,
    offline_instability,
    paired_t,
    pca_project,
    rm_anova,
    sweep_rejection,
    total_error_rate,
)
from myobench.dataset import MotionClass

NM = int(MotionClass.NM)


# --- error rates -------------------------------------------------------------

def test_total_error_rate_all_correct():
    y = np.array([0, 1, 2, 6])
    assert total_error_rate(y, y) == 0.0


def test_total_error_rate_rejecting_actives_counts():
    labels = np.array([0, 1, 6, 6, 2])
    decisions = np.full(5, NM)  # everything rejected to NM
    assert total_error_rate(decisions, labels) == pytest.approx(3 / 5)


def test_total_error_rate_matches_recount():
    rng = np.random.default_rng(0)
    decisions = rng.integers(0, 7, 1000)
    labels = rng.integers(0, 7, 1000)
    recount = sum(int(d != l) for d, l in zip(decisions, labels)) / 1000
    assert total_error_rate(decisions, labels) == pytest.approx(recount)


def test_total_error_rate_length_mismatch():
    with pytest.raises(ValueError):
        total_error_rate(np.zeros(3), np.zeros(4))


def test_sweep_rejection_endpoints():
    rng = np.random.default_rng(1)
    classes = rng.integers(0, 7, 500)
    labels = rng.integers(0, 7, 500)
    conf = rng.uniform(0.05, 0.95, 500)
    thresholds = np.linspace(0, 1, 21)
    curve = sweep_rejection(classes, conf, labels, thresholds)
    assert curve[0] == total_error_rate(classes, labels)
    assert curve[-1] == pytest.approx(np.mean(labels != NM))  # everything rejected


def test_sweep_rejection_hand_curve():
    classes = np.array([0, 0, 1, NM])
    labels = np.array([0, 1, 1, NM])
    conf = np.array([0.9, 0.6, 0.3, 0.8])
    curve = sweep_rejection(classes, conf, labels, np.array([0.0, 0.5, 0.7, 1.0]))
    # th 0.0: errors = [frame 1] -> 0.25
    # th 0.5: frame 2 rejected -> decisions [0, 0, NM, NM]; errors frames 1,2 -> 0.5
    # th 0.7: frame 1 also rejected -> decisions [0, NM, NM, NM]; errors 1,2 -> 0.5
    # th 1.0: all rejected -> errors = active labels = frames 0,1,2 -> 0.75
    assert list(curve) == [0.25, 0.5, 0.5, 0.75]


def test_sweep_requires_sorted_thresholds():
    with pytest.raises(ValueError):
        sweep_rejection(np.zeros(2), np.zeros(2), np.zeros(2), np.array([0.5, 0.1]))


# --- instability ---------------------------------------------------------------

def test_instability_hand_examples():
    assert changed_run_instability(np.array([0, 0, 1, 0, 0])) == 2.0
    assert changed_run_instability(np.array([0, 0, 0])) == 0.0
    assert changed_run_instability(np.array([0, NM, 0, NM, 0])) == 0.0
    assert changed_run_instability(np.array([0, 1, 0, 1])) == 3.0
    assert changed_run_instability(np.array([0, 1, 1, 2, 2, 2, 3])) == 1.0


def test_offline_instability_empty():
    with pytest.raises(ValueError):
        offline_instability(np.array([]))


# --- PCA -----------------------------------------------------------------------

def test_pca_two_dims_preserves_variance():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((300, 2)) @ np.array([[2.0, 0.3], [0.3, 0.5]])
    scores, ratio = pca_project(x, k=2)
    assert scores.shape == (300, 2)
    total_in = np.var(x - x.mean(0), axis=0, ddof=1).sum()
    total_out = np.var(scores, axis=0, ddof=1).sum()
    assert total_out == pytest.approx(total_in, rel=1e-9)
    assert ratio.sum() == pytest.approx(1.0, rel=1e-9)


def test_pca_line_explains_everything():
    t = np.linspace(-1, 1, 100)
    x = np.outer(t, np.array([1.0, 2.0, -0.5]))
    with pytest.warns(UserWarning):
        scores, ratio = pca_project(x, k=2)
    assert scores.shape[1] == 1  # rank-deficient data gives fewer components
    assert ratio[0] >= 0.999


def test_pca_isotropic_ratios_balanced():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((5000, 2))
    _, ratio = pca_project(x, k=2)
    assert abs(ratio[0] - ratio[1]) < 0.07


def test_pca_sign_convention():
    rng = np.random.default_rng(4)
    x = rng.standard_normal(500)[:, None] * np.array([[-3.0, 1.0]])
    x += 0.01 * rng.standard_normal(x.shape)
    scores, _ = pca_project(x, k=2)
    centered = x - x.mean(0)
    # Recover the loading; its largest-magnitude entry must be positive.
    loading = np.linalg.lstsq(scores[:, :1], centered, rcond=None)[0][0]
    assert loading[np.argmax(np.abs(loading))] > 0


def test_pca_needs_enough_points():
    with pytest.raises(ValueError):
        pca_project(np.zeros((2, 4)), k=2)


# --- Latin squares ---------------------------------------------------------------

def test_latin_square_five_conditions():
    square = balanced_latin_square(5)
    assert square.shape == (10, 5)
    for col in range(5):
        values, counts = np.unique(square[:, col], return_counts=True)
        assert list(values) == [0, 1, 2, 3, 4]
        assert np.all(counts == 2)  # each condition twice per position
    for row in square:
        assert sorted(row) == [0, 1, 2, 3, 4]


def test_latin_square_five_carryover_uniform():
    square = balanced_latin_square(5)
    pairs = {}
    for row in square:
        for a, b in zip(row[:-1], row[1:]):
            pairs[(a, b)] = pairs.get((a, b), 0) + 1
    assert len(pairs) == 20
    assert set(pairs.values()) == {2}  # every ordered pair follows twice


def test_latin_square_even_n():
    square = balanced_latin_square(4)
    assert square.shape == (4, 4)
    for col in range(4):
        assert sorted(square[:, col]) == [0, 1, 2, 3]
    pairs = {}
    for row in square:
        for a, b in zip(row[:-1], row[1:]):
            pairs[(a, b)] = pairs.get((a, b), 0) + 1
    assert len(pairs) == 12
    assert set(pairs.values()) == {1}


def test_latin_square_minimum_size():
    assert balanced_latin_square(2).shape == (2, 2)
    with pytest.raises(ValueError):
        balanced_latin_square(1)


# --- RM-ANOVA ----------------------------------------------------------------------

# Hand-worked oracle, frozen: 4 subjects x 3 conditions.
# Condition means 5, 7, 10; grand mean 22/3.
# SS_cond = 4*(49 + 1 + 64)/9 = 456/9; SS_subj = 3*6/9 = 2; SS_total = 546/9.
# SS_err = (546 - 456 - 18)/9 = 8; F = (456/18) / (8/6) = 19 exactly.
# p = I_{6/44}(3, 1) = (3/22)^3 = 27/10648.
ANOVA_TABLE = np.array([
    [5.0, 7.0, 9.0],
    [4.0, 8.0, 12.0],
    [6.0, 6.0, 9.0],
    [5.0, 7.0, 10.0],
])


def test_rm_anova_matches_hand_oracle():
    result = rm_anova(ANOVA_TABLE)
    assert result.F == pytest.approx(19.0, abs=1e-6)
    assert result.df == (2, 6)
    assert result.p == pytest.approx(27.0 / 10648.0, abs=1e-9)


def test_rm_anova_no_effect():
    data = np.tile(np.array([[3.0], [5.0], [4.0]]), (1, 4))  # conditions identical
    result = rm_anova(data)
    assert result.F == 0.0
    assert result.p == 1.0


def test_rm_anova_subject_shift_invariant():
    shifted = ANOVA_TABLE.copy()
    shifted[1] += 100.0
    result = rm_anova(shifted)
    assert result.F == pytest.approx(19.0, abs=1e-9)


def test_rm_anova_scale_invariant():
    result = rm_anova(ANOVA_TABLE * 3.7)
    assert result.F == pytest.approx(19.0, abs=1e-9)


def test_rm_anova_rejects_bad_input():
    with pytest.raises(ValueError):
        rm_anova(np.zeros((1, 3)))
    bad = ANOVA_TABLE.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        rm_anova(bad)


# --- Benjamini-Yekutieli --------------------------------------------------------------

def test_by_first_step_value():
    # m=4: c(4) = 25/12; smallest adjusted = 0.01 * 4 * (25/12) / 1 = 1/12.
    adjusted = benjamini_yekutieli(np.array([0.01, 0.02, 0.03, 0.04]))
    assert adjusted[0] == pytest.approx(1.0 / 12.0, abs=1e-12)
    # For this ladder every raw step value equals 1/12, so all adjust to it.
    assert np.allclose(adjusted, 1.0 / 12.0, atol=1e-12)


def test_by_direct_formula_oracle():
    p = np.array([0.04, 0.001, 0.3, 0.02, 0.9])
    m = len(p)
    c_m = sum(1.0 / k for k in range(1, m + 1))
    order = np.argsort(p)
    stepped = [p[order[i]] * m * c_m / (i + 1) for i in range(m)]
    expected_sorted = [min(min(stepped[i:]), 1.0) for i in range(m)]
    expected = np.empty(m)
    expected[order] = expected_sorted
    assert np.allclose(benjamini_yekutieli(p), expected, atol=1e-12)


def test_by_all_ones_and_single():
    assert np.all(benjamini_yekutieli(np.ones(5)) == 1.0)
    assert benjamini_yekutieli(np.array([0.2]))[0] == pytest.approx(0.2)


def test_by_monotone_and_dominates_raw():
    rng = np.random.default_rng(5)
    for _ in range(20):
        p = rng.uniform(0, 1, 8)
        adj = benjamini_yekutieli(p)
        assert np.all(adj >= p - 1e-15)
        order = np.argsort(p)
        assert np.all(np.diff(adj[order]) >= -1e-15)


def test_by_rejects_invalid():
    with pytest.raises(ValueError):
        benjamini_yekutieli(np.array([0.5, 1.2]))


# --- effect sizes ------------------------------------------------------------------------

def test_cohens_d_unit_effect():
    rng = np.random.default_rng(6)
    diff = rng.standard_normal(200)
    diff = (diff - diff.mean()) / diff.std(ddof=1) + 1.0  # mean 1, sd 1 exactly
    b = rng.standard_normal(200)
    effect = cohens_d(b + diff, b)
    assert effect.d == pytest.approx(1.0, abs=1e-9)
    assert effect.label == "Large"


def test_cohens_d_zero_variance_flagged():
    a = np.array([1.0, 2.0, 3.0])
    effect = cohens_d(a, a)
    assert effect.d == 0.0
    assert effect.degenerate


def test_cohens_d_antisymmetric():
    rng = np.random.default_rng(7)
    a = rng.standard_normal(50)
    b = rng.standard_normal(50)
    assert cohens_d(a, b).d == pytest.approx(-cohens_d(b, a).d)


def test_effect_labels_follow_bands():
    assert effect_label(0.05) == "Very Small"
    assert effect_label(0.3) == "Small"
    assert effect_label(0.6) == "Medium"
    assert effect_label(1.0) == "Large"
    assert effect_label(1.5) == "Very Large"
    assert effect_label(2.5) == "Huge"


def test_paired_t_detects_shift():
    rng = np.random.default_rng(8)
    base = rng.standard_normal(20)
    t, p = paired_t(base + 2.0 + 0.1 * rng.standard_normal(20), base)
    assert t > 0
    assert p < 1e-6
    t0, p0 = paired_t(base, base)
    assert t0 == 0.0 and p0 == 1.0
