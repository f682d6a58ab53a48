"""Offline evaluation and the statistical machinery for the study.

Tail probabilities for the F and t distributions are computed through the
regularized incomplete beta function, so no separate statistics package is
needed.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .dataset import MotionClass

EFFECT_BANDS = (
    (2.0, "Huge"),
    (1.2, "Very Large"),
    (0.8, "Large"),
    (0.5, "Medium"),
    (0.2, "Small"),
    (0.0, "Very Small"),
)


def total_error_rate(decisions: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of frames whose post-rejection decision differs from the label.

    Rejections land on NM, so rejecting a truly active frame counts as an
    error while rejecting a true-NM frame does not.
    """
    decisions = np.asarray(decisions)
    labels = np.asarray(labels)
    if decisions.shape != labels.shape:
        raise ValueError("decisions and labels must have equal length")
    return float(np.mean(decisions != labels))


def sweep_rejection(
    classes: np.ndarray,
    confidences: np.ndarray,
    labels: np.ndarray,
    thresholds: np.ndarray,
) -> np.ndarray:
    """Total error rate after rejection at each threshold (sorted ascending)."""
    classes = np.asarray(classes)
    confidences = np.asarray(confidences)
    thresholds = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(thresholds) < 0):
        raise ValueError("thresholds must be sorted ascending")
    rates = np.empty(len(thresholds))
    for i, th in enumerate(thresholds):
        out = classes.copy()
        out[confidences < th] = int(MotionClass.NM)
        rates[i] = total_error_rate(out, labels)
    return rates


def changed_run_instability(classes: np.ndarray, nm: int = int(MotionClass.NM)) -> float:
    """Mean length of maximal runs of consecutive decision changes.

    NM decisions are deleted first; a tick "changes" when its decision
    differs from the previous surviving tick's. Returns 0 for a stream with
    no changes.
    """
    seq = np.asarray(classes)
    seq = seq[seq != nm]
    if seq.size < 2:
        return 0.0
    changed = seq[1:] != seq[:-1]
    if not np.any(changed):
        return 0.0
    runs = []
    count = 0
    for c in changed:
        if c:
            count += 1
        elif count:
            runs.append(count)
            count = 0
    if count:
        runs.append(count)
    return float(np.mean(runs))


def offline_instability(classes: np.ndarray) -> float:
    seq = np.asarray(classes)
    if seq.size == 0:
        raise ValueError("empty decision stream")
    return changed_run_instability(seq)


def pca_project(embeddings: np.ndarray, k: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Project onto the top-k principal axes; returns (scores, explained ratio).

    Components are ordered by descending eigenvalue; each axis is signed so
    its largest-magnitude loading is positive. If the data rank is below k,
    fewer components are returned with a warning.
    """
    x = np.asarray(embeddings, dtype=float)
    if x.shape[0] < k + 1:
        raise ValueError(f"need at least {k + 1} points for a {k}-component projection")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order]

    total = eigvals.sum()
    rank = int(np.sum(eigvals > max(total, 1e-300) * 1e-12))
    n_comp = min(k, max(rank, 1))
    if n_comp < k:
        warnings.warn(f"data rank {n_comp} below requested {k} components", stacklevel=2)
    vecs = eigvecs[:, :n_comp]
    for j in range(n_comp):
        if vecs[np.argmax(np.abs(vecs[:, j])), j] < 0:
            vecs[:, j] = -vecs[:, j]
    scores = centered @ vecs
    ratio = eigvals[:n_comp] / total if total > 0 else np.zeros(n_comp)
    return scores, ratio


def balanced_latin_square(n_conditions: int = 5) -> np.ndarray:
    """Orderings in which every condition occupies every position equally often.

    Even n: the classic n x n construction. Odd n: the same rows followed by
    their reversals (2n x n), which also balances first-order carryover.
    """
    n = n_conditions
    if n < 2:
        raise ValueError("need at least 2 conditions")
    pattern = [0, 1]
    lo, hi = n - 1, 2
    while len(pattern) < n:
        pattern.append(lo)
        if len(pattern) < n:
            pattern.append(hi)
        lo -= 1
        hi += 1
    base = np.array([[(offset + p) % n for p in pattern] for offset in range(n)])
    if n % 2 == 0:
        return base
    return np.vstack([base, base[:, ::-1]])


@dataclass
class PosthocResult:
    pair: tuple[str, str]
    p_raw: float
    p_adjusted: float
    cohens_d: float
    effect_label: str
    degenerate: bool = False


@dataclass
class StatResult:
    F: float
    df: tuple[int, int]
    p: float
    posthoc: list[PosthocResult] = field(default_factory=list)


def _f_sf(f_stat: float, dfn: int, dfd: int) -> float:
    """Upper tail of the F distribution via the regularized incomplete beta."""
    if not np.isfinite(f_stat):
        return 0.0
    if f_stat <= 0:
        return 1.0
    x = dfd / (dfd + dfn * f_stat)
    return float(betainc(dfd / 2.0, dfn / 2.0, x))


def _t_sf_two_sided(t_stat: float, df: int) -> float:
    if not np.isfinite(t_stat):
        return 0.0
    x = df / (df + t_stat * t_stat)
    return float(betainc(df / 2.0, 0.5, x))


def rm_anova(data: np.ndarray) -> StatResult:
    """One-factor repeated-measures ANOVA on a (subjects x conditions) table."""
    x = np.asarray(data, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("need at least 2 subjects and 2 conditions")
    if not np.all(np.isfinite(x)):
        raise ValueError("missing or non-finite cells")
    n, k = x.shape
    grand = x.mean()
    ss_cond = n * np.sum((x.mean(axis=0) - grand) ** 2)
    ss_subj = k * np.sum((x.mean(axis=1) - grand) ** 2)
    ss_total = np.sum((x - grand) ** 2)
    ss_err = ss_total - ss_cond - ss_subj
    dfn, dfd = k - 1, (k - 1) * (n - 1)
    ms_err = ss_err / dfd
    if ss_cond <= 0:
        return StatResult(F=0.0, df=(dfn, dfd), p=1.0)
    if ms_err <= 0:
        return StatResult(F=float("inf"), df=(dfn, dfd), p=0.0)
    f_stat = (ss_cond / dfn) / ms_err
    return StatResult(F=float(f_stat), df=(dfn, dfd), p=_f_sf(f_stat, dfn, dfd))


def paired_t(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Two-sided paired t-test; returns (t, p)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    diff = a - b
    n = len(diff)
    sd = diff.std(ddof=1)
    if sd == 0:
        return (0.0, 1.0) if np.allclose(diff, 0) else (float("inf"), 0.0)
    t_stat = diff.mean() / (sd / np.sqrt(n))
    return float(t_stat), _t_sf_two_sided(abs(t_stat), n - 1)


def benjamini_yekutieli(p_values: np.ndarray) -> np.ndarray:
    """Step-up adjusted p values with the harmonic-sum dependency factor."""
    p = np.asarray(p_values, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p values must lie in [0, 1]")
    m = len(p)
    if m == 0:
        return p.copy()
    c_m = np.sum(1.0 / np.arange(1, m + 1))
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m * c_m / np.arange(1, m + 1)
    # Step-up: each adjusted value is the minimum over itself and all larger ranks.
    adjusted = np.minimum.accumulate(ranked[::-1])[::-1]
    adjusted = np.minimum(adjusted, 1.0)
    out = np.empty(m)
    out[order] = adjusted
    return out


@dataclass
class EffectSize:
    d: float
    label: str
    degenerate: bool = False


def effect_label(d: float) -> str:
    magnitude = abs(d)
    for threshold, label in EFFECT_BANDS:
        if magnitude >= threshold:
            return label
    return "Very Small"


def cohens_d(a: np.ndarray, b: np.ndarray, paired: bool = True) -> EffectSize:
    """Paired (difference-score) effect size: mean(a-b) / sd(a-b, unbiased)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if paired:
        if a.shape != b.shape:
            raise ValueError("paired samples must have equal length")
        diff = a - b
        sd = diff.std(ddof=1)
        if sd == 0:
            return EffectSize(d=0.0, label=effect_label(0.0), degenerate=True)
        d = diff.mean() / sd
    else:
        pooled = np.sqrt((a.var(ddof=1) + b.var(ddof=1)) / 2)
        if pooled == 0:
            return EffectSize(d=0.0, label=effect_label(0.0), degenerate=True)
        d = (a.mean() - b.mean()) / pooled
    return EffectSize(d=float(d), label=effect_label(float(d)))
