"""Biometric evaluation: ROC/AUC, EER, HTER, ACER, histograms.

Scores follow the "higher means more real" convention with label 1 = real.
At a threshold t a sample is accepted as real when its score exceeds t, with
exact ties counted half, so:

    FAR(t) = (#attacks > t + 0.5 * #attacks == t) / #attacks
    FRR(t) = (#reals  < t + 0.5 * #reals  == t) / #reals

The half-tie convention makes the DET curve symmetric under score negation
with flipped labels, and makes the rank-sum AUC equal the trapezoidal area
under the tie-grouped ROC curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError


def _split_scores(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError(f"scores {scores.shape} and labels {labels.shape} must be matching 1-D")
    real = scores[labels == 1]
    attack = scores[labels == 0]
    if real.size == 0 or attack.size == 0:
        raise MetricError("both classes must be present to compute a rate")
    return real, attack


def _midranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1 with ties assigned their average rank."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum (Mann-Whitney) formulation.

    Equals the probability that a random real sample outscores a random
    attack sample, ties counted half.
    """
    real, attack = _split_scores(scores, labels)
    ranks = _midranks(np.concatenate([real, attack]))
    n_r, n_a = real.size, attack.size
    rank_sum = float(ranks[:n_r].sum())
    return (rank_sum - n_r * (n_r + 1) / 2.0) / float(n_r * n_a)


def _operating_thresholds(real: np.ndarray, attack: np.ndarray) -> np.ndarray:
    """Unique scores, midpoints between neighbours, and outside sentinels."""
    u = np.unique(np.concatenate([real, attack]))
    mids = (u[:-1] + u[1:]) / 2.0
    lo = u[0] - 1.0
    hi = u[-1] + 1.0
    out = np.empty(2 * u.size + 1)
    out[0] = lo
    out[1:-1:2] = u
    out[2:-1:2] = mids
    out[-1] = hi
    return out


def _far_frr(real: np.ndarray, attack: np.ndarray, thresholds: np.ndarray):
    real_sorted = np.sort(real)
    attack_sorted = np.sort(attack)
    a_left = np.searchsorted(attack_sorted, thresholds, side="left")
    a_right = np.searchsorted(attack_sorted, thresholds, side="right")
    r_left = np.searchsorted(real_sorted, thresholds, side="left")
    r_right = np.searchsorted(real_sorted, thresholds, side="right")
    far = ((attack.size - a_right) + 0.5 * (a_right - a_left)) / attack.size
    frr = (r_left + 0.5 * (r_right - r_left)) / real.size
    return far, frr


def eer(scores, labels) -> tuple[float, float]:
    """Equal error rate and its threshold.

    FAR falls and FRR rises with the threshold; the crossing is located by
    linear interpolation between adjacent operating points.
    """
    real, attack = _split_scores(scores, labels)
    thresholds = _operating_thresholds(real, attack)
    far, frr = _far_frr(real, attack, thresholds)
    diff = far - frr
    k = int(np.argmax(diff <= 0.0))  # first index at or past the crossing
    if k == 0:
        return float(far[0]), float(thresholds[0])
    denom = diff[k - 1] - diff[k]
    t = 0.0 if denom == 0.0 else diff[k - 1] / denom
    rate = far[k - 1] + t * (far[k] - far[k - 1])
    threshold = thresholds[k - 1] + t * (thresholds[k] - thresholds[k - 1])
    return float(rate), float(threshold)


def hter(scores, labels, threshold: float) -> float:
    """(FAR + FRR) / 2 at a fixed, externally supplied threshold."""
    if not np.isfinite(threshold):
        raise MetricError(f"threshold must be finite, got {threshold}")
    real, attack = _split_scores(scores, labels)
    far, frr = _far_frr(real, attack, np.array([float(threshold)]))
    return float((far[0] + frr[0]) / 2.0)


def acer(labels, predictions) -> float:
    """(APCER + BPCER) / 2 from hard label/prediction pairs.

    APCER is the rate of attacks accepted as real, BPCER the rate of reals
    rejected as attacks.
    """
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    if labels.shape != predictions.shape or labels.ndim != 1:
        raise MetricError("labels and predictions must be matching 1-D arrays")
    n_attack = int((labels == 0).sum())
    n_real = int((labels == 1).sum())
    if n_attack == 0 or n_real == 0:
        raise MetricError("both classes must be present to compute ACER")
    apcer = float(((labels == 0) & (predictions == 1)).sum()) / n_attack
    bpcer = float(((labels == 1) & (predictions == 0)).sum()) / n_real
    return (apcer + bpcer) / 2.0


@dataclass
class Histogram:
    """Per-class counts over shared bins; counts sum to the sample count."""

    edges: np.ndarray
    real_counts: np.ndarray
    attack_counts: np.ndarray


def class_histogram(values, labels, bins: int = 20) -> Histogram:
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels)
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    real_counts, _ = np.histogram(values[labels == 1], bins=edges)
    attack_counts, _ = np.histogram(values[labels == 0], bins=edges)
    return Histogram(edges=edges, real_counts=real_counts, attack_counts=attack_counts)


@dataclass
class MetricsReport:
    """The four rates, the thresholds they were computed at, and score bins."""

    auc: float
    eer: float
    eer_threshold: float
    hter: float
    hter_threshold: float
    acer: float
    acer_thresholds: tuple[float, float, float]
    score_hist: Histogram
    threshold_source: str = "dev"

    def as_kv_lines(self) -> list[str]:
        return [
            f"auc={self.auc!r}",
            f"eer={self.eer!r}",
            f"eer_threshold={self.eer_threshold!r}",
            f"hter={self.hter!r}",
            f"hter_threshold={self.hter_threshold!r}",
            f"acer={self.acer!r}",
            f"acer_threshold_score={self.acer_thresholds[0]!r}",
            f"acer_threshold_var={self.acer_thresholds[1]!r}",
            f"acer_threshold_delta_kl={self.acer_thresholds[2]!r}",
            f"threshold_source={self.threshold_source}",
        ]
