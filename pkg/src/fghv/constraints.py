"""Constraint losses over feature/hypothesis cosines.

All quantities are built from cosine similarities and are therefore invariant
to positive rescaling of their vector inputs. Everything here is a pure
function of tensors and differentiates through the autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, clip, logaddexp
from .errors import ConfigError, ContractError, DegenerateFeatureError, ShapeError

# Vectors with a norm at or below this are rejected rather than divided by.
EPS_NORM = 1e-12


def _row_normalize(t: Tensor, name: str) -> Tensor:
    if t.data.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D stack of vectors, got shape {t.data.shape}")
    sq = (t * t).sum(axis=1, keepdims=True)
    norms = sq.sqrt()
    small = norms.data.reshape(-1) <= EPS_NORM
    if small.any():
        row = int(np.argmax(small))
        raise DegenerateFeatureError(
            f"{name}: row {row} has near-zero norm {norms.data.reshape(-1)[row]:.3e}"
        )
    return t / norms


def cosine_matrix(a: Tensor, b: Tensor, names: tuple[str, str] = ("a", "b")) -> Tensor:
    """Pairwise cosine similarities between rows of `a` and rows of `b`.

    Returns an [n x m] tensor clamped into [-1, 1] against rounding overshoot.
    """
    an = _row_normalize(a, names[0])
    bn = _row_normalize(b, names[1])
    if a.data.shape[1] != b.data.shape[1]:
        raise ShapeError(
            f"cosine: vector dims differ, {names[0]} has {a.data.shape[1]} "
            f"and {names[1]} has {b.data.shape[1]}"
        )
    return clip(an @ bn.T, -1.0, 1.0)


def cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two 1-D vectors, as a scalar tensor."""
    a2 = a.reshape((1, -1))
    b2 = b.reshape((1, -1))
    return cosine_matrix(a2, b2, names=("left vector", "right vector")).reshape(())


def variance_rows(cosines: Tensor) -> Tensor:
    """Unbiased sample variance along the last axis, one value per row.

    Uses a shifted two-pass formulation (deviations taken after subtracting
    the first column as a constant): variance is shift invariant, so the
    gradient is unchanged, and identical inputs yield exactly 0.0.
    """
    n = cosines.data.shape[-1]
    if n < 2:
        raise ConfigError(f"variance needs at least 2 hypotheses, got {n}")
    shift = Tensor(cosines.data[..., :1].copy())
    shifted = cosines - shift
    center = shifted.mean(axis=-1, keepdims=True)
    dev = shifted - center
    return (dev * dev).sum(axis=-1) / float(n - 1)


def variance_constraint(feature: Tensor, real_hyps: Tensor) -> Tensor:
    """Consistency of the feature's correlations with the real hypotheses.

    The unbiased sample variance of the cosines between `feature` and each
    row of `real_hyps`. Small for inputs whose correlations with every
    real-face hypothesis agree.
    """
    c = cosine_matrix(feature.reshape((1, -1)), real_hyps, names=("feature", "real hypotheses"))
    return variance_rows(c).reshape(())


def rcc_rows(cos_real: Tensor, cos_attack: Tensor, labels: np.ndarray) -> Tensor:
    """Relative correlation terms for rows of paired cosine matrices.

    For row b with label y in {0, 1}:
        mean_i [ ln(e^{cr[b,i]} + e^{ca[b,i]}) - y*cr[b,i] - (1-y)*ca[b,i] ]
    computed via logaddexp for stability.
    """
    if cos_real.data.shape != cos_attack.data.shape:
        raise ContractError(
            f"cosine matrices must align, got {cos_real.data.shape} and {cos_attack.data.shape}"
        )
    labels = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if labels.shape[0] != cos_real.data.shape[0]:
        raise ContractError(
            f"label count {labels.shape[0]} does not match row count {cos_real.data.shape[0]}"
        )
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ContractError("labels must be 0 or 1")
    y = Tensor(labels)
    matched = cos_real * y + cos_attack * (1.0 - y)
    return (logaddexp(cos_real, cos_attack) - matched).mean(axis=-1)


def relative_correlation(
    feature: Tensor, real_hyps: Tensor, attack_hyps: Tensor, label: int
) -> Tensor:
    """Cross-entropy-like pull toward the label-matched hypothesis set.

    Averages, over index-aligned hypothesis pairs, the log-sum-exp of the two
    cosines minus the cosine selected by `label` (1 selects the real side).
    Always positive.
    """
    if real_hyps.data.shape[0] != attack_hyps.data.shape[0]:
        raise ContractError(
            f"hypothesis lists must have equal length, got {real_hyps.data.shape[0]} "
            f"and {attack_hyps.data.shape[0]}"
        )
    f2 = feature.reshape((1, -1))
    cr = cosine_matrix(f2, real_hyps, names=("feature", "real hypotheses"))
    ca = cosine_matrix(f2, attack_hyps, names=("feature", "attack hypotheses"))
    return rcc_rows(cr, ca, np.array([label])).reshape(())


def distribution_discrimination(real_hyps: Tensor, attack_hyps: Tensor) -> Tensor:
    """Mean over all pairs of cos(g_i, h_j) - cos(g_i, g_j).

    Negative values mean the real hypotheses are mutually closer than they
    are to the attack hypotheses. Bounded in [-2, 2].
    """
    n_real = real_hyps.data.shape[0] if real_hyps.data.ndim == 2 else 0
    n_attack = attack_hyps.data.shape[0] if attack_hyps.data.ndim == 2 else 0
    if n_real == 0 or n_attack == 0:
        raise ContractError("hypothesis lists must be nonempty")
    if n_real != n_attack:
        raise ContractError(
            f"hypothesis lists must have equal length, got {n_real} and {n_attack}"
        )
    cross = cosine_matrix(real_hyps, attack_hyps, names=("real hypotheses", "attack hypotheses"))
    within = cosine_matrix(real_hyps, real_hyps, names=("real hypotheses", "real hypotheses"))
    return (cross - within).mean()


@dataclass
class LossBreakdown:
    """The three constraint values and their weighted combination.

    `overall` reconstructs exactly as (2*y - 1)*var + lambda1*rcc + lambda2*ddc
    evaluated left to right. Note the unbiased variance of cosines can reach
    n/(n-1), slightly above 1. `node` is the differentiable overall loss.
    """

    var: float
    rcc: float
    ddc: float
    overall: float
    y_prime: int
    lambda1: float
    lambda2: float
    node: Tensor


def overall_loss(
    feature: Tensor,
    real_hyps: Tensor,
    attack_hyps: Tensor,
    label: int,
    lambda1: float = 1.0,
    lambda2: float = 1.0,
) -> LossBreakdown:
    """Combine the three constraints for one sample.

    The variance term enters with sign +1 for real inputs and -1 for attack
    inputs (attack-to-real-hypothesis correlations are pushed apart, not
    together); the relative-correlation and discrimination terms are weighted
    by lambda1 and lambda2.
    """
    if label not in (0, 1):
        raise ContractError(f"label must be 0 or 1, got {label!r}")
    if not (np.isfinite(lambda1) and np.isfinite(lambda2)):
        raise ConfigError("loss weights must be finite")
    sign = float(2 * label - 1)
    var_t = variance_constraint(feature, real_hyps)
    rcc_t = relative_correlation(feature, real_hyps, attack_hyps, label)
    ddc_t = distribution_discrimination(real_hyps, attack_hyps)
    node = var_t * sign + rcc_t * float(lambda1) + ddc_t * float(lambda2)
    return LossBreakdown(
        var=var_t.item(),
        rcc=rcc_t.item(),
        ddc=ddc_t.item(),
        overall=node.item(),
        y_prime=label,
        lambda1=float(lambda1),
        lambda2=float(lambda2),
        node=node,
    )
