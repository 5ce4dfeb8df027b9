"""Test-time hypothesis verification.

Two views of "is this input a real face":

* consistency scoring — the mean two-way softmax over cosines to the paired
  real/attack hypotheses, plus the variance of the real-side cosines;
* latent drift scoring — descend each hypothesis latent on the real-labelled
  relative-correlation objective, then measure how far the optimized latents
  drifted from the standard normal via the change in mean per-dimension KL
  divergence (delta_kl). Real inputs need little correction, so their drift
  stays small.

Scoring reads frozen parameters only, so a batch of inputs may be scored
concurrently with one latent workspace per input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, logaddexp
from .constraints import cosine_matrix, variance_rows
from .errors import ConfigError, ContractError, OptimizationError
from .models import ExtractorParams, GeneratorParams, HypothesisBatch, extract_feature, \
    generate_hypotheses, sample_latents

CROSS_DATASET = "cross-dataset"
CROSS_TYPE = "cross-type"
MODES = (CROSS_DATASET, CROSS_TYPE)


@dataclass(frozen=True)
class GhvmConfig:
    """Latent-descent settings: M iterations of step alpha."""

    iterations: int = 15
    step: float = 1.0
    sigma_floor: float = 1e-6

    def validate(self) -> None:
        if self.iterations < 0:
            raise ConfigError(f"iterations must be nonnegative, got {self.iterations}")
        if self.step <= 0.0:
            raise ConfigError(f"step must be positive, got {self.step}")
        if self.sigma_floor <= 0.0:
            raise ConfigError(f"sigma floor must be positive, got {self.sigma_floor}")


@dataclass
class ScoreTriple:
    """The three classification bases for one input."""

    softmax_mean: float
    var: float
    delta_kl: float


@dataclass
class ClassifyThresholds:
    score: float
    var: float
    delta_kl: float


@dataclass
class LatentTrajectory:
    """Start and end of a latent optimization run plus its KL bookkeeping."""

    initial: np.ndarray
    final: np.ndarray
    kl_initial: float
    kl_final: float
    sigma_clamps: int = 0

    @property
    def delta_kl(self) -> float:
        return self.kl_final - self.kl_initial


def kl_per_dim(mu: float, sigma: float, sigma_floor: float = 1e-6) -> float:
    """KL divergence of N(mu, sigma^2) from N(0, 1) for one dimension.

    sigma is clamped to sigma_floor to dodge the log singularity.
    """
    s = max(float(sigma), float(sigma_floor))
    return -math.log(s) + (s * s + mu * mu) / 2.0 - 0.5


def _kl_stats(latents: np.ndarray, sigma_floor: float) -> tuple[float, int]:
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[0] < 2:
        raise ConfigError(f"KL estimate needs an [n>=2, dim] latent array, got {latents.shape}")
    mu = latents.mean(axis=0)
    sigma = np.sqrt(latents.var(axis=0, ddof=1))
    clamped = sigma < sigma_floor
    sigma = np.maximum(sigma, sigma_floor)
    kl = -np.log(sigma) + (sigma * sigma + mu * mu) / 2.0 - 0.5
    return float(kl.mean()), int(clamped.sum())


def kl_mean(latents: np.ndarray, sigma_floor: float = 1e-6) -> float:
    """Mean over dimensions of the per-dimension KL from the standard normal.

    mu and sigma are the per-dimension sample mean and (unbiased) sample
    standard deviation over the latent rows.
    """
    value, _ = _kl_stats(latents, sigma_floor)
    return value


def _feature_row(feature) -> Tensor:
    t = feature if isinstance(feature, Tensor) else Tensor(np.asarray(feature, dtype=np.float64))
    return t.reshape((1, -1))


def fhvm_score(feature, batch: HypothesisBatch) -> tuple[float, float]:
    """Consistency scores for one input feature against a hypothesis batch.

    Returns (softmax_mean, var): the mean over i of the two-way softmax
    weight on the real side of pair i, and the unbiased variance of the
    real-side cosines. softmax_mean lies strictly inside (0, 1).
    """
    if batch.count < 2:
        raise ConfigError(f"scoring needs at least 2 hypotheses, got {batch.count}")
    f2 = _feature_row(feature)
    cr = cosine_matrix(f2, batch.real, names=("feature", "real hypotheses")).data[0]
    ca = cosine_matrix(f2, batch.attack, names=("feature", "attack hypotheses")).data[0]
    softmax_real = 1.0 / (1.0 + np.exp(ca - cr))
    var = variance_rows(Tensor(cr.reshape(1, -1))).item()
    return float(softmax_real.mean()), var


def latent_objective(
    feature: Tensor, latents: Tensor, real_gen: GeneratorParams, attack_gen: GeneratorParams
) -> Tensor:
    """Sum over hypothesis indices of the real-labelled correlation term.

    Per index i: ln(e^{cos(f, g_i)} + e^{cos(f, h_i)}) - cos(f, g_i). Indices
    are independent, so the gradient with respect to latent i is exactly the
    per-index term's gradient, matching a unit descent step per latent.
    """
    real_hyps = real_gen.forward(latents)
    attack_hyps = attack_gen.forward(latents)
    f2 = _feature_row(feature)
    cr = cosine_matrix(f2, real_hyps, names=("feature", "real hypotheses"))
    ca = cosine_matrix(f2, attack_hyps, names=("feature", "attack hypotheses"))
    return (logaddexp(cr, ca) - cr).sum()


def optimize_latents(
    feature,
    latents: np.ndarray,
    real_gen: GeneratorParams,
    attack_gen: GeneratorParams,
    config: GhvmConfig = GhvmConfig(),
) -> LatentTrajectory:
    """Descend each latent for M steps on the real-labelled objective.

    Plain gradient descent, no momentum. Generators are used through frozen
    views, so caller-side weight gradients are untouched. KL values are
    estimated on the initial and final latents with the same estimator, so
    M=0 (or a gradient-free objective) yields delta_kl of exactly 0.
    """
    config.validate()
    z = np.array(latents, dtype=np.float64, copy=True)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ConfigError(f"latent optimization needs an [n>=2, dim] array, got {z.shape}")
    f = _feature_row(feature).detach()
    frozen_real = real_gen.frozen()
    frozen_attack = attack_gen.frozen()
    z0 = z.copy()
    for iteration in range(config.iterations):
        zt = Tensor(z, requires_grad=True)
        latent_objective(f, zt, frozen_real, frozen_attack).backward()
        grad = zt.grad
        if grad is None or not np.isfinite(grad).all():
            raise OptimizationError(f"non-finite latent gradient at iteration {iteration}")
        z = z - config.step * grad
    kl_initial, clamps0 = _kl_stats(z0, config.sigma_floor)
    kl_final, clamps1 = _kl_stats(z, config.sigma_floor)
    return LatentTrajectory(
        initial=z0,
        final=z,
        kl_initial=kl_initial,
        kl_final=kl_final,
        sigma_clamps=clamps0 + clamps1,
    )


def ghvm_score(
    feature,
    batch: HypothesisBatch,
    real_gen: GeneratorParams,
    attack_gen: GeneratorParams,
    config: GhvmConfig = GhvmConfig(),
) -> float:
    """delta_kl drift of the batch latents after optimizing them for `feature`."""
    trajectory = optimize_latents(feature, batch.latents, real_gen, attack_gen, config)
    return trajectory.delta_kl


def epistemic_uncertainty(feature, real_hyps: Tensor) -> float:
    """Population variance of the feature-to-real-hypothesis cosines.

    Treating each generated hypothesis as one sampled model realization, the
    spread of its output is the usual variance-of-sampled-outputs uncertainty
    estimate. Equals the unbiased variance scaled by (n-1)/n.
    """
    if real_hyps.data.shape[0] < 2:
        raise ConfigError(f"uncertainty needs at least 2 hypotheses, got {real_hyps.data.shape[0]}")
    f2 = _feature_row(feature)
    c = cosine_matrix(f2, real_hyps, names=("feature", "real hypotheses")).data[0]
    return float(np.mean(c * c) - np.mean(c) ** 2)


def classify(triple: ScoreTriple, thresholds: ClassifyThresholds, mode: str) -> int:
    """Predict 1 (real) or 0 (attack) from a score triple.

    cross-dataset mode thresholds the softmax mean alone; cross-type mode
    additionally vetoes inputs with high variance or high delta_kl.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}, expected one of {MODES}")
    values = (thresholds.score, thresholds.var, thresholds.delta_kl)
    if not all(np.isfinite(v) for v in values):
        raise ConfigError(f"thresholds must be finite, got {values}")
    if mode == CROSS_DATASET:
        return int(triple.softmax_mean >= thresholds.score)
    return int(
        triple.softmax_mean >= thresholds.score
        and triple.var <= thresholds.var
        and triple.delta_kl <= thresholds.delta_kl
    )


def score_sample(
    x: np.ndarray,
    extractor: ExtractorParams,
    real_gen: GeneratorParams,
    attack_gen: GeneratorParams,
    n_hypotheses: int,
    rng: int | np.random.Generator,
    ghvm: GhvmConfig = GhvmConfig(),
) -> ScoreTriple:
    """Full score triple for one raw input with freshly sampled hypotheses."""
    feature = extract_feature(x, extractor)
    latents = sample_latents(n_hypotheses, real_gen.latent_dim, rng)
    batch = generate_hypotheses(latents, real_gen, attack_gen)
    softmax_mean, var = fhvm_score(feature, batch)
    delta = ghvm_score(feature, batch, real_gen, attack_gen, ghvm)
    return ScoreTriple(softmax_mean=softmax_mean, var=var, delta_kl=delta)
