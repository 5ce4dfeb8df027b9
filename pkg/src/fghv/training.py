"""Training loop: batch construction, constraint combination, logging.

Each batch mixes real and attack samples by plain shuffling; the variance
term's sign switches per sample with its label, and a fresh set of latent
vectors is drawn per batch. The three constraint values are always computed
for the log even when a constraint is disabled; only enabled terms enter the
loss that is differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .autodiff import SGD, Tensor
from .constraints import cosine_matrix, distribution_discrimination, rcc_rows, variance_rows
from .errors import ConfigError
from .models import (
    Checkpoint,
    extract_feature,
    init_extractor,
    init_generator,
    sample_latents,
)
from .synthdata import Sample


@dataclass(frozen=True)
class RunConfig:
    """One experiment's knobs. Method defaults follow the published settings
    (momentum 0.9, weight decay 5e-4, lr 1e-3 dropping to 1e-4 after epoch
    50, lambda1 = lambda2 = 1, 14 hypotheses, 15 latent steps of length 1);
    sizes and epochs are desk-scale choices."""

    lambda1: float = 1.0
    lambda2: float = 1.0
    use_var: bool = True
    use_rcc: bool = True
    use_ddc: bool = True
    use_real_gen: bool = True
    use_attack_gen: bool = True
    n_hypotheses: int = 14
    ghvm_iterations: int = 15
    ghvm_step: float = 1.0
    lr: float = 1e-3
    lr_after_drop: float = 1e-4
    lr_drop_epoch: int = 50
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 60
    batch_size: int = 32
    seed: int = 0
    dev_fraction: float = 0.1
    latent_dim: int = 64
    hidden_dim: int = 128
    feature_dim: int = 128
    extractor_hidden: int = 128
    leaky_slope: float = 0.01

    def validate(self) -> None:
        if not self.use_real_gen:
            if self.use_var or self.use_rcc or self.use_ddc:
                raise ConfigError(
                    "all constraints reference real-face hypotheses; disable them "
                    "(use_var/use_rcc/use_ddc) when use_real_gen is off"
                )
        if not self.use_attack_gen and (self.use_rcc or self.use_ddc):
            raise ConfigError(
                "rcc and ddc reference known-attack hypotheses; disable use_rcc and "
                "use_ddc when use_attack_gen is off"
            )
        if not (self.use_var or self.use_rcc or self.use_ddc):
            raise ConfigError("no enabled constraints; training would have no objective")
        if self.n_hypotheses < 2:
            raise ConfigError(f"n_hypotheses must be at least 2, got {self.n_hypotheses}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if not 0.0 <= self.dev_fraction < 1.0:
            raise ConfigError(f"dev_fraction must lie in [0, 1), got {self.dev_fraction}")
        if self.ghvm_iterations < 0 or self.ghvm_step <= 0.0:
            raise ConfigError("ghvm settings must satisfy iterations >= 0 and step > 0")
        if not (np.isfinite(self.lambda1) and np.isfinite(self.lambda2)):
            raise ConfigError("lambda weights must be finite")

    def as_echo(self) -> dict[str, str]:
        return {f.name: str(getattr(self, f.name)) for f in fields(self)}


def config_from_kv(pairs: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    """Apply string key=value pairs on top of a base config."""
    base = base or RunConfig()
    known = {f.name: f.type for f in fields(RunConfig)}
    kwargs = {}
    for key, value in pairs.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        kind = known[key]
        try:
            if kind == "bool":
                lowered = value.strip().lower()
                if lowered not in ("true", "false", "1", "0"):
                    raise ValueError(value)
                kwargs[key] = lowered in ("true", "1")
            elif kind == "float":
                kwargs[key] = float(value)
            else:
                kwargs[key] = int(value)
        except ValueError:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from None
    return replace(base, **kwargs)


def split_dev(
    samples: list[Sample], fraction: float, rng: np.random.Generator
) -> tuple[list[Sample], list[Sample]]:
    """Carve a development split, stratified by (domain, label)."""
    if fraction == 0.0:
        return list(samples), []
    strata: dict[tuple[int, int], list[int]] = {}
    for i, s in enumerate(samples):
        strata.setdefault((s.domain, s.label), []).append(i)
    dev_idx: set[int] = set()
    for key in sorted(strata):
        idx = strata[key]
        n_dev = int(round(fraction * len(idx)))
        chosen = rng.permutation(len(idx))[:n_dev]
        dev_idx.update(idx[c] for c in chosen)
    fit = [s for i, s in enumerate(samples) if i not in dev_idx]
    dev = [s for i, s in enumerate(samples) if i in dev_idx]
    return fit, dev


@dataclass
class EpochStats:
    epoch: int
    lr: float
    var: float
    rcc: float
    ddc: float
    overall: float
    var_real: float
    var_attack: float
    rcc_real: float
    rcc_attack: float

    def as_line(self) -> str:
        return (
            f"epoch={self.epoch} lr={self.lr!r} var={self.var!r} rcc={self.rcc!r} "
            f"ddc={self.ddc!r} overall={self.overall!r} var_real={self.var_real!r} "
            f"var_attack={self.var_attack!r} rcc_real={self.rcc_real!r} "
            f"rcc_attack={self.rcc_attack!r}"
        )


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    epoch_stats: list[EpochStats]
    dev_samples: list[Sample]


def _class_mean(values: np.ndarray, mask: np.ndarray) -> float:
    return float(values[mask].mean()) if mask.any() else float("nan")


def run_training(config: RunConfig, train_samples: list[Sample]) -> TrainResult:
    """Train extractor and generators on the given samples.

    Deterministic for a fixed config: initialization, the dev split, batch
    order, and per-batch latents all derive from config.seed.
    """
    config.validate()
    if not train_samples:
        raise ConfigError("training set is empty")

    root = np.random.SeedSequence(config.seed)
    init_ss, split_ss, order_ss, latent_ss = root.spawn(4)
    init_rng = np.random.default_rng(init_ss)
    fit_samples, dev_samples = split_dev(
        train_samples, config.dev_fraction, np.random.default_rng(split_ss)
    )
    if not fit_samples:
        raise ConfigError("dev split consumed every training sample")

    d_in = fit_samples[0].x.shape[0]
    extractor = init_extractor(
        init_rng, d_in, [config.extractor_hidden], config.feature_dim, config.leaky_slope
    )
    real_gen = init_generator(
        init_rng, config.latent_dim, config.hidden_dim, config.feature_dim, config.leaky_slope
    )
    attack_gen = init_generator(
        init_rng, config.latent_dim, config.hidden_dim, config.feature_dim, config.leaky_slope
    )
    # Both generators always exist in the checkpoint; the use_* flags only
    # gate which constraints contribute gradient.
    params = extractor.tensors + real_gen.tensors + attack_gen.tensors
    opt = SGD(params, lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay)

    x_all = np.stack([s.x for s in fit_samples])
    y_all = np.array([s.label for s in fit_samples], dtype=np.float64)
    n = len(fit_samples)
    order_rng = np.random.default_rng(order_ss)
    latent_rng = np.random.default_rng(latent_ss)

    stats: list[EpochStats] = []
    for epoch in range(1, config.epochs + 1):
        opt.lr = config.lr if epoch <= config.lr_drop_epoch else config.lr_after_drop
        perm = order_rng.permutation(n)
        sums = {"var": 0.0, "rcc": 0.0, "overall": 0.0}
        class_sums = np.zeros(4)  # var_real, var_attack, rcc_real, rcc_attack
        class_counts = np.zeros(2)
        ddc_sum, n_batches = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            latents = sample_latents(config.n_hypotheses, config.latent_dim, latent_rng)

            features = extract_feature(xb, extractor)
            z = Tensor(latents)
            hyps_real = real_gen.forward(z)
            hyps_attack = attack_gen.forward(z)
            cos_real = cosine_matrix(features, hyps_real, names=("features", "real hypotheses"))
            cos_attack = cosine_matrix(
                features, hyps_attack, names=("features", "attack hypotheses")
            )

            var_b = variance_rows(cos_real)
            rcc_b = rcc_rows(cos_real, cos_attack, yb)
            ddc_t = distribution_discrimination(hyps_real, hyps_attack)
            sign = Tensor(2.0 * yb - 1.0)

            terms = []
            if config.use_var:
                terms.append((var_b * sign).mean())
            if config.use_rcc:
                terms.append(rcc_b.mean() * config.lambda1)
            if config.use_ddc:
                terms.append(ddc_t * config.lambda2)
            loss = terms[0]
            for term in terms[1:]:
                loss = loss + term
            loss.backward()
            opt.step()

            b = idx.size
            real_mask = yb == 1.0
            sums["var"] += float(var_b.data.sum())
            sums["rcc"] += float(rcc_b.data.sum())
            sums["overall"] += loss.item() * b
            class_sums += (
                float(var_b.data[real_mask].sum()),
                float(var_b.data[~real_mask].sum()),
                float(rcc_b.data[real_mask].sum()),
                float(rcc_b.data[~real_mask].sum()),
            )
            class_counts += (float(real_mask.sum()), float(b - real_mask.sum()))
            ddc_sum += ddc_t.item()
            n_batches += 1

        n_real, n_attack = float(class_counts[0]), float(class_counts[1])
        stats.append(
            EpochStats(
                epoch=epoch,
                lr=opt.lr,
                var=sums["var"] / n,
                rcc=sums["rcc"] / n,
                ddc=ddc_sum / n_batches,
                overall=sums["overall"] / n,
                var_real=float(class_sums[0]) / n_real if n_real else float("nan"),
                var_attack=float(class_sums[1]) / n_attack if n_attack else float("nan"),
                rcc_real=float(class_sums[2]) / n_real if n_real else float("nan"),
                rcc_attack=float(class_sums[3]) / n_attack if n_attack else float("nan"),
            )
        )

    checkpoint = Checkpoint(
        extractor=extractor,
        real_gen=real_gen,
        attack_gen=attack_gen,
        config=config.as_echo(),
    )
    return TrainResult(checkpoint=checkpoint, epoch_stats=stats, dev_samples=dev_samples)
