"""Deterministic synthetic multi-domain data plus dataset file I/O.

The construction mirrors the working premise that real samples from every
domain share structure while attacks do not: real inputs scatter along one
global direction mixed with a per-domain nuisance direction (mixing strength
`real_coherence`), attacks come from per-domain random cluster centers. The
split holds out the highest-numbered domain for testing; all other domains
form the training set.

Dataset files are comma-separated text with header `label,domain,x0,...`,
one row per sample, floats printed with 17 significant digits so a
write/read round trip is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, DataError

ATTACK_CLUSTERS_PER_DOMAIN = 3


@dataclass(frozen=True)
class SynthSpec:
    """Generation parameters; the output is a pure function of this spec."""

    d_in: int = 32
    n_domains: int = 4
    samples_per_class_per_domain: int = 250
    real_coherence: float = 0.7
    attack_spread: float = 1.0
    noise_sigma: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if self.n_domains < 2:
            raise ConfigError(f"need at least 2 domains for a held-out split, got {self.n_domains}")
        if self.d_in < 2:
            raise ConfigError(f"input dimension must be at least 2, got {self.d_in}")
        if self.samples_per_class_per_domain < 1:
            raise ConfigError("need at least 1 sample per class per domain")
        if not 0.0 <= self.real_coherence <= 1.0:
            raise ConfigError(f"real_coherence must lie in [0, 1], got {self.real_coherence}")
        if self.attack_spread <= 0.0:
            raise ConfigError(f"attack_spread must be positive, got {self.attack_spread}")
        if self.noise_sigma < 0.0:
            raise ConfigError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")


@dataclass
class Sample:
    x: np.ndarray
    label: int  # 1 = real, 0 = attack
    domain: int


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def generate(spec: SynthSpec) -> tuple[list[Sample], list[Sample]]:
    """Build (train, test) sample lists; test holds only the last domain."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    d = spec.d_in
    shared = _unit(rng.standard_normal(d))

    train: list[Sample] = []
    test: list[Sample] = []
    holdout = spec.n_domains - 1
    for domain in range(spec.n_domains):
        nuisance = rng.standard_normal(d)
        nuisance = _unit(nuisance - (nuisance @ shared) * shared)
        direction = spec.real_coherence * shared + (1.0 - spec.real_coherence) * nuisance
        if spec.real_coherence < 1.0:
            direction = _unit(direction)
        centers = spec.attack_spread * rng.standard_normal((ATTACK_CLUSTERS_PER_DOMAIN, d))
        sink = test if domain == holdout else train
        n = spec.samples_per_class_per_domain
        for _ in range(n):
            scale = rng.uniform(0.6, 1.4)
            x = scale * direction + spec.noise_sigma * rng.standard_normal(d)
            sink.append(Sample(x=x, label=1, domain=domain))
        for _ in range(n):
            center = centers[rng.integers(ATTACK_CLUSTERS_PER_DOMAIN)]
            x = center + spec.noise_sigma * rng.standard_normal(d)
            sink.append(Sample(x=x, label=0, domain=domain))
    return train, test


def spec_from_kv(pairs: dict[str, str]) -> SynthSpec:
    """Build a SynthSpec from string key=value pairs (config file or flags)."""
    known = {f.name: f.type for f in fields(SynthSpec)}
    kwargs = {}
    for key, value in pairs.items():
        if key not in known:
            raise ConfigError(f"unknown synth spec key {key!r}")
        caster = float if known[key] == "float" else int
        try:
            kwargs[key] = caster(value)
        except ValueError:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from None
    return SynthSpec(**kwargs)


def write_dataset(samples: list[Sample], path) -> None:
    if samples:
        d = samples[0].x.shape[0]
        header = "label,domain," + ",".join(f"x{i}" for i in range(d))
        rows = [header]
        for s in samples:
            coords = ",".join(format(v, ".17g") for v in s.x)
            rows.append(f"{s.label},{s.domain},{coords}")
        text = "\n".join(rows) + "\n"
    else:
        text = ""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def read_dataset(path) -> list[Sample]:
    """Parse a dataset file; empty files give an empty list."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        return []
    header = lines[0].split(",")
    if header[:2] != ["label", "domain"]:
        raise DataError(f"line 1: expected header starting with 'label,domain', got {lines[0]!r}")
    d = len(header) - 2
    if d < 1 or header[2:] != [f"x{i}" for i in range(d)]:
        raise DataError("line 1: malformed coordinate columns in header")
    samples: list[Sample] = []
    for number, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != d + 2:
            raise DataError(f"line {number}: expected {d + 2} fields, got {len(parts)}")
        if parts[0] not in ("0", "1"):
            raise DataError(f"line {number}: label must be 0 or 1, got {parts[0]!r}")
        try:
            domain = int(parts[1])
            x = np.array([float(v) for v in parts[2:]], dtype=np.float64)
        except ValueError:
            raise DataError(f"line {number}: malformed numeric field") from None
        if not np.isfinite(x).all():
            raise DataError(f"line {number}: non-finite coordinate")
        samples.append(Sample(x=x, label=int(parts[0]), domain=domain))
    return samples
