"""Feature extractor, the two hypothesis generators, latents, checkpoints.

Both generators are two affine layers with a leaky-ReLU between them, mapping
a standard-normal latent to a feature-space hypothesis. The extractor is a
small MLP standing in for an image backbone on raw vector inputs.

Checkpoint file format (external interface, version 1):

    FGHVCKPT 1\n
    config <key> <value>\n          zero or more, value may contain spaces
    slope <section> <float>\n       for extractor, real_gen, attack_gen
    array <name> <ndim> <d0> ...\n  one per weight array, in payload order
    payload <n_floats>\n
    <n_floats * 8 bytes of little-endian float64>

The header is UTF-8 text (human-debuggable); the payload is bit-exact, so a
save/load round trip reproduces all weights exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, leaky_relu, linear_forward
from .errors import CheckpointError, ConfigError, DataError

CHECKPOINT_MAGIC = "FGHVCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class GeneratorParams:
    """Weights of one feature generation network (latent -> feature)."""

    w1: Tensor  # [hidden, latent_dim]
    b1: Tensor  # [hidden]
    w2: Tensor  # [feature_dim, hidden]
    b2: Tensor  # [feature_dim]
    slope: float

    @property
    def latent_dim(self) -> int:
        return self.w1.data.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.w2.data.shape[0]

    @property
    def tensors(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, latents: Tensor) -> Tensor:
        """Map [n x latent_dim] latents to [n x feature_dim] hypotheses."""
        hidden = leaky_relu(linear_forward(latents, self.w1, self.b1), self.slope)
        return linear_forward(hidden, self.w2, self.b2)

    def frozen(self) -> "GeneratorParams":
        """Gradient-free view sharing the same weight buffers."""
        return GeneratorParams(
            w1=self.w1.detach(), b1=self.b1.detach(),
            w2=self.w2.detach(), b2=self.b2.detach(),
            slope=self.slope,
        )


@dataclass
class ExtractorParams:
    """MLP mapping raw inputs to liveness features (leaky-ReLU between layers)."""

    layers: list[tuple[Tensor, Tensor]]  # (weight [out, in], bias [out]) pairs
    slope: float

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].data.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.layers[-1][0].data.shape[0]

    @property
    def tensors(self) -> list[Tensor]:
        return [t for w, b in self.layers for t in (w, b)]

    def forward(self, x: Tensor) -> Tensor:
        out = x
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            out = linear_forward(out, w, b)
            if i != last:
                out = leaky_relu(out, self.slope)
        return out

    def frozen(self) -> "ExtractorParams":
        return ExtractorParams(
            layers=[(w.detach(), b.detach()) for w, b in self.layers],
            slope=self.slope,
        )


def glorot_uniform(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


def init_generator(
    rng: np.random.Generator,
    latent_dim: int,
    hidden_dim: int,
    feature_dim: int,
    slope: float,
) -> GeneratorParams:
    return GeneratorParams(
        w1=Tensor(glorot_uniform(rng, hidden_dim, latent_dim), requires_grad=True),
        b1=Tensor(np.zeros(hidden_dim), requires_grad=True),
        w2=Tensor(glorot_uniform(rng, feature_dim, hidden_dim), requires_grad=True),
        b2=Tensor(np.zeros(feature_dim), requires_grad=True),
        slope=slope,
    )


def init_extractor(
    rng: np.random.Generator,
    input_dim: int,
    hidden_dims: list[int],
    feature_dim: int,
    slope: float,
) -> ExtractorParams:
    dims = [input_dim, *hidden_dims, feature_dim]
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        layers.append(
            (
                Tensor(glorot_uniform(rng, d_out, d_in), requires_grad=True),
                Tensor(np.zeros(d_out), requires_grad=True),
            )
        )
    return ExtractorParams(layers=layers, slope=slope)


def sample_latents(n: int, dim: int, rng: int | np.random.Generator) -> np.ndarray:
    """Draw n standard-normal latent vectors, deterministic for a fixed seed.

    At least 2 are required because downstream variances use an n-1 divisor.
    """
    if n < 2:
        raise ConfigError(f"need at least 2 latent samples, got {n}")
    if dim < 1:
        raise ConfigError(f"latent dimension must be positive, got {dim}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return rng.standard_normal((n, dim))


@dataclass
class HypothesisBatch:
    """N latents plus the real/attack hypotheses generated from them."""

    latents: np.ndarray  # [n, latent_dim]
    real: Tensor  # [n, feature_dim]
    attack: Tensor  # [n, feature_dim]

    @property
    def count(self) -> int:
        return self.latents.shape[0]


def generate_hypotheses(
    latents: np.ndarray, real_gen: GeneratorParams, attack_gen: GeneratorParams
) -> HypothesisBatch:
    """Run the same latents through both generators, index-aligned.

    Pure function of (latents, params): the i-th real and attack hypotheses
    come from the same latent, so downstream pairings are well defined.
    """
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[0] == 0:
        raise ConfigError(f"latents must be a nonempty [n, dim] array, got shape {latents.shape}")
    if real_gen.latent_dim != attack_gen.latent_dim:
        raise ConfigError(
            f"generator latent dims differ: {real_gen.latent_dim} vs {attack_gen.latent_dim}"
        )
    if real_gen.feature_dim != attack_gen.feature_dim:
        raise ConfigError(
            f"generator feature dims differ: {real_gen.feature_dim} vs {attack_gen.feature_dim}"
        )
    if latents.shape[1] != real_gen.latent_dim:
        raise ConfigError(
            f"latent dim {latents.shape[1]} does not match generators ({real_gen.latent_dim})"
        )
    z = Tensor(latents)
    return HypothesisBatch(latents=latents, real=real_gen.forward(z), attack=attack_gen.forward(z))


def extract_feature(x: np.ndarray, extractor: ExtractorParams) -> Tensor:
    """Forward a raw input (or a [batch, dim] stack) through the extractor."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != extractor.input_dim:
        raise DataError(
            f"input dimension {arr.shape[-1]} does not match extractor ({extractor.input_dim})"
        )
    out = extractor.forward(Tensor(arr))
    return out.reshape((extractor.feature_dim,)) if single else out


@dataclass
class Checkpoint:
    """Trained parameters plus an echo of the configuration that built them."""

    extractor: ExtractorParams
    real_gen: GeneratorParams
    attack_gen: GeneratorParams
    config: dict[str, str] = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION


def _named_arrays(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    named = []
    for i, (w, b) in enumerate(ckpt.extractor.layers):
        named.append((f"extractor.w{i}", w.data))
        named.append((f"extractor.b{i}", b.data))
    for prefix, gen in (("real_gen", ckpt.real_gen), ("attack_gen", ckpt.attack_gen)):
        named.append((f"{prefix}.w1", gen.w1.data))
        named.append((f"{prefix}.b1", gen.b1.data))
        named.append((f"{prefix}.w2", gen.w2.data))
        named.append((f"{prefix}.b2", gen.b2.data))
    return named


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    named = _named_arrays(ckpt)
    lines = [f"{CHECKPOINT_MAGIC} {ckpt.version}"]
    for key in sorted(ckpt.config):
        lines.append(f"config {key} {ckpt.config[key]}")
    lines.append(f"slope extractor {ckpt.extractor.slope:.17g}")
    lines.append(f"slope real_gen {ckpt.real_gen.slope:.17g}")
    lines.append(f"slope attack_gen {ckpt.attack_gen.slope:.17g}")
    total = 0
    for name, arr in named:
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"array {name} {arr.ndim} {dims}")
        total += arr.size
    lines.append(f"payload {total}")
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in named)
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        fh.write(payload)


def load_checkpoint(path, trainable: bool = False) -> Checkpoint:
    """Parse a checkpoint file; raises CheckpointError on any defect."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc

    marker = b"\npayload "
    cut = blob.find(marker)
    if cut < 0:
        raise CheckpointError("corrupt checkpoint: missing payload marker")
    newline = blob.find(b"\n", cut + 1)
    if newline < 0:
        raise CheckpointError("corrupt checkpoint: unterminated payload header")
    try:
        header = blob[:newline].decode("utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise CheckpointError("corrupt checkpoint: header is not UTF-8") from exc
    payload = blob[newline + 1 :]

    first = header[0].split()
    if len(first) != 2 or first[0] != CHECKPOINT_MAGIC:
        raise CheckpointError("corrupt checkpoint: bad magic line")
    if first[1] != str(CHECKPOINT_VERSION):
        raise CheckpointError(
            f"unsupported checkpoint version {first[1]} (expected {CHECKPOINT_VERSION})"
        )

    config: dict[str, str] = {}
    slopes: dict[str, float] = {}
    specs: list[tuple[str, tuple[int, ...]]] = []
    declared = None
    for line in header[1:]:
        kind, _, rest = line.partition(" ")
        if kind == "config":
            key, _, value = rest.partition(" ")
            config[key] = value
        elif kind == "slope":
            section, _, value = rest.partition(" ")
            slopes[section] = float(value)
        elif kind == "array":
            parts = rest.split()
            name, ndim = parts[0], int(parts[1])
            dims = tuple(int(d) for d in parts[2 : 2 + ndim])
            if len(dims) != ndim:
                raise CheckpointError(f"corrupt checkpoint: bad array line for {name}")
            specs.append((name, dims))
        elif kind == "payload":
            declared = int(rest)
        else:
            raise CheckpointError(f"corrupt checkpoint: unknown header line {line!r}")

    total = sum(int(np.prod(dims)) for _, dims in specs)
    if declared != total:
        raise CheckpointError(
            f"corrupt checkpoint: payload declares {declared} floats, arrays need {total}"
        )
    if len(payload) != total * 8:
        raise CheckpointError(
            f"corrupt checkpoint: payload has {len(payload)} bytes, expected {total * 8}"
        )

    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for name, dims in specs:
        size = int(np.prod(dims))
        arrays[name] = (
            np.frombuffer(payload, dtype="<f8", count=size, offset=offset * 8)
            .astype(np.float64)
            .reshape(dims)
        )
        offset += size

    missing = {"extractor", "real_gen", "attack_gen"} - set(slopes)
    if missing:
        raise CheckpointError(f"corrupt checkpoint: missing slope entries for {sorted(missing)}")

    def tensor(name: str) -> Tensor:
        if name not in arrays:
            raise CheckpointError(f"corrupt checkpoint: missing array {name}")
        return Tensor(arrays[name], requires_grad=trainable)

    n_layers = sum(1 for name in arrays if name.startswith("extractor.w"))
    if n_layers == 0:
        raise CheckpointError("corrupt checkpoint: no extractor layers")
    extractor = ExtractorParams(
        layers=[(tensor(f"extractor.w{i}"), tensor(f"extractor.b{i}")) for i in range(n_layers)],
        slope=slopes["extractor"],
    )

    def generator(prefix: str) -> GeneratorParams:
        return GeneratorParams(
            w1=tensor(f"{prefix}.w1"), b1=tensor(f"{prefix}.b1"),
            w2=tensor(f"{prefix}.w2"), b2=tensor(f"{prefix}.b2"),
            slope=slopes[prefix],
        )

    return Checkpoint(
        extractor=extractor,
        real_gen=generator("real_gen"),
        attack_gen=generator("attack_gen"),
        config=config,
        version=CHECKPOINT_VERSION,
    )
