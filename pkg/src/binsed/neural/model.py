"""The CBRNN: per-feature convolutional branches, two BiLSTMs, sigmoid output."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import NumericError, ValidationError
from .layers import BatchNorm, BiLSTM, Conv2D, Dense, Dropout, MaxPoolFeature, ReLU, bce_grad_logits, clip_probs, sigmoid

FILTERS = 100
KERNEL = (3, 3)
HIDDEN = 128
FINAL_WIDTH = 5

# pool factors on the feature axis, keyed by input feature length
KNOWN_POOLS = {40: (2, 2, 2), 60: (2, 2, 3), 400: (5, 4, 4), 80: (2, 2, 4), 180: (3, 3, 4), 800: (5, 4, 8)}
SINGLE_LAYER_TYPES = ("tdoa", "domfreq")


def default_pools(length: int) -> tuple[int, int, int]:
    """Three pool factors taking ``length`` down to 5."""
    if length in KNOWN_POOLS:
        return KNOWN_POOLS[length]
    if length % FINAL_WIDTH:
        raise ValidationError(f"feature length {length} is not a multiple of {FINAL_WIDTH}")
    target = length // FINAL_WIDTH
    best = None
    for a in range(1, target + 1):
        if target % a:
            continue
        for b in range(1, target // a + 1):
            if (target // a) % b:
                continue
            c = target // a // b
            cand = tuple(sorted((a, b, c), reverse=True))
            if best is None or max(cand) < max(best):
                best = cand
    return best


@dataclass(frozen=True)
class ConvSpec:
    filters: int
    kernel: tuple[int, int]
    pool: int


@dataclass(frozen=True)
class BranchSpec:
    feature_type: str
    length: int
    layers_in: int
    conv_layers: tuple[ConvSpec, ...]

    def __post_init__(self):
        width = self.length
        for c in self.conv_layers:
            if width % c.pool:
                raise ValidationError(f"{self.feature_type}: pool {c.pool} does not divide width {width}")
            width //= c.pool

    @property
    def out_length(self) -> int:
        w = self.length
        for c in self.conv_layers:
            w //= c.pool
        return w

    @property
    def out_width(self) -> int:
        return self.out_length * self.conv_layers[-1].filters

    @classmethod
    def default(cls, feature_type: str, length: int, layers_in: int, filters: int = FILTERS,
                kernel=KERNEL) -> "BranchSpec":
        kernel = tuple(kernel)
        if feature_type in SINGLE_LAYER_TYPES:
            convs = (ConvSpec(filters, kernel, 1),)
        else:
            convs = tuple(ConvSpec(filters, kernel, p) for p in default_pools(length))
        return cls(feature_type, length, layers_in, convs)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        convs = tuple(ConvSpec(c["filters"], tuple(c["kernel"]), c["pool"]) for c in d["conv_layers"])
        return cls(d["feature_type"], d["length"], d["layers_in"], convs)


@dataclass
class Architecture:
    branches: tuple[BranchSpec, ...]
    class_list: tuple[str, ...]
    hidden: int = HIDDEN
    dropout: float = 0.5
    layering: str = "volume"
    feature_set: tuple[str, ...] = field(default_factory=tuple)

    @property
    def merged_width(self) -> int:
        return sum(b.out_width for b in self.branches)

    def to_dict(self):
        return {
            "branches": [b.to_dict() for b in self.branches],
            "class_list": list(self.class_list),
            "hidden": self.hidden,
            "dropout": self.dropout,
            "layering": self.layering,
            "feature_set": list(self.feature_set),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(BranchSpec.from_dict(b) for b in d["branches"]),
            tuple(d["class_list"]),
            d["hidden"],
            d["dropout"],
            d.get("layering", "volume"),
            tuple(d.get("feature_set", ())),
        )


class Branch:
    def __init__(self, spec: BranchSpec, dropout: float, rng, dtype):
        self.spec = spec
        self.blocks = []
        c_in = spec.layers_in
        for i, c in enumerate(spec.conv_layers):
            self.blocks.append([
                (f"conv{i}", Conv2D(c_in, c.filters, c.kernel, rng, dtype)),
                (f"bn{i}", BatchNorm(c.filters, dtype)),
                (f"relu{i}", ReLU()),
                (f"pool{i}", MaxPoolFeature(c.pool)),
                (f"drop{i}", Dropout(dropout)),
            ])
            c_in = c.filters

    def layers(self):
        for block in self.blocks:
            yield from block

    def forward(self, x, train, rng):
        for _, layer in self.layers():
            x = layer.forward(x, train, rng)
        return x

    def backward(self, dout):
        for _, layer in reversed(list(self.layers())):
            dout = layer.backward(dout)
        return dout


class CBRNN:
    """Multi-branch convolutional bidirectional recurrent network.

    ``forward`` takes a dict ``feature_type -> (B, T, L, C)`` array and
    returns (B, T, K) probabilities.
    """

    def __init__(self, arch: Architecture, seed: int = 0, dtype=np.float32):
        if not arch.branches:
            raise ValidationError("model needs at least one branch")
        self.arch = arch
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.branches = {b.feature_type: Branch(b, arch.dropout, rng, dtype) for b in arch.branches}
        width = arch.merged_width
        self.rnn = [BiLSTM(width, arch.hidden, rng, dtype), BiLSTM(2 * arch.hidden, arch.hidden, rng, dtype)]
        self.rnn_drop = [Dropout(arch.dropout), Dropout(arch.dropout)]
        self.out = Dense(2 * arch.hidden, len(arch.class_list), rng, dtype)

    # -- parameter plumbing -------------------------------------------------

    def named_layers(self):
        for ft, br in self.branches.items():
            for name, layer in br.layers():
                yield f"{ft}.{name}", layer
        for i, (rnn, drop) in enumerate(zip(self.rnn, self.rnn_drop)):
            yield f"rnn{i}", rnn
            yield f"rnn{i}.drop", drop
        yield "out", self.out

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{pn}": arr for ln, layer in self.named_layers() for pn, arr in layer.params.items()}

    @property
    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{bn}": arr for ln, layer in self.named_layers() for bn, arr in layer.buffers.items()}

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{pn}": layer.grads[pn] for ln, layer in self.named_layers() for pn in layer.params}

    def state(self) -> dict[str, np.ndarray]:
        """Copy of all parameters and buffers."""
        return {k: v.copy() for k, v in {**self.params, **self.buffers}.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        current = {**self.params, **self.buffers}
        missing = set(current) - set(state)
        if missing:
            raise ValidationError(f"state is missing blocks: {sorted(missing)}")
        for k, arr in current.items():
            src = np.asarray(state[k])
            if src.shape != arr.shape:
                raise ValidationError(f"block {k}: shape {src.shape}, expected {arr.shape}")
            arr[...] = src

    # -- passes -------------------------------------------------------------

    def _check_inputs(self, volumes):
        missing = set(self.branches) - set(volumes)
        if missing:
            raise ValidationError(f"missing feature volumes for branches: {sorted(missing)}")
        Ts = {v.shape[1] for v in volumes.values()}
        if len(Ts) != 1:
            raise ValidationError(f"feature volumes disagree on T: {sorted(Ts)}")
        for ft, br in self.branches.items():
            L, C = volumes[ft].shape[2:]
            if (L, C) != (br.spec.length, br.spec.layers_in):
                raise ValidationError(f"{ft}: volume cells {L}x{C}, model expects {br.spec.length}x{br.spec.layers_in}")

    def merged_features(self, volumes, train=False, rng=None):
        """Per-frame flattened and concatenated branch outputs, (B, T, merged_width)."""
        self._check_inputs(volumes)
        parts = []
        self._branch_shapes = []
        for ft, br in self.branches.items():
            y = br.forward(np.asarray(volumes[ft], dtype=self.dtype), train, rng)
            self._branch_shapes.append(y.shape)
            B, T, L, F = y.shape
            parts.append(y.reshape(B, T, L * F))
        return np.concatenate(parts, axis=-1)

    def logits(self, volumes, train=False, rng=None):
        h = self.merged_features(volumes, train, rng)
        for rnn, drop in zip(self.rnn, self.rnn_drop):
            h = drop.forward(rnn.forward(h, train, rng), train, rng)
        return self.out.forward(h, train, rng)

    def forward(self, volumes, train=False, rng=None):
        """Probabilities (B, T, K); single (T, L, C) volumes give (T, K)."""
        single = next(iter(volumes.values())).ndim == 3
        if single:
            volumes = {k: v[None] for k, v in volumes.items()}
        if train and rng is None:
            raise ValidationError("training-mode forward needs an rng for dropout")
        p = clip_probs(sigmoid(self.logits(volumes, train, rng)))
        return p[0] if single else p

    def backward(self, probs, targets, mask=None):
        """Gradients of the mean BCE loss, after a ``forward`` call on the same batch."""
        d = bce_grad_logits(probs, np.asarray(targets, dtype=probs.dtype), mask)
        d = self.out.backward(d)
        for rnn, drop in zip(reversed(self.rnn), reversed(self.rnn_drop)):
            d = rnn.backward(drop.backward(d))
        offset = 0
        for (ft, br), shape in zip(self.branches.items(), self._branch_shapes):
            B, T, L, F = shape
            part = d[..., offset:offset + L * F].reshape(shape)
            offset += L * F
            br.backward(np.ascontiguousarray(part))
        grads = self.grads
        for name, g in grads.items():
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient in parameter block {name}")
        return grads


def build_model(volume_shapes: dict[str, tuple[int, int]], class_list, hidden=HIDDEN, dropout=0.5,
                filters=FILTERS, kernel=KERNEL, seed=0, dtype=np.float32, layering="volume",
                feature_set=()) -> CBRNN:
    """Construct a CBRNN from ``feature_type -> (L, C)`` input shapes."""
    branches = tuple(BranchSpec.default(ft, L, C, filters, kernel) for ft, (L, C) in volume_shapes.items())
    arch = Architecture(branches, tuple(class_list), hidden, dropout, layering, tuple(feature_set))
    return CBRNN(arch, seed, dtype)
