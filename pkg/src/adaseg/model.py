"""Multi-stage dilated temporal convolutional backbone with domain heads.

Each stage maps a frame-major input to per-frame class logits: a 1x1
input conv to the working width, a stack of dilated residual layers
(dilation doubling per layer), and a 1x1 prediction head. Stage 1 reads
the input features; every later stage reads the previous stage's row
softmax. Designated stages additionally carry two small heads used only
during adaptation: a per-frame binary domain classifier and a dense
classifier over segment-order permutations.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError

CHECKPOINT_MAGIC = b"ASCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class StageConfig:
    num_classes: int
    layers: int = 10
    filters: int = 64
    kernel: int = 3

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if self.filters < 1:
            raise ValueError(f"filters must be >= 1, got {self.filters}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd and positive, got {self.kernel}")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    stage: StageConfig
    num_stages: int = 4
    da_stages: tuple[int, ...] = (2, 3)
    segment_count: int = 2

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_stages < 1:
            raise ValueError(f"num_stages must be >= 1, got {self.num_stages}")
        object.__setattr__(self, "da_stages", tuple(self.da_stages))
        if len(set(self.da_stages)) != len(self.da_stages):
            raise ValueError(f"da_stages has duplicates: {self.da_stages}")
        for s in self.da_stages:
            if not 1 <= s <= self.num_stages:
                raise ValueError(f"da_stages entry {s} outside 1..{self.num_stages}")
        if self.segment_count < 1:
            raise ValueError(f"segment_count must be >= 1, got {self.segment_count}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["stage"] = StageConfig(**d["stage"])
        d["da_stages"] = tuple(d["da_stages"])
        return cls(**d)


@dataclass
class StageOutput:
    features: ad.Tensor  # (T, filters) activations feeding the prediction head
    logits: ad.Tensor    # (T, num_classes)
    probs: ad.Tensor     # row softmax of logits


def permutation_count(m: int) -> int:
    """Number of balanced source/target orderings of 2m segments."""
    if m < 1:
        raise ValueError(f"segment count must be >= 1, got {m}")
    return math.comb(2 * m, m)


def expected_parameter_count(config: ModelConfig) -> int:
    """Closed-form parameter count for a given configuration.

    One stage with input width d: d*F + F for the input conv, per layer
    F*F*k + F (dilated conv) plus F*F + F (pointwise), and C*F + C for the
    head. Each adaptation stage adds F*F + F + 2F + 2 (binary domain head)
    and (2m*F)*F + F + P*F + P (order head, P = C(2m, m)).
    """
    sc = config.stage
    f, k, c = sc.filters, sc.kernel, sc.num_classes

    def stage(d_in: int) -> int:
        return (d_in * f + f
                + sc.layers * (f * f * k + f + f * f + f)
                + c * f + c)

    total = stage(config.input_dim) + (config.num_stages - 1) * stage(c)
    m = config.segment_count
    p = permutation_count(m)
    per_da = (f * f + f + 2 * f + 2) + (2 * m * f * f + f + p * f + p)
    return total + len(config.da_stages) * per_da


def receptive_field(layers: int) -> int:
    """Frames seen by one stage: 1 + 2 * (2^layers - 1) with kernel 3."""
    return 1 + 2 * (2 ** layers - 1)


class SegmentationModel:
    """Parameter container plus forward passes for backbone and heads."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, ad.Tensor] = {}
        rng = np.random.default_rng(seed)
        sc = config.stage
        for s in range(1, config.num_stages + 1):
            d_in = config.input_dim if s == 1 else sc.num_classes
            self._add_weight(rng, f"s{s}.in.w", (sc.filters, d_in), fan_in=d_in)
            self._add_bias(f"s{s}.in.b", sc.filters)
            for l in range(sc.layers):
                self._add_weight(rng, f"s{s}.l{l}.dconv.w",
                                 (sc.filters, sc.filters, sc.kernel),
                                 fan_in=sc.filters * sc.kernel)
                self._add_bias(f"s{s}.l{l}.dconv.b", sc.filters)
                self._add_weight(rng, f"s{s}.l{l}.pconv.w", (sc.filters, sc.filters),
                                 fan_in=sc.filters)
                self._add_bias(f"s{s}.l{l}.pconv.b", sc.filters)
            self._add_weight(rng, f"s{s}.head.w", (sc.num_classes, sc.filters),
                             fan_in=sc.filters)
            self._add_bias(f"s{s}.head.b", sc.num_classes)
        m = config.segment_count
        p = permutation_count(m)
        for s in config.da_stages:
            self._add_weight(rng, f"s{s}.ld.fc1.w", (sc.filters, sc.filters), fan_in=sc.filters)
            self._add_bias(f"s{s}.ld.fc1.b", sc.filters)
            self._add_weight(rng, f"s{s}.ld.fc2.w", (2, sc.filters), fan_in=sc.filters)
            self._add_bias(f"s{s}.ld.fc2.b", 2)
            self._add_weight(rng, f"s{s}.gd.fc1.w", (sc.filters, 2 * m * sc.filters),
                             fan_in=2 * m * sc.filters)
            self._add_bias(f"s{s}.gd.fc1.b", sc.filters)
            self._add_weight(rng, f"s{s}.gd.fc2.w", (p, sc.filters), fan_in=sc.filters)
            self._add_bias(f"s{s}.gd.fc2.b", p)

    def _add_weight(self, rng, name: str, shape: tuple[int, ...], fan_in: int) -> None:
        bound = 1.0 / math.sqrt(fan_in)
        self.params[name] = ad.Tensor(rng.uniform(-bound, bound, size=shape),
                                      requires_grad=True)

    def _add_bias(self, name: str, size: int) -> None:
        self.params[name] = ad.Tensor(np.zeros(size), requires_grad=True)

    # -- forward passes ----------------------------------------------------

    def stage_forward(self, stage: int, x: ad.Tensor) -> StageOutput:
        """Run one stage (1-based index) on a frame-major input."""
        p = self.params
        h = ad.pointwise_conv(x, p[f"s{stage}.in.w"], p[f"s{stage}.in.b"])
        for l in range(self.config.stage.layers):
            y = ad.dilated_conv1d(h, p[f"s{stage}.l{l}.dconv.w"],
                                  p[f"s{stage}.l{l}.dconv.b"], dilation=2 ** l)
            y = ad.relu(y)
            y = ad.pointwise_conv(y, p[f"s{stage}.l{l}.pconv.w"], p[f"s{stage}.l{l}.pconv.b"])
            h = ad.add(h, y)
        logits = ad.pointwise_conv(h, p[f"s{stage}.head.w"], p[f"s{stage}.head.b"])
        return StageOutput(features=h, logits=logits, probs=ad.softmax_rows(logits))

    def forward(self, x) -> list[StageOutput]:
        """Run all stages; stage s > 1 consumes stage s-1's probabilities."""
        x = ad.as_tensor(x)
        if x.value.ndim != 2 or x.value.shape[1] != self.config.input_dim:
            raise ValueError(f"forward: expected (T, {self.config.input_dim}) input, "
                             f"got {x.value.shape}")
        outputs = [self.stage_forward(1, x)]
        for s in range(2, self.config.num_stages + 1):
            outputs.append(self.stage_forward(s, outputs[-1].probs))
        return outputs

    def frame_domain_logits(self, stage: int, features: ad.Tensor) -> ad.Tensor:
        """Binary domain head of one adaptation stage: (T, filters) -> (T, 2)."""
        self._check_da_stage(stage)
        p = self.params
        h = ad.relu(ad.pointwise_conv(features, p[f"s{stage}.ld.fc1.w"], p[f"s{stage}.ld.fc1.b"]))
        return ad.pointwise_conv(h, p[f"s{stage}.ld.fc2.w"], p[f"s{stage}.ld.fc2.b"])

    def segment_order_logits(self, stage: int, pooled: ad.Tensor) -> ad.Tensor:
        """Order head of one adaptation stage: (1, 2m*filters) -> (1, C(2m, m))."""
        self._check_da_stage(stage)
        p = self.params
        h = ad.relu(ad.pointwise_conv(pooled, p[f"s{stage}.gd.fc1.w"], p[f"s{stage}.gd.fc1.b"]))
        return ad.pointwise_conv(h, p[f"s{stage}.gd.fc2.w"], p[f"s{stage}.gd.fc2.b"])

    def _check_da_stage(self, stage: int) -> None:
        if stage not in self.config.da_stages:
            raise ValueError(f"stage {stage} carries no adaptation heads "
                             f"(configured: {self.config.da_stages})")

    # -- bookkeeping --------------------------------------------------------

    def parameter_count(self) -> int:
        return sum(t.value.size for t in self.params.values())

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None

    def snap_to_storage_precision(self) -> None:
        """Round every parameter to the float32 grid used by checkpoints."""
        for t in self.params.values():
            t.value = t.value.astype(np.float32).astype(np.float64)


# ---------------------------------------------------------------------------
# checkpoint container: magic, version, config echo, named float32 arrays


def _pack_block(data: bytes) -> bytes:
    return struct.pack("<I", len(data)) + data


def save_checkpoint(model: SegmentationModel, path) -> None:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(_pack_block(json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")))
    buf.write(struct.pack("<I", len(model.params)))
    for name, tensor in model.params.items():
        buf.write(_pack_block(name.encode("utf-8")))
        shape = tensor.value.shape
        buf.write(struct.pack("<I", len(shape)))
        buf.write(struct.pack(f"<{len(shape)}I", *shape))
        buf.write(tensor.value.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def block(self) -> bytes:
        return self.take(self.u32())


def load_checkpoint(path) -> SegmentationModel:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        config = ModelConfig.from_dict(json.loads(r.block().decode("utf-8")))
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad config echo ({exc})") from exc
    model = SegmentationModel(config, seed=0)
    count = r.u32()
    if count != len(model.params):
        raise CheckpointError(f"{path}: expected {len(model.params)} parameters, file has {count}")
    for _ in range(count):
        name = r.block().decode("utf-8")
        if name not in model.params:
            raise CheckpointError(f"{path}: unknown parameter {name!r}")
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        tensor = model.params[name]
        if shape != tensor.value.shape:
            raise CheckpointError(f"{path}: {name} has shape {shape}, expected {tensor.value.shape}")
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        values = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape)
        tensor.value = values.astype(np.float64)
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return model
