"""3-D U-Net built from the tensor primitives, plus its checkpoint format.

Every resolution step runs conv3x3 -> ReLU -> conv3x3 -> BN -> ReLU. The
encoder max-pools between steps; the decoder upsamples with a 2x2x2
transposed convolution that halves the channel count, concatenates the
matching encoder output (skip first) and applies the same two-conv block. A
1x1x1 convolution maps the top decoder output to class logits.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadConfig, ShapeMismatch
from .tensor import (
    BatchNormState,
    Tensor,
    batchnorm3d,
    concat_channels,
    conv3d,
    maxpool3d,
    pointwise_conv3d,
    relu,
    transposed_conv3d,
)

FULL_SCALE_CHANNELS = (32, 64, 128, 256, 512)


@dataclass(frozen=True)
class UNetConfig:
    resolution_steps: int = 5
    channels: tuple[int, ...] = FULL_SCALE_CHANNELS
    num_classes: int = 5
    input_channels: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.resolution_steps < 1:
            raise BadConfig("resolution_steps must be >= 1")
        if len(self.channels) != self.resolution_steps:
            raise BadConfig(f"{len(self.channels)} channel widths for {self.resolution_steps} steps")
        if any(c < 1 for c in self.channels):
            raise BadConfig(f"channel widths must be positive: {self.channels}")
        if self.num_classes < 2:
            raise BadConfig("num_classes must be >= 2")
        if self.input_channels < 1:
            raise BadConfig("input_channels must be >= 1")

    @property
    def divisor(self) -> int:
        return 2 ** (self.resolution_steps - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        try:
            return cls(int(d["resolution_steps"]), tuple(d["channels"]), int(d["num_classes"]),
                       int(d.get("input_channels", 1)), int(d.get("seed", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, BadConfig):
                raise
            raise BadConfig(f"bad network config {d!r}: {exc}") from exc


@dataclass
class ConvBlock:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    bn: BatchNormState

    def params(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2, self.bn.gamma, self.bn.beta]


@dataclass
class UpStep:
    w: Tensor
    b: Tensor
    block: ConvBlock


@dataclass
class UNetModel:
    config: UNetConfig
    encoder: list[ConvBlock]
    decoder: list[UpStep]          # deepest first
    head_w: Tensor
    head_b: Tensor
    meta: dict = field(default_factory=dict)

    def parameters(self) -> list[Tensor]:
        """Trainable tensors in build order."""
        out = []
        for blk in self.encoder:
            out += blk.params()
        for up in self.decoder:
            out += [up.w, up.b] + up.block.params()
        return out + [self.head_w, self.head_b]

    def batchnorms(self) -> list[BatchNormState]:
        return [b.bn for b in self.encoder] + [u.block.bn for u in self.decoder]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_arrays(self) -> list[np.ndarray]:
        """Everything a checkpoint stores, in order: each block's conv
        weights and biases, then its BN gamma, beta, running mean and
        running variance; up-convolutions before their block; head last."""
        out = []

        def block(b: ConvBlock):
            out.extend([b.w1.data, b.b1.data, b.w2.data, b.b2.data, b.bn.gamma.data,
                        b.bn.beta.data, b.bn.running_mean, b.bn.running_var])

        for b in self.encoder:
            block(b)
        for u in self.decoder:
            out.extend([u.w.data, u.b.data])
            block(u.block)
        out.extend([self.head_w.data, self.head_b.data])
        return out


def _he_uniform(rng, shape, fan_in) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(n) -> Tensor:
    return Tensor(np.zeros(n), requires_grad=True)


def _block(rng, cin, cout) -> ConvBlock:
    return ConvBlock(_he_uniform(rng, (cout, cin, 3, 3, 3), cin * 27), _zeros(cout),
                     _he_uniform(rng, (cout, cout, 3, 3, 3), cout * 27), _zeros(cout),
                     BatchNormState(cout))


def build(config: UNetConfig) -> UNetModel:
    """Fresh network with He-uniform conv weights, zero biases, BN gamma=1 and
    beta=0, drawn from ``config.seed``."""
    if not isinstance(config, UNetConfig):
        raise BadConfig("build() expects a UNetConfig")
    rng = np.random.default_rng(config.seed)
    ch = config.channels
    encoder = []
    cin = config.input_channels
    for c in ch:
        encoder.append(_block(rng, cin, c))
        cin = c
    decoder = []
    for k in range(len(ch) - 1, 0, -1):
        cin, cout = ch[k], ch[k - 1]
        # each transposed-conv output sums exactly cin products
        up_w = _he_uniform(rng, (cin, cout, 2, 2, 2), cin)
        decoder.append(UpStep(up_w, _zeros(cout), _block(rng, 2 * cout, cout)))
    head_w = _he_uniform(rng, (config.num_classes, ch[0]), ch[0])
    return UNetModel(config, encoder, decoder, head_w, _zeros(config.num_classes))


def parameter_count(config: UNetConfig) -> int:
    """Closed-form trainable parameter count."""
    ch = (config.input_channels,) + tuple(config.channels)

    def block(cin, cout):
        return cin * cout * 27 + cout + cout * cout * 27 + cout + 2 * cout

    total = sum(block(ch[i], ch[i + 1]) for i in range(config.resolution_steps))
    for k in range(config.resolution_steps - 1, 0, -1):
        cin, cout = config.channels[k], config.channels[k - 1]
        total += cin * cout * 8 + cout + block(2 * cout, cout)
    return total + config.channels[0] * config.num_classes + config.num_classes


def _run_block(b: ConvBlock, x: Tensor, mode: str) -> Tensor:
    h = relu(conv3d(x, b.w1, b.b1))
    h = conv3d(h, b.w2, b.b2)
    return relu(batchnorm3d(h, b.bn, mode))


def forward(model: UNetModel, batch, mode: str = "infer") -> Tensor:
    """Logits (b, num_classes, X, Y, Z) for a (b, input_channels, X, Y, Z) batch."""
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    cfg = model.config
    if x.ndim != 5 or x.shape[1] != cfg.input_channels:
        raise ShapeMismatch(f"expected (b, {cfg.input_channels}, X, Y, Z) input, got {x.shape}")
    if any(s % cfg.divisor for s in x.shape[2:]):
        raise ShapeMismatch(f"spatial dims {x.shape[2:]} must be divisible by {cfg.divisor}")
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")

    skips = []
    h = x
    for k, blk in enumerate(model.encoder):
        h = _run_block(blk, h, mode)
        if k < len(model.encoder) - 1:
            skips.append(h)
            h, _ = maxpool3d(h)
    for up in model.decoder:
        skip = skips.pop()
        h = transposed_conv3d(h, up.w, up.b)
        if h.shape[2:] != skip.shape[2:]:
            raise ShapeMismatch(f"skip {skip.shape} and upsampled {h.shape} disagree")
        h = _run_block(up.block, concat_channels(skip, h), mode)
    return pointwise_conv3d(h, model.head_w, model.head_b)


# checkpoint container: magic, u32 version, u32 header length, JSON header,
# u64 value count, little-endian float64 values in state_arrays() order
MAGIC = b"RSEGCKPT"
VERSION = 1


def checkpoint_bytes(model: UNetModel) -> bytes:
    header = json.dumps({"config": model.config.to_dict(), "meta": model.meta},
                        sort_keys=True, separators=(",", ":")).encode()
    flat = np.concatenate([a.ravel() for a in model.state_arrays()]).astype("<f8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(header)))
    buf.write(header)
    buf.write(struct.pack("<Q", flat.size))
    buf.write(flat.tobytes())
    return buf.getvalue()


def save_checkpoint(model: UNetModel, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def model_from_bytes(data: bytes) -> UNetModel:
    if data[:8] != MAGIC:
        raise BadConfig("not a regionseg checkpoint (bad magic)")
    try:
        version, hlen = struct.unpack_from("<II", data, 8)
        if version != VERSION:
            raise BadConfig(f"unsupported checkpoint version {version}")
        head = json.loads(data[16:16 + hlen])
        (count,) = struct.unpack_from("<Q", data, 16 + hlen)
    except (struct.error, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise BadConfig(f"corrupt checkpoint header: {exc}") from exc
    model = build(UNetConfig.from_dict(head["config"]))
    model.meta = dict(head.get("meta", {}))
    arrays = model.state_arrays()
    expected = sum(a.size for a in arrays)
    start = 24 + hlen
    if count != expected or len(data) != start + 8 * count:
        raise BadConfig(f"checkpoint holds {count} values, config needs {expected}")
    flat = np.frombuffer(data, dtype="<f8", count=count, offset=start).astype(np.float64)
    if not np.all(np.isfinite(flat)):
        raise BadConfig("checkpoint contains non-finite values")
    pos = 0
    for a in arrays:
        a[...] = flat[pos:pos + a.size].reshape(a.shape)
        pos += a.size
    return model


def load_checkpoint(path) -> UNetModel:
    return model_from_bytes(Path(path).read_bytes())


__all__ = ["MAGIC", "FULL_SCALE_CHANNELS", "UNetConfig", "UNetModel", "build", "checkpoint_bytes",
           "forward", "load_checkpoint", "model_from_bytes", "parameter_count", "save_checkpoint"]
