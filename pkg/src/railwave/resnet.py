"""Residual blocks, the ResNet family, training epochs, evaluation and checkpoints."""

from __future__ import annotations

import re
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Literal, Mapping

import numpy as np
import numpy.typing as npt

from railwave.errors import (
    BadSpec,
    CorruptBlob,
    DivergedLoss,
    EmptySplit,
    MissingParam,
    ShapeMismatch,
    VersionMismatch,
)
from railwave.metrics import ConfusionMatrix, accumulate
from railwave.nn import (
    SGD,
    BatchNormParams,
    ConvParams,
    LinearParams,
    PoolParams,
    Tensor,
    add,
    batchnorm2d,
    conv2d,
    global_avg_pool,
    linear,
    pool2d,
    relu,
    softmax_cross_entropy,
)

BOTTLENECK_EXPANSION = 4


@dataclass(frozen=True)
class ResNetSpec:
    stem_channels: int = 16
    stage_block_counts: tuple[int, ...] = (1, 1, 1, 1)
    block_kind: Literal["basic", "bottleneck"] = "basic"
    num_classes: int = 17
    input_shape: tuple[int, int, int] = (1, 64, 64)

    def __post_init__(self) -> None:
        counts = tuple(int(c) for c in self.stage_block_counts)
        object.__setattr__(self, "stage_block_counts", counts)
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if not counts or min(counts) < 1:
            raise BadSpec("stage_block_counts must be non-empty with every count >= 1")
        if self.block_kind not in ("basic", "bottleneck"):
            raise BadSpec(f"unknown block kind {self.block_kind!r}")
        if self.stem_channels < 1 or self.num_classes < 2:
            raise BadSpec("stem_channels must be >= 1 and num_classes >= 2")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise BadSpec("input_shape must be (channels, height, width)")

    def to_text(self) -> str:
        c, h, w = self.input_shape
        stages = ",".join(str(n) for n in self.stage_block_counts)
        return (
            f"resnet stem={self.stem_channels} stages={stages} block={self.block_kind} "
            f"classes={self.num_classes} input={c}x{h}x{w}"
        )

    @classmethod
    def from_text(cls, text: str) -> "ResNetSpec":
        m = re.fullmatch(
            r"resnet stem=(\d+) stages=([\d,]+) block=(basic|bottleneck) classes=(\d+) input=(\d+)x(\d+)x(\d+)",
            text.strip(),
        )
        if m is None:
            raise BadSpec(f"cannot parse spec text {text!r}")
        return cls(
            int(m[1]),
            tuple(int(v) for v in m[2].split(",")),
            m[3],  # type: ignore[arg-type]
            int(m[4]),
            (int(m[5]), int(m[6]), int(m[7])),
        )


SPEC_PRESETS: dict[str, ResNetSpec] = {
    "tiny": ResNetSpec(16, (1, 1, 1, 1), "basic"),
    "18": ResNetSpec(64, (2, 2, 2, 2), "basic"),
    "34": ResNetSpec(64, (3, 4, 6, 3), "basic"),
    "50": ResNetSpec(64, (3, 4, 6, 3), "bottleneck"),
}


@dataclass(eq=False)
class ConvBN:
    conv: ConvParams
    bn: BatchNormParams

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return batchnorm2d(conv2d(x, self.conv), self.bn, training)


@dataclass(eq=False)
class ResidualBlock:
    """``y = relu(F(x) + x)`` or ``y = relu(F(x) + W_s x)`` with a 1x1 projection ``W_s``."""

    kind: Literal["basic", "bottleneck"]
    units: list[ConvBN]
    projection: ConvParams | None = None
    stride: int = 1

    def __post_init__(self) -> None:
        in_ch = self.units[0].conv.kernels.shape[1]
        out_ch = self.units[-1].conv.kernels.shape[0]
        needs = in_ch != out_ch or self.stride > 1
        if needs != (self.projection is not None):
            raise BadSpec("projection must be present iff channels change or stride > 1")
        if self.projection is not None and self.projection.kernels.shape[2:] != (1, 1):
            raise BadSpec("projection kernels must be 1x1")

    @property
    def in_channels(self) -> int:
        return self.units[0].conv.kernels.shape[1]

    @property
    def out_channels(self) -> int:
        return self.units[-1].conv.kernels.shape[0]

    def residual(self, x: Tensor, training: bool) -> Tensor:
        h = x
        for i, unit in enumerate(self.units):
            h = unit(h, training)
            if i < len(self.units) - 1:
                h = relu(h)
        return h

    def shortcut(self, x: Tensor) -> Tensor:
        return x if self.projection is None else conv2d(x, self.projection)


def block_forward(x: Tensor, block: ResidualBlock, training: bool) -> Tensor:
    if len(x.shape) != 4 or x.shape[1] != block.in_channels:
        raise ShapeMismatch(f"block expects {block.in_channels} input channels, got shape {x.shape}")
    return relu(add(block.residual(x, training), block.shortcut(x)))


@dataclass(eq=False)
class Model:
    spec: ResNetSpec
    stem: ConvBN
    stages: list[list[ResidualBlock]]
    fc: LinearParams
    training: bool = True
    stem_pool: PoolParams = field(default_factory=lambda: PoolParams((3, 3), 2, "max", padding=1))

    def __post_init__(self) -> None:
        self._name_tensors()

    def _named(self) -> Iterator[tuple[str, Tensor, bool]]:
        """(name, tensor, trainable) in a stable order."""

        def unit_items(prefix: str, unit: ConvBN) -> Iterator[tuple[str, Tensor, bool]]:
            yield f"{prefix}.conv.weight", unit.conv.kernels, True
            yield f"{prefix}.bn.gamma", unit.bn.gamma, True
            yield f"{prefix}.bn.beta", unit.bn.beta, True
            yield f"{prefix}.bn.running_mean", unit.bn.running_mean, False
            yield f"{prefix}.bn.running_var", unit.bn.running_var, False

        yield from unit_items("stem", self.stem)
        for s, stage in enumerate(self.stages, start=1):
            for b, block in enumerate(stage):
                prefix = f"stage{s}.block{b}"
                for u, unit in enumerate(block.units, start=1):
                    yield from unit_items(f"{prefix}.unit{u}", unit)
                if block.projection is not None:
                    yield f"{prefix}.shortcut.weight", block.projection.kernels, True
        yield "fc.weight", self.fc.weight, True
        yield "fc.bias", self.fc.bias, True

    def _name_tensors(self) -> None:
        for name, t, _ in self._named():
            t.name = name

    def named_parameters(self) -> dict[str, Tensor]:
        return {n: t for n, t, trainable in self._named() if trainable}

    def named_buffers(self) -> dict[str, Tensor]:
        return {n: t for n, t, trainable in self._named() if not trainable}

    def state(self) -> dict[str, Tensor]:
        return {n: t for n, t, _ in self._named()}

    def parameter_count(self) -> int:
        return sum(t.size for t in self.named_parameters().values())

    def layer_count(self) -> int:
        """Weighted layers in the classic depth accounting: stem, residual-branch convs, fc."""
        return 1 + sum(len(block.units) for stage in self.stages for block in stage) + 1

    def blocks(self) -> Iterator[ResidualBlock]:
        for stage in self.stages:
            yield from stage

    def train(self) -> "Model":
        self.training = True
        return self

    def eval(self) -> "Model":
        self.training = False
        return self


def _kaiming(rng: np.random.Generator, shape: tuple[int, ...], dtype) -> Tensor:
    fan_in = int(np.prod(shape[1:]))
    return Tensor(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in), dtype=dtype)


def build_model(spec: ResNetSpec, seed: int, dtype: npt.DTypeLike = np.float32) -> Model:
    """Stem conv 7x7/2, max pool 3x3/2, residual stages, global average pool, linear head."""
    rng = np.random.default_rng(seed)

    def conv_bn(cin: int, cout: int, k: int, stride: int) -> ConvBN:
        conv = ConvParams(_kaiming(rng, (cout, cin, k, k), dtype), None, stride, k // 2)
        return ConvBN(conv, BatchNormParams.identity(cout, dtype=dtype))

    in_ch = spec.input_shape[0]
    stem = conv_bn(in_ch, spec.stem_channels, 7, 2)
    channels = spec.stem_channels
    stages: list[list[ResidualBlock]] = []
    for s, count in enumerate(spec.stage_block_counts):
        width = spec.stem_channels * 2 ** s
        stage = []
        for b in range(count):
            stride = 2 if (s > 0 and b == 0) else 1
            if spec.block_kind == "basic":
                out_ch = width
                units = [conv_bn(channels, width, 3, stride), conv_bn(width, width, 3, 1)]
            else:
                out_ch = width * BOTTLENECK_EXPANSION
                units = [
                    conv_bn(channels, width, 1, 1),
                    conv_bn(width, width, 3, stride),
                    conv_bn(width, out_ch, 1, 1),
                ]
            projection = None
            if channels != out_ch or stride > 1:
                projection = ConvParams(_kaiming(rng, (out_ch, channels, 1, 1), dtype), None, stride, 0)
            stage.append(ResidualBlock(spec.block_kind, units, projection, stride))
            channels = out_ch
        stages.append(stage)
    fc = LinearParams(_kaiming(rng, (spec.num_classes, channels), dtype), Tensor(np.zeros(spec.num_classes), dtype=dtype))
    return Model(spec, stem, stages, fc)


def forward(model: Model, batch: Tensor | npt.ArrayLike, training: bool | None = None) -> Tensor:
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if len(x.shape) != 4 or tuple(x.shape[1:]) != model.spec.input_shape:
        raise ShapeMismatch(f"expected [N, {', '.join(map(str, model.spec.input_shape))}], got {x.shape}")
    mode = model.training if training is None else training
    h = relu(model.stem(x, mode))
    h = pool2d(h, model.stem_pool)
    for block in model.blocks():
        h = block_forward(h, block, mode)
    return linear(global_avg_pool(h), model.fc)


@dataclass
class EpochStats:
    mean_loss: float
    batch_losses: list[float]


def train_epoch(
    model: Model,
    optimizer: SGD,
    images: np.ndarray,
    labels: np.ndarray,
    lr: float,
    seed: int,
    epoch: int,
    batch_size: int = 16,
) -> EpochStats:
    """One pass over the data in an order drawn from ``(seed, epoch)``."""
    n = len(labels)
    if n == 0:
        raise EmptySplit("no training samples")
    model.train()
    order = np.random.default_rng([seed, epoch]).permutation(n)
    losses: list[float] = []
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        optimizer.zero_grad()
        logits = forward(model, images[idx], training=True)
        loss, _ = softmax_cross_entropy(logits, labels[idx])
        value = loss.item()
        if not np.isfinite(value):
            raise DivergedLoss(f"loss became {value} at epoch {epoch}, batch {start // batch_size}")
        loss.backward()
        optimizer.step(lr)
        losses.append(value)
    return EpochStats(float(np.mean(losses)), losses)


def predict_logits(model: Model, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    model.eval()
    chunks = [forward(model, images[i:i + batch_size], training=False).data for i in range(0, len(images), batch_size)]
    return np.concatenate(chunks, axis=0)


def evaluate(model: Model, images: np.ndarray, labels: np.ndarray, batch_size: int = 64) -> tuple[float, ConfusionMatrix]:
    if len(labels) == 0:
        raise EmptySplit("no evaluation samples")
    logits = predict_logits(model, images, batch_size)
    preds = np.argmax(logits, axis=1)  # first maximum, i.e. lowest class id on ties
    cm = accumulate(preds, np.asarray(labels, dtype=np.int64), model.spec.num_classes)
    return float(np.trace(cm.counts)) / cm.total, cm


# --- checkpoints -----------------------------------------------------------

CHECKPOINT_MAGIC = b"RWCK"
CHECKPOINT_VERSION = 1
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_TAG_OF = {np.dtype(v).str: k for k, v in _DTYPE_TAGS.items()}
_OPTIM_PREFIX = "optim.velocity."


@dataclass(eq=False)
class Checkpoint:
    model: Model
    optimizer_state: dict[str, np.ndarray]
    epoch: int
    seed: int


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_blob(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dtype = arr.dtype.newbyteorder("<")
    if dtype.str not in _TAG_OF:
        raise TypeError(f"unsupported checkpoint dtype {arr.dtype} for {name}")
    data = np.ascontiguousarray(arr, dtype=dtype).tobytes()
    head = _pack_str(name) + struct.pack("<BB", _TAG_OF[dtype.str], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + data + struct.pack("<I", zlib.crc32(data))


def save_checkpoint(
    model: Model,
    path: str | Path,
    optimizer_state: Mapping[str, np.ndarray] | None = None,
    epoch: int = 0,
    seed: int = 0,
) -> None:
    blobs: list[tuple[str, np.ndarray]] = [(n, t.data) for n, t in model.state().items()]
    for name in sorted(optimizer_state or {}):
        blobs.append((_OPTIM_PREFIX + name, np.asarray(optimizer_state[name], dtype=np.float64)))
    blobs.append(("meta.epoch", np.asarray(epoch, dtype=np.int64)))
    blobs.append(("meta.seed", np.asarray(seed, dtype=np.int64)))
    body = CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION) + _pack_str(model.spec.to_text())
    body += struct.pack("<I", len(blobs))
    body += b"".join(_pack_blob(n, a) for n, a in blobs)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, raw: bytes) -> None:
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CorruptBlob("checkpoint truncated")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptBlob("invalid UTF-8 in checkpoint") from exc


def load_checkpoint(path: str | Path, spec: ResNetSpec | None = None) -> Checkpoint:
    """Load a checkpoint; with ``spec`` given, the stored tensors must fit that architecture."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CorruptBlob(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptBlob(f"{path}: file checksum mismatch (truncated or corrupted)")
    r = _Reader(body)
    r.take(8)
    stored_spec = ResNetSpec.from_text(r.string())
    (count,) = r.unpack("<I")
    blobs: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.string()
        tag, rank = r.unpack("<BB")
        if tag not in _DTYPE_TAGS:
            raise CorruptBlob(f"{path}: unknown dtype tag {tag} for {name}")
        dims = r.unpack(f"<{rank}I")
        dtype = _DTYPE_TAGS[tag]
        data = r.take(int(np.prod(dims, dtype=np.int64)) * dtype.itemsize)
        (blob_crc,) = r.unpack("<I")
        if zlib.crc32(data) != blob_crc:
            raise CorruptBlob(f"{path}: checksum mismatch in {name}")
        blobs[name] = np.frombuffer(data, dtype=dtype).reshape(dims).copy()
    if r.pos != len(body):
        raise CorruptBlob(f"{path}: trailing bytes after last blob")

    target = spec or stored_spec
    dtype = blobs.get("stem.conv.weight", np.empty(0, np.float32)).dtype
    model = build_model(target, seed=0, dtype=dtype)
    state = model.state()
    for name, tensor in state.items():
        if name not in blobs:
            raise MissingParam(f"{path}: no tensor {name!r} for spec '{target.to_text()}'")
        if blobs[name].shape != tensor.shape:
            raise MissingParam(f"{path}: {name!r} has shape {blobs[name].shape}, model needs {tensor.shape}")
        tensor.data = blobs[name].astype(tensor.data.dtype.newbyteorder("="))
    extra = [n for n in blobs if n not in state and not n.startswith(("meta.", _OPTIM_PREFIX))]
    if extra:
        raise MissingParam(f"{path}: tensors {extra} do not exist in spec '{target.to_text()}'")
    optim = {n[len(_OPTIM_PREFIX):]: a for n, a in blobs.items() if n.startswith(_OPTIM_PREFIX)}
    epoch = int(blobs["meta.epoch"]) if "meta.epoch" in blobs else 0
    seed = int(blobs["meta.seed"]) if "meta.seed" in blobs else 0
    return Checkpoint(model.eval(), optim, epoch, seed)
