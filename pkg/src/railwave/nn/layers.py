"""Forward and analytic backward for every layer the residual network uses.

All arithmetic runs in float64 regardless of the storage dtype of the
parameters, so reductions accumulate in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from railwave.errors import BadLabel, DegenerateBatch, NonPositiveOutputDim, ShapeMismatch
from railwave.nn.tensor import Tensor


def _f64(t: Tensor) -> np.ndarray:
    return np.asarray(t.data, dtype=np.float64)


def _out_dim(n: int, k: int, stride: int, pad: int) -> int:
    out = (n + 2 * pad - k) // stride + 1
    if out < 1:
        raise NonPositiveOutputDim(f"window {k} stride {stride} pad {pad} does not fit extent {n}")
    return out


@dataclass(eq=False)
class ConvParams:
    kernels: Tensor  # [out_ch, in_ch, kh, kw]
    bias: Tensor | None = None  # [out_ch]
    stride: int = 1
    padding: int = 0

    def __post_init__(self) -> None:
        if len(self.kernels.shape) != 4 or min(self.kernels.shape) < 1:
            raise ShapeMismatch(f"kernels must be [out, in, kh, kw] with positive dims, got {self.kernels.shape}")
        if self.bias is not None and self.bias.shape != (self.kernels.shape[0],):
            raise ShapeMismatch("bias must have one entry per output channel")
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")

    def parameters(self) -> list[Tensor]:
        return [self.kernels] if self.bias is None else [self.kernels, self.bias]


@dataclass(frozen=True)
class PoolParams:
    window: tuple[int, int]
    stride: int
    mode: Literal["max", "average"] = "max"
    padding: int = 0

    def __post_init__(self) -> None:
        p, q = self.window
        if p < 1 or q < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError("pool window and stride must be positive, padding non-negative")
        if self.mode not in ("max", "average"):
            raise ValueError(f"unknown pool mode {self.mode!r}")
        if self.mode == "average" and self.padding:
            raise ValueError("average pooling does not support padding")


@dataclass(eq=False)
class LinearParams:
    weight: Tensor  # [classes, features]
    bias: Tensor  # [classes]

    def __post_init__(self) -> None:
        if len(self.weight.shape) != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeMismatch("linear weight must be [K, F] and bias [K]")

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


@dataclass(eq=False)
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    epsilon: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self) -> None:
        c = self.gamma.shape
        if not (len(c) == 1 and self.beta.shape == c and self.running_mean.shape == c and self.running_var.shape == c):
            raise ShapeMismatch("batch-norm tensors must all be [channels]")
        if not self.epsilon > 0 or not 0 < self.momentum < 1:
            raise ValueError("epsilon must be > 0 and momentum in (0, 1)")
        if np.any(self.running_var.data < 0):
            raise ValueError("running_var must be non-negative")

    @classmethod
    def identity(cls, channels: int, dtype=np.float64, **kwargs) -> "BatchNormParams":
        return cls(
            Tensor(np.ones(channels), dtype=dtype),
            Tensor(np.zeros(channels), dtype=dtype),
            Tensor(np.zeros(channels), dtype=dtype),
            Tensor(np.ones(channels), dtype=dtype),
            **kwargs,
        )

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]

    def buffers(self) -> list[Tensor]:
        return [self.running_mean, self.running_var]


def conv2d(x: Tensor, params: ConvParams) -> Tensor:
    """Cross-correlation of an [N, C, H, W] batch with [K, C, kh, kw] kernels plus bias."""
    if len(x.shape) != 4:
        raise ShapeMismatch(f"conv2d input must be [N, C, H, W], got {x.shape}")
    n, c, h, w = x.shape
    k, kc, kh, kw = params.kernels.shape
    if c != kc:
        raise ShapeMismatch(f"input has {c} channels, kernels expect {kc}")
    s, pad = params.stride, params.padding
    ho, wo = _out_dim(h, kh, s, pad), _out_dim(w, kw, s, pad)

    xp = np.pad(_f64(x), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = _f64(params.kernels).reshape(k, c * kh * kw)
    out = cols @ wmat.T
    if params.bias is not None:
        out += _f64(params.bias)
    out = out.reshape(n, ho, wo, k).transpose(0, 3, 1, 2)

    def backward(g: np.ndarray) -> None:
        gm = g.transpose(0, 2, 3, 1).reshape(-1, k)
        params.kernels.accumulate((gm.T @ cols).reshape(params.kernels.shape))
        if params.bias is not None:
            params.bias.accumulate(g.sum(axis=(0, 2, 3)))
        dcols = (gm @ wmat).reshape(n, ho, wo, c, kh, kw)
        dxp = np.zeros(xp.shape)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += dcols[..., i, j].transpose(0, 3, 1, 2)
        x.accumulate(dxp[:, :, pad:pad + h, pad:pad + w])

    parents = [x, *params.parameters()]
    return Tensor(np.ascontiguousarray(out), "conv2d", _parents=parents, _backward=backward)


def pool2d(x: Tensor, params: PoolParams) -> Tensor:
    """Max or average pooling over p x q windows.

    Max backward routes the gradient to the first maximal element in
    row-major window order; average backward spreads it uniformly.
    """
    if len(x.shape) != 4:
        raise ShapeMismatch(f"pool2d input must be [N, C, H, W], got {x.shape}")
    n, c, h, w = x.shape
    (p, q), s, pad = params.window, params.stride, params.padding
    ho, wo = _out_dim(h, p, s, pad), _out_dim(w, q, s, pad)
    fill = -np.inf if params.mode == "max" else 0.0
    xp = np.pad(_f64(x), ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=fill)
    win = sliding_window_view(xp, (p, q), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, p * q)

    if params.mode == "max":
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    else:
        out = flat.mean(axis=-1)

    def backward(g: np.ndarray) -> None:
        dxp = np.zeros(xp.shape)
        for i in range(p):
            for j in range(q):
                if params.mode == "max":
                    contrib = np.where(arg == i * q + j, g, 0.0)
                else:
                    contrib = g / (p * q)
                dxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += contrib
        x.accumulate(dxp[:, :, pad:pad + h, pad:pad + w])

    return Tensor(np.ascontiguousarray(out), f"{params.mode}_pool", _parents=[x], _backward=backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Average over the full spatial extent, flattened to [N, C]."""
    _, _, h, w = x.shape
    return reshape(pool2d(x, PoolParams((h, w), 1, "average")), (x.shape[0], x.shape[1]))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = _f64(x).reshape(shape)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g.reshape(x.shape))

    return Tensor(out, "reshape", _parents=[x], _backward=backward)


def relu(x: Tensor) -> Tensor:
    xd = _f64(x)
    mask = xd > 0

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * mask)

    return Tensor(np.where(mask, xd, 0.0), "relu", _parents=[x], _backward=backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"cannot add {a.shape} and {b.shape}")

    def backward(g: np.ndarray) -> None:
        a.accumulate(g)
        b.accumulate(g)

    return Tensor(_f64(a) + _f64(b), "add", _parents=[a, b], _backward=backward)


def batchnorm2d(x: Tensor, params: BatchNormParams, training: bool) -> Tensor:
    """Per-channel normalization; batch statistics in training, running ones in eval.

    Running variance is updated with the unbiased batch variance.
    """
    if len(x.shape) != 4 or x.shape[1] != params.gamma.shape[0]:
        raise ShapeMismatch(f"batchnorm2d expects [N, {params.gamma.shape[0]}, H, W], got {x.shape}")
    n, c, h, w = x.shape
    m = n * h * w
    xd = _f64(x)
    gamma = _f64(params.gamma)[None, :, None, None]
    beta = _f64(params.beta)[None, :, None, None]
    axes = (0, 2, 3)

    if training:
        if m < 2:
            raise DegenerateBatch(f"batch statistics need N*H*W >= 2, got {m}")
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        mom = params.momentum
        rm, rv = params.running_mean, params.running_var
        rm.data = ((1 - mom) * _f64(rm) + mom * mean).astype(rm.data.dtype)
        rv.data = ((1 - mom) * _f64(rv) + mom * var * (m / (m - 1))).astype(rv.data.dtype)
    else:
        mean = _f64(params.running_mean)
        var = _f64(params.running_var)
    inv_std = 1.0 / np.sqrt(var + params.epsilon)[None, :, None, None]
    xhat = (xd - mean[None, :, None, None]) * inv_std
    out = gamma * xhat + beta

    def backward(g: np.ndarray) -> None:
        params.gamma.accumulate((g * xhat).sum(axis=axes))
        params.beta.accumulate(g.sum(axis=axes))
        dxhat = g * gamma
        if training:
            sum_d = dxhat.sum(axis=axes, keepdims=True)
            sum_dx = (dxhat * xhat).sum(axis=axes, keepdims=True)
            x.accumulate(inv_std / m * (m * dxhat - sum_d - xhat * sum_dx))
        else:
            x.accumulate(dxhat * inv_std)

    return Tensor(out, "batchnorm2d", _parents=[x, params.gamma, params.beta], _backward=backward)


def linear(x: Tensor, params: LinearParams) -> Tensor:
    if len(x.shape) != 2 or x.shape[1] != params.weight.shape[1]:
        raise ShapeMismatch(f"linear expects [N, {params.weight.shape[1]}], got {x.shape}")
    xd = _f64(x)
    wd = _f64(params.weight)
    out = xd @ wd.T + _f64(params.bias)

    def backward(g: np.ndarray) -> None:
        params.weight.accumulate(g.T @ xd)
        params.bias.accumulate(g.sum(axis=0))
        x.accumulate(g @ wd)

    return Tensor(out, "linear", _parents=[x, *params.parameters()], _backward=backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Mean negative log-likelihood of ``labels`` under softmax(``logits``).

    Returns the scalar loss tensor and the [N, K] probability matrix.
    """
    if len(logits.shape) != 2:
        raise ShapeMismatch(f"logits must be [N, K], got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,) or not np.issubdtype(labels.dtype, np.integer):
        raise BadLabel(f"labels must be {n} integers")
    if np.any(labels < 0) or np.any(labels >= k):
        raise BadLabel(f"labels must lie in [0, {k})")
    z = _f64(logits)
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_norm
    probs = np.exp(log_p)
    loss = -log_p[np.arange(n), labels].mean()

    def backward(g: np.ndarray) -> None:
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        logits.accumulate(d * (float(g) / n))

    return Tensor(loss, "softmax_ce", _parents=[logits], _backward=backward), probs
