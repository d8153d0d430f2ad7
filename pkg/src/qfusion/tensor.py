"""Dense float64 tensors with a reverse-mode gradient tape.

Operations record themselves on the active :class:`Tape` (entered with a
``with`` block). Outside a tape nothing is recorded, which is how inference
runs.
"""

from __future__ import annotations

import contextvars
from typing import Callable, Optional, Sequence

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LN_EPS = 1e-5

_active_tape: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "qfusion_active_tape", default=None
)


class TapeError(RuntimeError):
    pass


class Tensor:
    """Real float64 array that may carry a gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr if arr.flags.c_contiguous else arr.copy()
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


class Tape:
    """Ordered record of executed operations.

    ``backward`` walks the records in exact reverse order and may run once
    per recording.
    """

    def __init__(self) -> None:
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._token = None
        self._consumed = False

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self.records.append((out, inputs, backward))

    def backward(self, loss: Tensor, seed: Optional[np.ndarray] = None) -> None:
        if self._consumed:
            raise TapeError("backward already ran on this tape; run the forward pass again")
        self._consumed = True
        if not loss.requires_grad:
            raise TapeError("loss does not depend on any tensor that requires grad")
        loss.grad = np.ones_like(loss.data) if seed is None else np.array(seed, dtype=np.float64)
        for out, inputs, backward in reversed(self.records):
            if out.grad is None:
                continue
            grads = backward(out.grad)
            for inp, g in zip(inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    inp.grad = np.array(g, dtype=np.float64, copy=True).reshape(inp.shape)
                else:
                    inp.grad += g
            out.grad = None
        self.records.clear()


def _emit(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    tape = _active_tape.get()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data)
    if needs:
        out.requires_grad = True  # grad buffer allocated on first accumulation
        tape.record(out, tuple(inputs), backward)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------- structural

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return _emit(x.data.reshape(shape), [x], lambda g: (g.reshape(src),))


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _emit(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _emit(a.data + b.data, [a, b], lambda g: (g, g))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return _emit(np.asarray(x.data.mean()), [x], lambda g: (np.full(x.shape, g / n),))


# ------------------------------------------------------------- elementwise

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit(x.data * mask, [x], lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit(y, [x], lambda g: (g * (1.0 - y * y),))


def dropout(x: Tensor, rate: float, train: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout; identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _emit(x.data * mask, [x], lambda g: (g * mask,))


# ------------------------------------------------------------------ layers

def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.data.ndim != 2 or weight.shape[1] != x.shape[1] or bias.shape != (weight.shape[0],):
        raise ValueError(
            f"linear: input {x.shape} incompatible with weight {weight.shape} / bias {bias.shape}"
        )
    xd, wd = x.data, weight.data

    def backward(g):
        return g @ wd, g.T @ xd, g.sum(axis=0)

    return _emit(xd @ wd.T + bias.data, [x, weight, bias], backward)


def _im2col(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (C*9, B*H*W) patch matrix of the zero-padded input."""
    B, C, H, W = x.shape
    xp = np.zeros((C, B, H + 2, W + 2))
    xp[:, :, 1:-1, 1:-1] = x.transpose(1, 0, 2, 3)
    cols = np.empty((C, 3, 3, B, H, W))
    for ki in range(3):
        for kj in range(3):
            cols[:, ki, kj] = xp[:, :, ki:ki + H, kj:kj + W]
    return cols.reshape(C * 9, B * H * W)


def _conv_raw(x: np.ndarray, wmat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    B, _, H, W = x.shape
    cols = _im2col(x)
    out = (wmat @ cols).reshape(-1, B, H, W).transpose(1, 0, 2, 3)
    return out, cols


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, padding: int = 1) -> Tensor:
    """3x3, stride 1, padding 1 convolution (cross-correlation)."""
    if weight.data.ndim != 4 or weight.shape[2:] != (3, 3):
        raise ValueError(f"conv2d expects an F x C x 3 x 3 kernel, got {weight.shape}")
    if padding != 1:
        raise ValueError("conv2d supports padding=1 only")
    B, C, H, W = x.shape
    F = weight.shape[0]
    if weight.shape[1] != C:
        raise ValueError(f"conv2d: input has {C} channels, kernel expects {weight.shape[1]}")

    wmat = weight.data.reshape(F, C * 9)
    out, cols = _conv_raw(x.data, wmat)
    out = out + bias.data.reshape(1, F, 1, 1)

    def backward(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(F, B * H * W)
        dw = (g2 @ cols.T).reshape(weight.shape)
        db = g2.sum(axis=1)
        dx = None
        if x.requires_grad:
            # input gradient = same-padding conv of g with the flipped, channel-swapped kernel
            wflip = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(C, F * 9)
            dx, _ = _conv_raw(g, wflip)
        return dx, dw, db

    return _emit(out, [x, weight, bias], backward)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
) -> Tensor:
    """Per-channel batch normalization.

    In train mode the running buffers are updated in place (momentum 0.1,
    unbiased batch variance); in eval mode they are read only.
    """
    B, C, H, W = x.shape
    shp = (1, C, 1, 1)
    if train:
        m = B * H * W
        if m < 2:
            raise ValueError("batchnorm2d in train mode needs at least two values per channel")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mu
        running_var *= 1.0 - BN_MOMENTUM
        running_var += BN_MOMENTUM * var * m / (m - 1)
    else:
        mu, var = running_mean.copy(), running_var.copy()
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x.data - mu.reshape(shp)) * inv.reshape(shp)
    out = gamma.data.reshape(shp) * xhat + beta.data.reshape(shp)

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        gx = g * gamma.data.reshape(shp)
        if train:
            dx = inv.reshape(shp) * (
                gx
                - gx.mean(axis=(0, 2, 3), keepdims=True)
                - xhat * (gx * xhat).mean(axis=(0, 2, 3), keepdims=True)
            )
        else:
            dx = gx * inv.reshape(shp)
        return dx, dgamma, dbeta

    return _emit(out, [x, gamma, beta], backward)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x.data - mu) * inv

    def backward(g):
        gx = g * gamma.data
        dx = inv * (gx - gx.mean(-1, keepdims=True) - xhat * (gx * xhat).mean(-1, keepdims=True))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _emit(gamma.data * xhat + beta.data, [x, gamma, beta], backward)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 / stride 2 max pooling; gradient goes to the first row-major argmax."""
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"maxpool2d needs even spatial dims, got {H}x{W}")
    win = x.data.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(B, C, H // 2, W // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        dwin = np.zeros((B, C, H // 2, W // 2, 4))
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        dx = dwin.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (dx.reshape(B, C, H, W),)

    return _emit(out, [x], backward)


def adaptive_bins(size: int, out: int) -> list[tuple[int, int]]:
    """Half-open [start, stop) ranges: start = floor(i*size/out), stop = ceil((i+1)*size/out)."""
    return [(i * size // out, -((-(i + 1) * size) // out)) for i in range(out)]


def adaptive_avgpool2d(x: Tensor, out_size: int = 4) -> Tensor:
    B, C, H, W = x.shape
    if H < out_size or W < out_size:
        raise ValueError(f"adaptive_avgpool2d: input {H}x{W} smaller than output {out_size}")
    rows, cols = adaptive_bins(H, out_size), adaptive_bins(W, out_size)
    out = np.empty((B, C, out_size, out_size))
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out[:, :, i, j] = x.data[:, :, r0:r1, c0:c1].mean(axis=(2, 3))

    def backward(g):
        dx = np.zeros((B, C, H, W))
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                area = (r1 - r0) * (c1 - c0)
                dx[:, :, r0:r1, c0:c1] += (g[:, :, i, j] / area)[:, :, None, None]
        return (dx,)

    return _emit(out, [x], backward)


# --------------------------------------------------------- probabilities

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def smoothed_targets(labels: np.ndarray, n_classes: int, epsilon: float) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got {np.unique(labels)}")
    t = np.full((labels.shape[0], n_classes), epsilon / n_classes)
    t[np.arange(labels.shape[0]), labels] += 1.0 - epsilon
    return t


def cross_entropy_smoothed(logits: Tensor, labels, epsilon: float = 0.1) -> Tensor:
    """Mean cross entropy against (1-eps)*onehot + eps/K targets."""
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("label smoothing epsilon must be in [0, 1)")
    B, K = logits.shape
    target = smoothed_targets(labels, K, epsilon)
    logp = log_softmax(logits.data)
    loss = -(target * logp).sum() / B
    p = np.exp(logp)
    return _emit(np.asarray(loss), [logits], lambda g: (g * (p - target) / B,))
