"""Backbone CNN, the hybrid quantum-fusion classifier, and the classical baseline."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .nn import Linear, Module, fan_in_uniform
from .qlayers import AmplitudeBranch, AngleBranch, FusionBlock
from .rng import numpy_rng
from .tensor import Tensor

DROPOUT = 0.3
BACKBONE_FILTERS = (32, 64, 128)
FEATURE_DIM = 128 * 4 * 4
HIDDEN = (512, 256, 128)
N_CLASSES = 2


class ConvBN(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        super().__init__()
        fan_in = c_in * 9
        self.weight = self.param("weight", fan_in_uniform(rng, (c_out, c_in, 3, 3), fan_in))
        self.bias = self.param("bias", fan_in_uniform(rng, (c_out,), fan_in))
        self.gamma = self.param("bn_gamma", np.ones(c_out))
        self.beta = self.param("bn_beta", np.zeros(c_out))
        self.running_mean = self.buffer("bn_running_mean", np.zeros(c_out))
        self.running_var = self.buffer("bn_running_var", np.ones(c_out))

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        x = T.conv2d(x, self.weight, self.bias)
        x = T.batchnorm2d(x, self.gamma, self.beta, self.running_mean, self.running_var, train)
        return T.relu(x)


class BackboneCNN(Module):
    """Three blocks of two conv+BN+ReLU; maxpool, maxpool, adaptive-avg 4x4; dropout after each."""

    def __init__(self, rng: np.random.Generator, dropout: float = DROPOUT):
        super().__init__()
        self.dropout = dropout
        self.convs = []
        c_in = 1
        for b, f in enumerate(BACKBONE_FILTERS):
            for k in range(2):
                self.convs.append(self.child(f"block{b + 1}.conv{k + 1}", ConvBN(c_in, f, rng)))
                c_in = f

    def __call__(self, x: Tensor, train: bool = False, rng=None, trace: Optional[list] = None) -> Tensor:
        if x.data.ndim != 4 or x.shape[1:] != (1, 28, 28):
            raise ValueError(f"backbone expects (B, 1, 28, 28) images, got {x.shape}")
        for b in range(3):
            x = self.convs[2 * b](x, train)
            x = self.convs[2 * b + 1](x, train)
            x = T.maxpool2d(x) if b < 2 else T.adaptive_avgpool2d(x, 4)
            x = T.dropout(x, self.dropout, train, rng)
            if trace is not None:
                trace.append(x.shape[1:])
        return T.flatten(x)


class MLPHead(Module):
    """Linear chain with ReLU + dropout between layers; the last layer emits logits."""

    def __init__(self, dims: tuple[int, ...], rng: np.random.Generator, dropout: float = DROPOUT):
        super().__init__()
        self.dims = dims
        self.dropout = dropout
        self.layers = [self.child(f"fc{i + 1}", Linear(a, b, rng)) for i, (a, b) in enumerate(zip(dims, dims[1:]))]

    def __call__(self, h: Tensor, train: bool = False, rng=None) -> Tensor:
        for i, layer in enumerate(self.layers):
            h = T.linear(h, layer.weight, layer.bias)
            if i < len(self.layers) - 1:
                h = T.dropout(T.relu(h), self.dropout, train, rng)
        return h


class ClassicalCNN(Module):
    kind = "classical"

    def __init__(self, seed: int = 0):
        super().__init__()
        self.seed = seed
        self.backbone = self.child("backbone", BackboneCNN(numpy_rng(seed, "init", "backbone")))
        self.classifier = self.child(
            "classifier", MLPHead((FEATURE_DIM,) + HIDDEN + (N_CLASSES,), numpy_rng(seed, "init", "classifier"))
        )

    def __call__(self, x, train: bool = False, rng=None) -> Tensor:
        f = self.backbone(T.as_tensor(x), train, rng)
        return self.classifier(f, train, rng)


class HybridQCNN(Module):
    kind = "hybrid"
    fusion_dim = 128

    def __init__(self, seed: int = 0):
        super().__init__()
        self.seed = seed
        self.backbone = self.child("backbone", BackboneCNN(numpy_rng(seed, "init", "backbone")))
        self.amplitude = self.child("amplitude", AmplitudeBranch(numpy_rng(seed, "init", "amplitude")))
        self.angle = self.child("angle", AngleBranch(numpy_rng(seed, "init", "angle")))
        self.fusion = self.child("fusion", FusionBlock(numpy_rng(seed, "init", "fusion")))
        self.classifier = self.child(
            "classifier",
            MLPHead((self.fusion_dim + FEATURE_DIM,) + HIDDEN + (N_CLASSES,), numpy_rng(seed, "init", "classifier")),
        )

    def features(self, x, train: bool = False, rng=None) -> dict[str, Tensor]:
        f = self.backbone(T.as_tensor(x), train, rng)
        q1 = self.amplitude(f)
        q2 = self.angle(f)
        h_fused = self.fusion(q1, q2, train, rng)
        h_final = T.concat([h_fused, f], axis=-1)
        return {"f_cnn": f, "q1": q1, "q2": q2, "h_fused": h_fused, "h_final": h_final}

    def __call__(self, x, train: bool = False, rng=None) -> Tensor:
        return self.classifier(self.features(x, train, rng)["h_final"], train, rng)


MODELS = {"hybrid": HybridQCNN, "classical": ClassicalCNN}


def build_model(kind: str, seed: int = 0) -> Module:
    try:
        return MODELS[kind](seed)
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(MODELS)}") from None


def param_count(model: Module) -> dict[str, int]:
    """Trainable parameter counts per component plus the total."""
    counts: dict[str, int] = {}
    for name, t in model.named_parameters():
        if ".proj." in name:
            key = "projection"
        elif name.endswith(".theta"):
            key = "circuit"
        else:
            key = name.split(".")[0]
        counts[key] = counts.get(key, 0) + int(t.data.size)
    counts["total"] = sum(counts.values())
    return counts


# -------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"QFCKPT\x00\x01"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: Module) -> None:
    """Header (magic, version, kind, seed) then (name, shape, float64 LE data) records."""
    state = model.state_dict()
    kind = model.kind.encode()
    parts = [CKPT_MAGIC, struct.pack("<IH", CKPT_VERSION, len(kind)), kind,
             struct.pack("<qI", int(model.seed), len(state))]
    for name, arr in state.items():
        nb = name.encode()
        parts.append(struct.pack("<HB", len(nb), arr.ndim) + nb)
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> tuple[str, int, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if not buf.startswith(CKPT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    off = len(CKPT_MAGIC)
    try:
        version, klen = struct.unpack_from("<IH", buf, off)
        if version != CKPT_VERSION:
            raise CheckpointError(f"{path}: checkpoint version {version} unsupported")
        off += 6
        kind = buf[off:off + klen].decode()
        off += klen
        seed, n = struct.unpack_from("<qI", buf, off)
        off += 12
        state = {}
        for _ in range(n):
            nlen, ndim = struct.unpack_from("<HB", buf, off)
            off += 3
            name = buf[off:off + nlen].decode()
            off += nlen
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            if off + 8 * count > len(buf):
                raise struct.error("record overruns file")
            state[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
            off += 8 * count
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint") from exc
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes after last record")
    return kind, int(seed), state


def load_checkpoint(path, model: Optional[Module] = None) -> Module:
    kind, seed, state = read_checkpoint(path)
    if model is None:
        model = build_model(kind, seed)
    elif model.kind != kind:
        raise CheckpointError(f"checkpoint holds a {kind} model, cannot load into {model.kind}")
    try:
        model.load_state_dict(state)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return model
