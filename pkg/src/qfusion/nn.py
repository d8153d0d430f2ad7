"""Parameter containers shared by the quantum layers and the models."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor


class Module:
    """Holds named parameters, non-trainable buffers, and child modules."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, "Module"] = {}

    def param(self, name: str, data) -> Tensor:
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def buffer(self, name: str, data) -> np.ndarray:
        arr = np.asarray(data, dtype=np.float64).copy()
        self._buffers[name] = arr
        return arr

    def child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for k, t in self._params.items():
            yield prefix + k, t
        for k, m in self._children.items():
            yield from m.named_parameters(f"{prefix}{k}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for k, b in self._buffers.items():
            yield prefix + k, b
        for k, m in self._children.items():
            yield from m.named_buffers(f"{prefix}{k}.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    def n_params(self) -> int:
        return int(sum(t.data.size for t in self.parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: t.data.copy() for k, t in self.named_parameters()}
        out.update({k: b.copy() for k, b in self.named_buffers()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ValueError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for k, v in state.items():
            target = params[k].data if k in params else buffers[k]
            if target.shape != v.shape:
                raise ValueError(f"{k}: shape {v.shape} does not match model shape {target.shape}")
            target[...] = v


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        self.weight = self.param("weight", fan_in_uniform(rng, (n_out, n_in), n_in))
        self.bias = self.param("bias", fan_in_uniform(rng, (n_out,), n_in))
