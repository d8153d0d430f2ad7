"""Quantum branches and the fusion block of the hybrid model."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import quantum as qs
from . import tensor as T
from .nn import Linear, Module
from .tensor import Tensor

N_LAYERS = 2
FUSION_DIM = 128
FUSION_DROPOUT = 0.3


def quantum_layer(x: Tensor, params: Tensor, spec: qs.CircuitSpec) -> Tensor:
    """Batched circuit evaluation recorded on the tape (adjoint-method backward)."""
    xd, pd = x.data, params.data

    def backward(g):
        gp, gx = qs.grad_params(spec, xd, pd, g)
        return gx, gp

    return T._emit(qs.run_circuit(spec, xd, pd), [x, params], backward)


def _circuit_init(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.uniform(-np.pi, np.pi, size=n)


class AmplitudeBranch(Module):
    """2048 -> linear 16 -> L2-normalize -> amplitude embed -> VQC -> <Z_j>."""

    def __init__(self, rng: np.random.Generator, in_dim: int = 2048, n_layers: int = N_LAYERS):
        super().__init__()
        self.spec = qs.amplitude_circuit(n_layers)
        self.proj = self.child("proj", Linear(in_dim, self.spec.n_inputs, rng))
        self.theta = self.param("theta", _circuit_init(rng, self.spec.n_params))

    def __call__(self, f_cnn: Tensor) -> Tensor:
        z = T.linear(f_cnn, self.proj.weight, self.proj.bias)
        return quantum_layer(z, self.theta, self.spec)


class AngleBranch(Module):
    """2048 -> linear 4 -> tanh -> RY(pi x) embed -> VQC -> <Z_0..Z_3>, <X_0>, <X_1>."""

    def __init__(self, rng: np.random.Generator, in_dim: int = 2048, n_layers: int = N_LAYERS):
        super().__init__()
        self.spec = qs.angle_circuit(n_layers)
        self.proj = self.child("proj", Linear(in_dim, self.spec.n_inputs, rng))
        self.theta = self.param("theta", _circuit_init(rng, self.spec.n_params))

    def __call__(self, f_cnn: Tensor) -> Tensor:
        x = T.tanh(T.linear(f_cnn, self.proj.weight, self.proj.bias))
        return quantum_layer(x, self.theta, self.spec)


class FusionBlock(Module):
    def __init__(self, rng: np.random.Generator, in_dim: int = 10, out_dim: int = FUSION_DIM,
                 dropout: float = FUSION_DROPOUT):
        super().__init__()
        self.in_dim = in_dim
        self.dropout = dropout
        self.fc = self.child("fc", Linear(in_dim, out_dim, rng))
        self.ln_gamma = self.param("ln_gamma", np.ones(out_dim))
        self.ln_beta = self.param("ln_beta", np.zeros(out_dim))

    def __call__(self, q1: Tensor, q2: Tensor, train: bool = False,
                 rng: Optional[np.random.Generator] = None) -> Tensor:
        if q1.shape[-1] + q2.shape[-1] != self.in_dim:
            raise ValueError(f"fusion expects {self.in_dim} features, got {q1.shape[-1]}+{q2.shape[-1]}")
        h = T.concat([q1, q2], axis=-1)
        h = T.layernorm(T.linear(h, self.fc.weight, self.fc.bias), self.ln_gamma, self.ln_beta)
        return T.dropout(T.relu(h), self.dropout, train, rng)
