"""Exact statevector simulation for small qubit registers.

Conventions: qubit 0 is the least-significant bit of the basis index, and
rotations are ``R_G(theta) = exp(-i theta G / 2)``.

All circuit entry points accept a batch of inputs (shape ``(B, k)``) and
share one parameter vector across the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

MAX_QUBITS = 12
NORM_FLOOR = 1e-9

ROTATIONS = ("RX", "RY", "RZ")
KINDS = ROTATIONS + ("H", "CNOT")

_I2 = np.eye(2, dtype=complex)
PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2.0)


class NearZeroNorm(ValueError):
    """Amplitude-embedding input too close to the zero vector."""


@dataclass(frozen=True)
class GateOp:
    kind: str
    target: int
    control: Optional[int] = None
    angle: float = 0.0
    trainable: bool = False
    param_index: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if self.kind == "CNOT":
            if self.control is None or self.control == self.target:
                raise ValueError("CNOT needs a control distinct from its target")
        if self.trainable and (self.kind not in ROTATIONS or self.param_index is None):
            raise ValueError("only rotations with a param_index can be trainable")


@dataclass
class CircuitSpec:
    n_qubits: int
    embedding: str  # "amplitude" | "angle"
    gates: list[GateOp]
    observables: list[tuple[str, int]] = field(default_factory=list)

    def __post_init__(self):
        if not self.observables:
            raise ValueError("a circuit needs at least one observable")
        idx = sorted(g.param_index for g in self.gates if g.trainable)
        if idx != list(range(len(idx))):
            raise ValueError(f"trainable parameter indices must be 0..P-1, got {idx}")
        for g in self.gates:
            for q in (g.target, g.control):
                if q is not None and not 0 <= q < self.n_qubits:
                    raise ValueError(f"gate {g} addresses a qubit outside the register")
        if self.embedding not in ("amplitude", "angle"):
            raise ValueError(f"unknown embedding {self.embedding!r}")

    @property
    def n_params(self) -> int:
        return sum(g.trainable for g in self.gates)

    @property
    def n_inputs(self) -> int:
        return 2 ** self.n_qubits if self.embedding == "amplitude" else self.n_qubits

    @property
    def n_outputs(self) -> int:
        return len(self.observables)


# ------------------------------------------------------------------ matrices

def rotation_matrix(kind: str, theta) -> np.ndarray:
    """2x2 matrix (or a stack of them when ``theta`` is an array)."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    m = np.zeros(theta.shape + (2, 2), dtype=complex)
    if kind == "RX":
        m[..., 0, 0] = c
        m[..., 1, 1] = c
        m[..., 0, 1] = -1j * s
        m[..., 1, 0] = -1j * s
    elif kind == "RY":
        m[..., 0, 0] = c
        m[..., 1, 1] = c
        m[..., 0, 1] = -s
        m[..., 1, 0] = s
    elif kind == "RZ":
        m[..., 0, 0] = np.exp(-0.5j * theta)
        m[..., 1, 1] = np.exp(0.5j * theta)
    else:
        raise ValueError(f"{kind} is not a rotation")
    return m


def gate_matrix(gate: GateOp, angle: Optional[float] = None) -> np.ndarray:
    """Local matrix: 2x2 for single-qubit gates, 4x4 (control-major basis) for CNOT."""
    if gate.kind in ROTATIONS:
        return rotation_matrix(gate.kind, gate.angle if angle is None else angle)
    if gate.kind == "H":
        return _H.copy()
    m = np.eye(4, dtype=complex)
    m[2:, 2:] = PAULI["X"]
    return m


def dense_single(mat: np.ndarray, qubit: int, n: int) -> np.ndarray:
    """Kronecker-product embedding of a 2x2 operator on ``qubit``."""
    out = np.ones((1, 1), dtype=complex)
    for q in reversed(range(n)):
        out = np.kron(out, mat if q == qubit else _I2)
    return out


def dense_gate(gate: GateOp, n: int, angle: Optional[float] = None) -> np.ndarray:
    """Full 2^n x 2^n unitary of one gate, built from Kronecker products."""
    if gate.kind != "CNOT":
        return dense_single(gate_matrix(gate, angle), gate.target, n)
    p0 = np.diag([1, 0]).astype(complex)
    p1 = np.diag([0, 1]).astype(complex)
    return dense_single(p0, gate.control, n) + dense_single(p1, gate.control, n) @ dense_single(
        PAULI["X"], gate.target, n
    )


def dense_observable(obs: tuple[str, int], n: int) -> np.ndarray:
    return dense_single(PAULI[obs[0]], obs[1], n)


def bind(spec: CircuitSpec, params) -> list[GateOp]:
    """Gate list with trainable angles replaced by ``params``."""
    params = np.asarray(params, dtype=float)
    out = []
    for g in spec.gates:
        if g.trainable:
            g = GateOp(g.kind, g.target, g.control, float(params[g.param_index]), True, g.param_index)
        out.append(g)
    return out


def circuit_unitary(spec: CircuitSpec, params) -> np.ndarray:
    """Dense unitary of the variational block (embedding excluded)."""
    dim = 2 ** spec.n_qubits
    u = np.eye(dim, dtype=complex)
    for g in bind(spec, params):
        u = dense_gate(g, spec.n_qubits) @ u
    return u


# ------------------------------------------------------------------- states

@dataclass
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape[-1] != 2 ** self.n_qubits:
            raise ValueError("amplitude count must be 2**n_qubits")

    def norm2(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))


def _check_n(n: int) -> None:
    if not 1 <= n <= MAX_QUBITS:
        raise ValueError(f"qubit count must be in [1, {MAX_QUBITS}], got {n}")


def zero_state(n: int) -> StateVector:
    _check_n(n)
    amp = np.zeros(2 ** n, dtype=complex)
    amp[0] = 1.0
    return StateVector(n, amp)


def _axis(qubit: int, n: int) -> int:
    # batch axis first, then bits from most to least significant
    return 1 + (n - 1 - qubit)


def _apply_1q(psi: np.ndarray, mat: np.ndarray, qubit: int, n: int) -> np.ndarray:
    """psi: (B, 2^n); mat: (2,2) or (B,2,2)."""
    B = psi.shape[0]
    t = psi.reshape((B,) + (2,) * n)
    ax = _axis(qubit, n)
    t = np.moveaxis(t, ax, -1)
    if mat.ndim == 2:
        t = t @ mat.T
    else:
        t = np.einsum("b...j,bij->b...i", t, mat)
    return np.moveaxis(t, -1, ax).reshape(B, -1)


def _apply_cnot(psi: np.ndarray, control: int, target: int, n: int) -> np.ndarray:
    idx = np.arange(2 ** n)
    flip = idx ^ (((idx >> control) & 1) << target)
    return psi[:, flip]


def _apply(psi: np.ndarray, gate: GateOp, n: int, angle=None) -> np.ndarray:
    if gate.kind == "CNOT":
        return _apply_cnot(psi, gate.control, gate.target, n)
    if gate.kind == "H":
        return _apply_1q(psi, _H, gate.target, n)
    return _apply_1q(psi, rotation_matrix(gate.kind, gate.angle if angle is None else angle), gate.target, n)


def apply_gate(state: StateVector, gate: GateOp) -> StateVector:
    n = state.n_qubits
    for q in (gate.target, gate.control):
        if q is not None and not 0 <= q < n:
            raise ValueError(f"qubit {q} outside a {n}-qubit register")
    psi = _apply(state.amplitudes.reshape(1, -1), gate, n)
    return StateVector(n, psi.reshape(state.amplitudes.shape))


def amplitude_embed(features) -> StateVector:
    f = np.asarray(features, dtype=float)
    n = int(round(np.log2(f.shape[-1]))) if f.shape[-1] > 0 else 0
    if f.ndim != 1 or 2 ** n != f.shape[0]:
        raise ValueError(f"amplitude embedding needs 2^n features, got shape {f.shape}")
    _check_n(n)
    norm = np.linalg.norm(f)
    if norm <= NORM_FLOOR:
        raise NearZeroNorm(f"feature norm {norm:.3e} at or below {NORM_FLOOR}")
    return StateVector(n, f / norm)


def angle_embed(features) -> StateVector:
    x = np.asarray(features, dtype=float)
    if x.ndim != 1:
        raise ValueError("angle embedding takes a flat feature vector")
    _check_n(x.shape[0])
    if np.any(np.abs(x) > 1 + 1e-9):
        raise ValueError(f"angle features must lie in [-1, 1], got {x}")
    return StateVector(x.shape[0], _angle_batch(x[None, :])[0])


def _angle_batch(x: np.ndarray) -> np.ndarray:
    B, n = x.shape
    psi = np.zeros((B, 2 ** n), dtype=complex)
    psi[:, 0] = 1.0
    for j in range(n):
        psi = _apply_1q(psi, rotation_matrix("RY", np.pi * x[:, j]), j, n)
    return psi


def _expval_batch(psi: np.ndarray, obs: tuple[str, int]) -> np.ndarray:
    kind, q = obs
    idx = np.arange(psi.shape[-1])
    if kind == "Z":
        sign = 1.0 - 2.0 * ((idx >> q) & 1)
        return (np.abs(psi) ** 2) @ sign
    if kind == "X":
        return np.real(np.sum(np.conj(psi) * psi[:, idx ^ (1 << q)], axis=-1))
    raise ValueError(f"unsupported observable {kind}")


def _obs_apply(psi: np.ndarray, obs: tuple[str, int]) -> np.ndarray:
    """O|psi> for a single-qubit Pauli observable."""
    kind, q = obs
    idx = np.arange(psi.shape[-1])
    if kind == "Z":
        return psi * (1.0 - 2.0 * ((idx >> q) & 1))
    return psi[:, idx ^ (1 << q)]


def expval(state: StateVector, observable: tuple[str, int]) -> float:
    if not 0 <= observable[1] < state.n_qubits:
        raise ValueError(f"observable qubit {observable[1]} outside the register")
    return float(_expval_batch(state.amplitudes.reshape(1, -1), observable)[0])


# ---------------------------------------------------------------- circuits

def _as_batch(inputs, spec: CircuitSpec) -> tuple[np.ndarray, bool]:
    x = np.asarray(inputs, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != spec.n_inputs:
        raise ValueError(f"{spec.embedding} circuit takes {spec.n_inputs} inputs, got {x.shape[1]}")
    return x, single


def _check_params(spec: CircuitSpec, params) -> np.ndarray:
    p = np.asarray(params, dtype=float).reshape(-1)
    if p.shape[0] != spec.n_params:
        raise ValueError(f"circuit has {spec.n_params} parameters, got {p.shape[0]}")
    return p


def _embed(spec: CircuitSpec, x: np.ndarray) -> np.ndarray:
    if spec.embedding == "amplitude":
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms <= NORM_FLOOR):
            raise NearZeroNorm(f"feature norm {norms.min():.3e} at or below {NORM_FLOOR}")
        return (x / norms[:, None]).astype(complex)
    if np.any(np.abs(x) > 1 + 1e-9):
        raise ValueError("angle features must lie in [-1, 1]")
    return _angle_batch(x)


def _evolve(spec: CircuitSpec, psi: np.ndarray, params: np.ndarray) -> np.ndarray:
    for g in spec.gates:
        angle = params[g.param_index] if g.trainable else None
        psi = _apply(psi, g, spec.n_qubits, angle)
    return psi


def run_circuit(spec: CircuitSpec, inputs, params) -> np.ndarray:
    """Expectation value per observable, in spec order."""
    x, single = _as_batch(inputs, spec)
    p = _check_params(spec, params)
    psi = _evolve(spec, _embed(spec, x), p)
    out = np.stack([_expval_batch(psi, o) for o in spec.observables], axis=-1)
    return out[0] if single else out


def grad_params(spec: CircuitSpec, inputs, params, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint-method vector-Jacobian product.

    Returns ``(d/dparams, d/dinputs)`` of ``sum(upstream * run_circuit(...))``.
    Parameter gradients are summed over the batch; input gradients keep the
    batch shape. For amplitude circuits the input gradient includes the L2
    normalization.
    """
    x, single = _as_batch(inputs, spec)
    p = _check_params(spec, params)
    u = np.atleast_2d(np.asarray(upstream, dtype=float))
    n = spec.n_qubits
    psi0 = _embed(spec, x)
    psi = _evolve(spec, psi0, p)

    lam = np.zeros_like(psi)
    for k, o in enumerate(spec.observables):
        lam += u[:, k:k + 1] * _obs_apply(psi, o)

    gp = np.zeros(spec.n_params)
    for g in reversed(spec.gates):
        angle = p[g.param_index] if g.trainable else None
        if g.trainable:
            gpsi = _apply_1q(psi, PAULI[g.kind[1]], g.target, n)
            # d<O>/dtheta = 2 Re<lam| dU |psi_prev> = Im<lam|G|psi>
            gp[g.param_index] += np.sum(np.imag(np.sum(np.conj(lam) * gpsi, axis=-1)))
        inv = _dagger(g, angle)
        psi = _apply(psi, inv, n)
        lam = _apply(lam, inv, n)

    if spec.embedding == "amplitude":
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        a = x / norms
        ga = 2.0 * np.real(lam)
        gx = (ga - a * np.sum(a * ga, axis=1, keepdims=True)) / norms
    else:
        gx = np.zeros_like(x)
        for j in reversed(range(n)):
            gpsi = _apply_1q(psi, PAULI["Y"], j, n)
            gx[:, j] = np.pi * np.imag(np.sum(np.conj(lam) * gpsi, axis=-1))
            inv = rotation_matrix("RY", -np.pi * x[:, j])
            psi = _apply_1q(psi, inv, j, n)
            lam = _apply_1q(lam, inv, j, n)
    return gp, (gx[0] if single else gx)


def _dagger(g: GateOp, angle) -> GateOp:
    if g.kind in ROTATIONS:
        a = g.angle if angle is None else angle
        return GateOp(g.kind, g.target, angle=-float(a))
    return g  # H and CNOT are self-inverse


def param_shift_grad(spec: CircuitSpec, inputs, params, upstream) -> np.ndarray:
    """Trainable-parameter gradient via the two-term shift rule."""
    p = _check_params(spec, params)
    u = np.atleast_2d(np.asarray(upstream, dtype=float))
    grad = np.zeros_like(p)
    for i in range(p.shape[0]):
        plus, minus = p.copy(), p.copy()
        plus[i] += np.pi / 2
        minus[i] -= np.pi / 2
        diff = np.atleast_2d(run_circuit(spec, inputs, plus)) - np.atleast_2d(run_circuit(spec, inputs, minus))
        grad[i] = 0.5 * np.sum(u * diff)
    return grad


# ------------------------------------------------------------- templates

RING_OBSERVABLES_Z = [("Z", j) for j in range(4)]


def layered_ring_gates(n_qubits: int, n_layers: int, params: Optional[Sequence[float]] = None) -> list[GateOp]:
    """Per layer: RX then RY on every qubit, then CNOT j -> (j+1) mod n."""
    gates, k = [], 0
    for _ in range(n_layers):
        for j in range(n_qubits):
            for kind in ("RX", "RY"):
                angle = 0.0 if params is None else float(params[k])
                gates.append(GateOp(kind, j, angle=angle, trainable=True, param_index=k))
                k += 1
        for j in range(n_qubits):
            gates.append(GateOp("CNOT", (j + 1) % n_qubits, control=j))
    return gates


def amplitude_circuit(n_layers: int = 2) -> CircuitSpec:
    return CircuitSpec(4, "amplitude", layered_ring_gates(4, n_layers), [("Z", j) for j in range(4)])


def angle_circuit(n_layers: int = 2) -> CircuitSpec:
    obs = [("Z", j) for j in range(4)] + [("X", 0), ("X", 1)]
    return CircuitSpec(4, "angle", layered_ring_gates(4, n_layers), obs)


# ------------------------------------------------------------ dump format

def dump_circuit(spec: CircuitSpec, params=None) -> str:
    """Plain-text gate list; trainable angles are written with their bound values."""
    p = np.zeros(spec.n_params) if params is None else _check_params(spec, params)
    lines = [f"qubits {spec.n_qubits}", f"embed {spec.embedding}"]
    for g in bind(spec, p):
        if g.kind == "CNOT":
            lines.append(f"CNOT q{g.control} q{g.target}")
        elif g.kind == "H":
            lines.append(f"H q{g.target}")
        else:
            lines.append(f"{g.kind} q{g.target} {g.angle!r} trainable={int(g.trainable)}")
    lines.append("measure " + " ".join(f"{k}{q}" for k, q in spec.observables))
    return "\n".join(lines) + "\n"


def parse_circuit(text: str) -> tuple[CircuitSpec, np.ndarray]:
    """Inverse of :func:`dump_circuit`; returns the spec and its bound parameters."""
    n, embedding, gates, obs, params = None, "angle", [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        head = parts[0]
        try:
            if head == "qubits":
                n = int(parts[1])
            elif head == "embed":
                embedding = parts[1]
            elif head == "measure":
                obs = [(tok[0], int(tok[1:])) for tok in parts[1:]]
            elif head == "CNOT":
                gates.append(GateOp("CNOT", int(parts[2][1:]), control=int(parts[1][1:])))
            elif head == "H":
                gates.append(GateOp("H", int(parts[1][1:])))
            elif head in ROTATIONS:
                trainable = len(parts) > 3 and parts[3] == "trainable=1"
                angle = float(parts[2])
                if trainable:
                    gates.append(GateOp(head, int(parts[1][1:]), angle=angle, trainable=True,
                                        param_index=len(params)))
                    params.append(angle)
                else:
                    gates.append(GateOp(head, int(parts[1][1:]), angle=angle))
            else:
                raise ValueError(f"unknown directive {head!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"circuit dump line {lineno}: {raw!r}: {exc}") from exc
    if n is None:
        raise ValueError("circuit dump lacks a 'qubits' line")
    return CircuitSpec(n, embedding, gates, obs), np.array(params, dtype=float)
