"""Independent reference computations used by the test suite.

Nothing here imports the code paths it checks: finite differences only call
forward functions, the dense simulator builds full unitaries from Kronecker
products, and the Wilcoxon oracle walks every sign pattern explicitly.
"""

from __future__ import annotations

import itertools
from functools import reduce

import numpy as np

H_FD = 1e-5


def central_diff(f, x: np.ndarray, h: float = H_FD, indices=None) -> np.ndarray:
    """d f(x) / dx by central differences; ``f`` returns a scalar."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


# ------------------------------------------------------------ dense quantum

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
P0 = np.diag([1, 0]).astype(complex)
P1 = np.diag([0, 1]).astype(complex)


def expm_pauli(P: np.ndarray, theta: float) -> np.ndarray:
    # exp(-i theta P / 2) for a Pauli P (P^2 = I)
    return np.cos(theta / 2) * I2 - 1j * np.sin(theta / 2) * P


def on_qubit(op: np.ndarray, q: int, n: int) -> np.ndarray:
    # basis index bit q = qubit q, so the highest qubit is the leftmost Kronecker factor
    return reduce(np.kron, [op if k == q else I2 for k in reversed(range(n))])


def cnot(control: int, target: int, n: int) -> np.ndarray:
    return on_qubit(P0, control, n) + on_qubit(P1, control, n) @ on_qubit(X, target, n)


def gate_unitary(kind: str, target: int, n: int, angle: float = 0.0, control=None) -> np.ndarray:
    if kind == "CNOT":
        return cnot(control, target, n)
    if kind == "H":
        return on_qubit(H, target, n)
    return on_qubit(expm_pauli({"RX": X, "RY": Y, "RZ": Z}[kind], angle), target, n)


def observable(kind: str, q: int, n: int) -> np.ndarray:
    return on_qubit({"X": X, "Z": Z}[kind], q, n)


def dense_run(gates, psi0: np.ndarray, observables, n: int):
    """gates: iterable of (kind, target, angle, control). Returns (final state, expectations)."""
    psi = psi0.astype(complex)
    for kind, target, angle, control in gates:
        psi = gate_unitary(kind, target, n, angle, control) @ psi
    ev = [float(np.real(np.conj(psi) @ observable(k, q, n) @ psi)) for k, q in observables]
    return psi, np.array(ev)


def dense_angle_state(x, n: int) -> np.ndarray:
    psi = np.zeros(2 ** n, dtype=complex)
    psi[0] = 1
    for j in range(n):
        psi = on_qubit(expm_pauli(Y, np.pi * x[j]), j, n) @ psi
    return psi


# ------------------------------------------------------------ statistics

def avg_ranks(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    ranks = np.empty(v.size)
    for i, a in enumerate(v):
        less = np.sum(v < a)
        equal = np.sum(v == a)
        ranks[i] = less + (equal + 1) / 2.0
    return ranks


def wilcoxon_bruteforce(diffs) -> float:
    """P(W+ >= observed) over all 2^n sign patterns, zeros dropped."""
    d = np.asarray([x for x in diffs if x != 0], dtype=float)
    n = d.size
    if n == 0:
        return 1.0
    r = avg_ranks(np.abs(d))
    obs = r[d > 0].sum()
    patterns = np.array(list(itertools.product((0, 1), repeat=n)), dtype=float)
    hits = int(np.sum(patterns @ r >= obs - 1e-9))
    return hits / 2 ** n
