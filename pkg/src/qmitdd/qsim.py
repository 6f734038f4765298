"""Dense density-matrix simulator with Kraus-channel noise.

A state on n qubits is kept internally as a tensor with 2n axes of size 2:
the first n are row (ket) indices, the last n column (bra) indices. Gates and
channels act on their local axes only, so no 2^n x 2^n operator is ever built
during circuit evaluation.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .circuit import Circuit, Gate, embed

MAX_QUBITS = 10
ROUNDOFF = 1e-10


class SimulatorCapacityError(ValueError):
    pass


class StateValidityError(ArithmeticError):
    pass


class DensityMatrix:
    """Mixed state of ``n_qubits`` qubits."""

    __slots__ = ("n_qubits", "data")

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=complex)
        dim = data.shape[0]
        n = int(round(np.log2(dim))) if dim else -1
        if data.ndim != 2 or data.shape != (dim, dim) or 2**n != dim:
            raise ValueError(f"density matrix must be 2^n x 2^n, got {data.shape}")
        self.n_qubits = n
        self.data = data

    @classmethod
    def zero_state(cls, n_qubits: int) -> DensityMatrix:
        rho = np.zeros((2**n_qubits, 2**n_qubits), dtype=complex)
        rho[0, 0] = 1.0
        return cls(rho)

    @classmethod
    def from_statevector(cls, psi) -> DensityMatrix:
        psi = np.asarray(psi, dtype=complex)
        return cls(np.outer(psi, psi.conj()))

    def trace(self) -> float:
        return float(np.trace(self.data).real)

    def validate(self, atol: float = 1e-12) -> None:
        """Raise StateValidityError unless trace 1, Hermitian and PSD."""
        d = self.data
        tr = np.trace(d)
        if abs(tr - 1) > atol:
            raise StateValidityError(f"trace {tr} != 1")
        if np.max(np.abs(d - d.conj().T)) > atol:
            raise StateValidityError("density matrix is not Hermitian")
        lo = np.linalg.eigvalsh(0.5 * (d + d.conj().T)).min()
        if lo < -ROUNDOFF:
            raise StateValidityError(f"negative eigenvalue {lo}")

    def _tensor(self) -> np.ndarray:
        return self.data.reshape((2,) * (2 * self.n_qubits))


@dataclass(frozen=True, eq=False)
class KrausChannel:
    """CPTP map rho -> sum_k K rho K^dagger on ``qubits`` (matrix order)."""

    operators: tuple[np.ndarray, ...]
    qubits: tuple[int, ...] = (0,)

    def __post_init__(self):
        ops = tuple(np.asarray(k, dtype=complex) for k in self.operators)
        if not ops:
            raise ValueError("channel needs at least one Kraus operator")
        dim = 2 ** len(self.qubits)
        for k in ops:
            if k.shape != (dim, dim):
                raise ValueError(f"Kraus operator shape {k.shape}, expected {dim}x{dim}")
        total = sum(k.conj().T @ k for k in ops)
        err = np.max(np.abs(total - np.eye(dim)))
        if err > ROUNDOFF:
            raise ValueError(f"channel is not trace preserving (error {err:.3e})")
        object.__setattr__(self, "operators", ops)
        object.__setattr__(self, "qubits", tuple(self.qubits))

    def superop(self) -> np.ndarray:
        """Row-major Liouville matrix, sum_k K (x) conj(K)."""
        return sum(np.kron(k, k.conj()) for k in self.operators)

    def on(self, qubits) -> KrausChannel:
        return KrausChannel(self.operators, tuple(qubits))


def identity_channel(n_qubits: int = 1) -> KrausChannel:
    return KrausChannel((np.eye(2**n_qubits),), tuple(range(n_qubits)))


def _apply_local(t: np.ndarray, op: np.ndarray, qubits, n: int) -> np.ndarray:
    # op: (2,)*2k tensor acting on row axes ``qubits``
    k = len(qubits)
    out = np.tensordot(op, t, axes=(list(range(k, 2 * k)), list(qubits)))
    return np.moveaxis(out, list(range(k)), list(qubits))


def _apply_superop(t: np.ndarray, sop: np.ndarray, qubits, n: int) -> np.ndarray:
    k = len(qubits)
    axes = list(qubits) + [n + q for q in qubits]
    s = sop.reshape((2,) * (4 * k))
    out = np.tensordot(s, t, axes=(list(range(2 * k, 4 * k)), axes))
    return np.moveaxis(out, list(range(2 * k)), axes)


def _apply_unitary_tensor(t, u, qubits, n):
    k = len(qubits)
    ut = u.reshape((2,) * (2 * k))
    t = _apply_local(t, ut, qubits, n)
    cols = [n + q for q in qubits]
    return _apply_local(t, ut.conj(), cols, n)


def apply_unitary(rho: DensityMatrix, gate: Gate) -> DensityMatrix:
    """U rho U^dagger with the gate embedded on its target qubits."""
    n = rho.n_qubits
    if any(q < 0 or q >= n for q in gate.qubits):
        raise ValueError(f"gate {gate.kind} on {gate.qubits} does not fit {n} qubits")
    t = _apply_unitary_tensor(rho._tensor(), gate.matrix, gate.qubits, n)
    return DensityMatrix(t.reshape(rho.data.shape))


def apply_channel(rho: DensityMatrix, ch: KrausChannel) -> DensityMatrix:
    n = rho.n_qubits
    if any(q < 0 or q >= n for q in ch.qubits):
        raise ValueError(f"channel on {ch.qubits} does not fit {n} qubits")
    t = _apply_superop(rho._tensor(), ch.superop(), ch.qubits, n)
    return DensityMatrix(t.reshape(rho.data.shape))


def prob_first_qubit_zero(rho: DensityMatrix) -> float:
    """Probability that qubit 0 (the most significant bit) reads |0>."""
    diag = np.real(np.diag(rho.data))
    half = diag[: diag.size // 2]
    if half.min(initial=0.0) < -ROUNDOFF:
        raise StateValidityError(f"negative population {half.min()}")
    p = float(np.clip(half, 0.0, None).sum())
    if p > 1 + ROUNDOFF:
        raise StateValidityError(f"probability {p} exceeds 1")
    return min(p, 1.0)


# per-noise-model cache of fused gate superoperators
_SUPEROP_CACHE: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()


def _local_noisy_superop(gate: Gate, noise) -> np.ndarray | None:
    """Superop of the noisy gate on its own qubits, or None if noiseless."""
    channels = noise.channels_for(gate) if noise is not None else []
    if not channels:
        return None
    k = len(gate.qubits)
    u = gate.matrix
    sop = np.kron(u, u.conj())
    for ch, pos in channels:
        local = [embed(kop, pos, k) for kop in ch.operators]
        sop = sum(np.kron(m, m.conj()) for m in local) @ sop
    return sop


def _folded_superop(gate: Gate, noise, folds: int):
    """Superop of G (G^dag G)^folds, or None if the gate carries no noise."""
    parametric = bool(gate.params)
    key = (gate.kind, gate.params if parametric else (), folds)
    cache = _SUPEROP_CACHE.setdefault(noise, {}) if noise is not None else None
    if cache is not None and key in cache:
        return cache[key]
    s = _local_noisy_superop(gate, noise)
    if s is not None and folds:
        sinv = _local_noisy_superop(gate.inverse(), noise)
        pair = s @ sinv
        s = np.linalg.matrix_power(pair, folds) @ s
    if cache is not None and not parametric:
        cache[key] = s
    return s


def run_circuit(
    circuit: Circuit,
    noise=None,
    *,
    folds: int = 0,
    check: bool = False,
) -> tuple[DensityMatrix, float]:
    """Evolve |0..0> through ``circuit`` and return (rho, P[qubit 0 = 0]).

    Each gate is applied as a unitary followed by its noise channels from
    ``noise`` (any object with ``channels_for(gate)`` returning
    ``[(KrausChannel, positions)]``, positions indexing ``gate.qubits``).
    ``folds=i`` evaluates the circuit with every gate G replaced in place by
    G (G^dag G)^i, identical to running ``transpile.fold(circuit, i)`` but
    fused per gate. ``check`` validates the state after every gate.
    """
    n = circuit.n_qubits
    if n > MAX_QUBITS:
        raise SimulatorCapacityError(f"{n} qubits exceeds simulator limit {MAX_QUBITS}")
    if folds < 0:
        raise ValueError("folds must be non-negative")
    t = DensityMatrix.zero_state(n)._tensor()
    for gate in circuit.gates:
        sop = _folded_superop(gate, noise, folds)
        if sop is None:
            # noiseless: folding collapses to the gate itself
            t = _apply_unitary_tensor(t, gate.matrix, gate.qubits, n)
        else:
            t = _apply_superop(t, sop, gate.qubits, n)
        if check:
            DensityMatrix(t.reshape(2**n, 2**n)).validate()
    rho = DensityMatrix(t.reshape(2**n, 2**n))
    return rho, prob_first_qubit_zero(rho)


def statevector(circuit: Circuit) -> np.ndarray:
    """Noiseless pure-state output (used for amplitude checks)."""
    n = circuit.n_qubits
    psi = np.zeros((2,) * n, dtype=complex)
    psi[(0,) * n] = 1.0
    for g in circuit.gates:
        k = len(g.qubits)
        psi = _apply_local(psi, g.matrix.reshape((2,) * (2 * k)), g.qubits, n)
    return psi.reshape(-1)
