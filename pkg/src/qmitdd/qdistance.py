"""Swap-test and Hadamard-test circuits for squared Euclidean distance."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .circuit import Circuit
from .transpile import decompose


class Algorithm(str, Enum):
    SWAP = "swap"
    H = "h"


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class DistanceEstimate:
    d_hat: float
    p_hat: float
    n_m: int
    algorithm: Algorithm
    lam: float = 1.0
    clamped: bool = False


def _vec(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if v.size < 1 or not np.all(np.isfinite(v)):
        raise ValueError("data vector must be non-empty and finite")
    return v


def index_bits(D: int) -> int:
    """Register qubits holding a D-dimensional vector, ceil(log2 D)."""
    return int(np.ceil(np.log2(D))) if D > 1 else 0


def amplitude_tree(amps) -> list[tuple[int, np.ndarray]]:
    """RY angles per level for a real normalized amplitude vector.

    Level l rotates register qubit l conditioned on qubits 0..l-1; the last
    level carries the signs of the amplitudes.
    """
    a = np.asarray(amps, dtype=float)
    m = int(np.log2(a.size))
    levels = []
    for lvl in range(m):
        blocks = a.reshape(2**lvl, 2, -1)
        if lvl < m - 1:
            left = np.linalg.norm(blocks[:, 0, :], axis=1)
            right = np.linalg.norm(blocks[:, 1, :], axis=1)
            theta = 2 * np.arctan2(right, left)
        else:
            theta = 2 * np.arctan2(blocks[:, 1, 0], blocks[:, 0, 0])
        levels.append((lvl, theta))
    return levels


def encode_amplitudes(amps, qubits, n_qubits: int, circuit: Circuit | None = None) -> Circuit:
    """Append a multiplexed-RY tree preparing ``amps`` on ``qubits``."""
    c = circuit if circuit is not None else Circuit(n_qubits)
    for lvl, theta in amplitude_tree(amps):
        c.append("ucry", list(qubits[:lvl]) + [qubits[lvl]], theta)
    return c


def psi_amplitudes(V, Vp) -> np.ndarray:
    V, Vp = _vec(V), _vec(Vp)
    if V.size != Vp.size:
        raise ValueError("vectors must have the same dimension")
    nv, nvp = np.linalg.norm(V), np.linalg.norm(Vp)
    if nv == 0 or nvp == 0:
        raise DegenerateInputError("state preparation needs non-zero vectors")
    size = 2 ** index_bits(V.size)
    amps = np.zeros(2 * size)
    amps[: V.size] = V / nv
    amps[size : size + Vp.size] = Vp / nvp
    return amps / np.sqrt(2)


def prepare_psi(V, Vp, circuit: Circuit | None = None, offset: int = 0) -> Circuit:
    """(|0>|V> + |1>|V'>)/sqrt 2 on 1 + ceil(log2 D) qubits starting at ``offset``."""
    amps = psi_amplitudes(V, Vp)
    k = int(np.log2(amps.size))
    qubits = list(range(offset, offset + k))
    return encode_amplitudes(amps, qubits, offset + k if circuit is None else circuit.n_qubits, circuit)


def phi_angle(V, Vp) -> float:
    nv, nvp = np.linalg.norm(_vec(V)), np.linalg.norm(_vec(Vp))
    if nv == 0 or nvp == 0:
        raise DegenerateInputError("Swap-based state needs |V|, |V'| > 0")
    return float(2 * np.arctan2(-nvp, nv))


def prepare_phi(V, Vp, circuit: Circuit | None = None, qubit: int = 0) -> Circuit:
    """(|V| |0> - |V'| |1>) / sqrt(Z) on one qubit."""
    c = circuit if circuit is not None else Circuit(qubit + 1)
    c.append("ry", [qubit], (phi_angle(V, Vp),))
    return c


def swap_test_circuit(V, Vp) -> Circuit:
    """Ancilla (q0), phi (q1), psi register (q2...); CSWAP exchanges q1 and q2."""
    k = 1 + index_bits(_vec(V).size)
    c = Circuit(2 + k)
    prepare_phi(V, Vp, c, qubit=1)
    prepare_psi(V, Vp, c, offset=2)
    c.append("h", [0])
    c.append("cswap", [0, 1, 2])
    c.append("h", [0])
    return c


def h_test_circuit(V, Vp) -> Circuit:
    k = 1 + index_bits(_vec(V).size)
    c = Circuit(k)
    prepare_psi(V, Vp, c, offset=0)
    c.append("h", [0])
    return c


def build_circuit(algorithm, V, Vp) -> Circuit:
    alg = Algorithm(algorithm)
    return swap_test_circuit(V, Vp) if alg is Algorithm.SWAP else h_test_circuit(V, Vp)


def basis_circuit(algorithm, V, Vp):
    return decompose(build_circuit(algorithm, V, Vp))


def squared_distance(V, Vp) -> float:
    return float(np.sum((_vec(V) - _vec(Vp)) ** 2))


def ideal_probability(algorithm, V, Vp) -> float:
    """Noiseless probability of measuring |0> on the first qubit."""
    V, Vp = _vec(V), _vec(Vp)
    if Algorithm(algorithm) is Algorithm.SWAP:
        Z = V @ V + Vp @ Vp
        return 0.5 + squared_distance(V, Vp) / (4 * Z)
    cos = V @ Vp / (np.linalg.norm(V) * np.linalg.norm(Vp))
    return float(0.5 + 0.5 * cos)


def distance_from_ps(p_s: float, Z: float) -> float:
    return 4 * Z * (p_s - 0.5)


def distance_from_ph(p_h: float, norm_v: float, norm_vp: float) -> float:
    return norm_v**2 + norm_vp**2 - 2 * norm_v * norm_vp * (2 * p_h - 1)


def distance_from_p(algorithm, p: float, V, Vp) -> float:
    nv, nvp = np.linalg.norm(_vec(V)), np.linalg.norm(_vec(Vp))
    if Algorithm(algorithm) is Algorithm.SWAP:
        return distance_from_ps(p, nv**2 + nvp**2)
    return distance_from_ph(p, nv, nvp)


def probability_range(algorithm) -> tuple[float, float]:
    """Probabilities that map to a non-negative distance formula input."""
    return (0.5, 1.0) if Algorithm(algorithm) is Algorithm.SWAP else (0.0, 1.0)


def theoretical_rmse(algorithm, V, Vp, n_m: int) -> float:
    """Sampling-only RMSE of d_hat for ``n_m`` measurements."""
    V, Vp = _vec(V), _vec(Vp)
    p = ideal_probability(algorithm, V, Vp)
    if Algorithm(algorithm) is Algorithm.SWAP:
        scale = 16 * (V @ V + Vp @ Vp) ** 2
    else:
        scale = 16 * (V @ V) * (Vp @ Vp)
    return float(np.sqrt(max(scale * p * (1 - p), 0.0) / n_m))


def random_pairs(count: int, D: int, rng: np.random.Generator, d_max: float = 4.0):
    """Vector pairs in [-1, 1]^D whose squared distances are uniform on [0, d_max]."""
    V = rng.uniform(-1, 1, size=(count, D))
    u = rng.normal(size=(count, D))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    d = rng.uniform(0, d_max, size=count)
    return V, V + np.sqrt(d)[:, None] * u


def nrmse(d_est, d_true) -> float:
    """sqrt(sum (d_est - d)^2 / (count * d_max^2))."""
    d_est, d_true = np.asarray(d_est, float), np.asarray(d_true, float)
    return float(np.sqrt(np.mean((d_est - d_true) ** 2)) / np.max(d_true))
