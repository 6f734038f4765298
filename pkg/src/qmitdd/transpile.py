"""Lowering to the {I, X, SX, RZ, ECR} basis and unitary gate folding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuit import SXDG, BASIS_KINDS, X, BasisCircuit, Circuit, Gate, UnsupportedGateError

ANGLE_ATOL = 1e-12
SPECIAL_ATOL = 1e-9

_ONE_QUBIT = frozenset({"i", "x", "sx", "sxdg", "rz", "ry", "h", "u"})


@dataclass(frozen=True)
class FoldingPlan:
    folds: int

    def __post_init__(self):
        if self.folds < 0:
            raise ValueError("number of folds must be non-negative")

    @property
    def scale(self) -> int:
        """Noise scale factor lambda = 1 + 2 i."""
        return 1 + 2 * self.folds


def _wrap(theta: float) -> float:
    t = (theta + np.pi) % (2 * np.pi) - np.pi
    return np.pi if abs(t + np.pi) < ANGLE_ATOL else t


def zyz_angles(u: np.ndarray) -> tuple[float, float, float]:
    """(phi, theta, lam) with u ~ RZ(phi) RY(theta) RZ(lam) up to global phase."""
    a, b = abs(u[0, 0]), abs(u[1, 0])
    theta = 2 * np.arctan2(b, a)
    if b < SPECIAL_ATOL:
        return np.angle(u[1, 1]) - np.angle(u[0, 0]), 0.0, 0.0
    if a < SPECIAL_ATOL:
        return np.angle(u[1, 0]) - np.angle(-u[0, 1]), np.pi, 0.0
    phi = np.angle(u[1, 0]) - np.angle(u[0, 0])
    lam = np.angle(u[1, 1]) - np.angle(u[1, 0])
    return phi, theta, lam


def synthesize_1q(u: np.ndarray, q: int) -> list[Gate]:
    """Basis gates (application order) equal to ``u`` up to global phase."""
    phi, theta, lam = zyz_angles(u)
    if theta < SPECIAL_ATOL:
        seq = [("rz", phi + lam)]
    elif abs(theta - np.pi) < SPECIAL_ATOL:
        seq = [("rz", lam + np.pi), ("x", None), ("rz", phi)]
    elif abs(theta - np.pi / 2) < SPECIAL_ATOL:
        seq = [("rz", lam - np.pi / 2), ("sx", None), ("rz", phi + np.pi / 2)]
    else:
        seq = [("rz", lam + np.pi), ("sx", None), ("rz", np.pi - theta), ("sx", None), ("rz", phi)]
    out = []
    for kind, angle in seq:
        if kind != "rz":
            out.append(Gate(kind, (q,)))
            continue
        angle = _wrap(angle)
        if abs(angle) > ANGLE_ATOL:
            out.append(Gate("rz", (q,), (angle,)))
    return out


def _gray(i: int) -> int:
    return i ^ (i >> 1)


def ucry_to_cx(controls, target, angles) -> list[Gate]:
    """Uniformly controlled RY as alternating RY / CX (Gray-code ordering).

    For control value j the target sees sum_i (-1)^popcount(j & g_i) alpha_i,
    so alpha = M^T theta / 2^k with M_ji = (-1)^popcount(j & g_i).
    """
    k = len(controls)
    if k == 0:
        return [Gate("ry", (target,), (angles[0],))]
    n = 2**k
    gray = [_gray(i) for i in range(n)]
    m = np.array([[(-1) ** bin(j & g).count("1") for g in gray] for j in range(n)])
    alpha = m.T @ np.asarray(angles, dtype=float) / n
    out = []
    for i in range(n):
        if abs(alpha[i]) > ANGLE_ATOL:
            out.append(Gate("ry", (target,), (float(alpha[i]),)))
        flip = gray[i] ^ gray[(i + 1) % n]
        bit = flip.bit_length() - 1
        # bit 0 of j is the last (least significant) control
        out.append(Gate("cx", (controls[k - 1 - bit], target)))
    return out


def _ccx(a: int, b: int, t: int) -> list[Gate]:
    T, TDG = (np.pi / 4,), (-np.pi / 4,)
    return [
        Gate("h", (t,)),
        Gate("cx", (b, t)),
        Gate("rz", (t,), TDG),
        Gate("cx", (a, t)),
        Gate("rz", (t,), T),
        Gate("cx", (b, t)),
        Gate("rz", (t,), TDG),
        Gate("cx", (a, t)),
        Gate("rz", (b,), T),
        Gate("rz", (t,), T),
        Gate("h", (t,)),
        Gate("cx", (a, b)),
        Gate("rz", (a,), T),
        Gate("rz", (b,), TDG),
        Gate("cx", (a, b)),
    ]


def _lower(g: Gate) -> list[Gate]:
    """Rewrite one gate into 1q gates, CX and ECR."""
    if g.kind in _ONE_QUBIT or g.kind in ("cx", "ecr"):
        return [g]
    if g.kind == "ccx":
        return _ccx(*g.qubits)
    if g.kind == "cswap":
        c, a, b = g.qubits
        return [Gate("cx", (b, a)), *_ccx(c, a, b), Gate("cx", (b, a))]
    if g.kind == "ucry":
        return ucry_to_cx(g.qubits[:-1], g.qubits[-1], g.params)
    raise UnsupportedGateError(f"no decomposition rule for {g.kind!r}")


_SDG = np.diag([1, -1j]).astype(complex)


def decompose(c: Circuit) -> BasisCircuit:
    """Lower ``c`` to the device basis.

    CX(a, b) becomes X(a), ECR(a, b), then S^dag(a) and SX^dag(b); runs of
    single-qubit gates between two-qubit gates are merged and resynthesized
    as at most RZ SX RZ SX RZ. A circuit already in the basis is returned as is.
    """
    if all(g.kind in BASIS_KINDS for g in c.gates):
        return BasisCircuit(c.n_qubits, list(c.gates), list(range(len(c.gates))))

    pending: dict[int, tuple[np.ndarray, int]] = {}
    gates: list[Gate] = []
    prov: list[int] = []

    def push_1q(q, mat, src):
        if q in pending:
            m, s = pending[q]
            pending[q] = (mat @ m, s)
        else:
            pending[q] = (mat, src)

    def flush(q):
        if q not in pending:
            return
        m, s = pending.pop(q)
        for bg in synthesize_1q(m, q):
            gates.append(bg)
            prov.append(s)

    for src, g in enumerate(c.gates):
        for lg in _lower(g):
            if lg.kind in _ONE_QUBIT:
                push_1q(lg.qubits[0], lg.matrix, src)
                continue
            a, b = lg.qubits
            if lg.kind == "cx":
                push_1q(a, X, src)
            flush(a)
            flush(b)
            gates.append(Gate("ecr", (a, b)))
            prov.append(src)
            if lg.kind == "cx":
                push_1q(a, _SDG, src)
                push_1q(b, SXDG, src)
    for q in sorted(pending):
        flush(q)
    return BasisCircuit(c.n_qubits, gates, prov)


def fold(c: BasisCircuit, folds: int) -> BasisCircuit:
    """Replace every gate G in place by G (G^dag G)^folds."""
    if folds < 0:
        raise ValueError("number of folds must be non-negative")
    gates, prov = [], []
    src = c.provenance or list(range(len(c.gates)))
    for g, s in zip(c.gates, src):
        inv = g.inverse()
        seq = [g] + [inv, g] * folds
        gates.extend(seq)
        prov.extend([s] * len(seq))
    return BasisCircuit(c.n_qubits, gates, prov)


def gate_census(c: Circuit) -> tuple[int, int, int]:
    """(m_s, m_t, m_d): noisy 1q gates, ECR gates, and m_s + 2 m_t."""
    m_s = sum(g.kind in ("i", "x", "sx", "sxdg") for g in c.gates)
    m_t = sum(g.kind == "ecr" for g in c.gates)
    return m_s, m_t, m_s + 2 * m_t
