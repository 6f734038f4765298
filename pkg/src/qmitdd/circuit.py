"""Gate vocabulary, gate matrices and circuit containers.

Qubit 0 is the most significant bit of a computational-basis index, so a
multi-qubit gate matrix acts on its qubits in the order they are listed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SQRT2 = np.sqrt(2.0)

_ARITY = {
    "i": 1,
    "x": 1,
    "sx": 1,
    "sxdg": 1,
    "rz": 1,
    "h": 1,
    "ry": 1,
    "u": 1,
    "ecr": 2,
    "cx": 2,
    "ccx": 3,
    "cswap": 3,
}

BASIS_KINDS = frozenset({"i", "x", "sx", "sxdg", "rz", "ecr"})

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / SQRT2
SX = 0.5 * np.array([[1 + 1j, 1 - 1j], [1 - 1j, 1 + 1j]], dtype=complex)
SXDG = SX.conj().T
PAULIS = (I2, X, Y, Z)

# ECR = RZX(pi/4) . X(first) . RZX(-pi/4) = (X(x)I + Y(x)X) / sqrt(2)
ECR = (np.kron(X, I2) + np.kron(Y, X)) / SQRT2

CX = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)


class UnsupportedGateError(ValueError):
    """Raised for a gate kind outside the supported vocabulary."""


def rz(theta: float) -> np.ndarray:
    return np.array(
        [[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]], dtype=complex
    )


def ry(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


@dataclass(frozen=True)
class Gate:
    """One gate application.

    ``kind`` is a lower-case name; ``qubits`` lists the acted qubits in matrix
    order; ``params`` holds rotation angles (radians). A uniformly controlled
    RY (``kind="ucry"``) lists its controls first and the target last, with
    one angle per control pattern.
    """

    kind: str
    qubits: tuple[int, ...]
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if len(set(self.qubits)) != len(self.qubits):
            raise ValueError(f"gate {self.kind} has repeated qubits {self.qubits}")
        if self.kind == "ucry":
            if len(self.params) != 2 ** (len(self.qubits) - 1):
                raise ValueError("ucry needs one angle per control pattern")
            return
        arity = _ARITY.get(self.kind)
        if arity is None:
            raise UnsupportedGateError(f"unknown gate kind {self.kind!r}")
        if arity != len(self.qubits):
            raise ValueError(
                f"gate {self.kind} acts on {arity} qubits, got {self.qubits}"
            )

    @property
    def matrix(self) -> np.ndarray:
        return gate_matrix(self)

    def inverse(self) -> Gate:
        if self.kind in ("i", "x", "h", "ecr", "cx", "ccx", "cswap"):
            return self
        if self.kind == "sx":
            return Gate("sxdg", self.qubits)
        if self.kind == "sxdg":
            return Gate("sx", self.qubits)
        if self.kind in ("rz", "ry"):
            return Gate(self.kind, self.qubits, (-self.params[0],))
        if self.kind == "ucry":
            return Gate("ucry", self.qubits, tuple(-a for a in self.params))
        raise UnsupportedGateError(f"no inverse rule for {self.kind!r}")


def gate_matrix(gate: Gate) -> np.ndarray:
    k = gate.kind
    if k == "i":
        return I2
    if k == "x":
        return X
    if k == "sx":
        return SX
    if k == "sxdg":
        return SXDG
    if k == "h":
        return H
    if k == "rz":
        return rz(gate.params[0])
    if k == "ry":
        return ry(gate.params[0])
    if k == "u":
        # generic single-qubit unitary, params = ZYZ angles (phi, theta, lam)
        phi, theta, lam = gate.params
        return rz(phi) @ ry(theta) @ rz(lam)
    if k == "ecr":
        return ECR
    if k == "cx":
        return CX
    if k == "ccx":
        m = np.eye(8, dtype=complex)
        m[6:, 6:] = X
        return m
    if k == "cswap":
        m = np.eye(8, dtype=complex)
        m[[5, 6]] = m[[6, 5]]
        return m
    if k == "ucry":
        blocks = [ry(a) for a in gate.params]
        n = len(blocks)
        m = np.zeros((2 * n, 2 * n), dtype=complex)
        for j, b in enumerate(blocks):
            m[2 * j : 2 * j + 2, 2 * j : 2 * j + 2] = b
        return m
    raise UnsupportedGateError(f"unknown gate kind {k!r}")


@dataclass
class Circuit:
    """Ordered gate list on ``n_qubits`` qubits, all starting in |0>."""

    n_qubits: int
    gates: list[Gate] = field(default_factory=list)

    def append(self, kind: str, qubits, params=()) -> Circuit:
        qubits = tuple(int(q) for q in np.atleast_1d(qubits))
        if any(q < 0 or q >= self.n_qubits for q in qubits):
            raise ValueError(f"qubit index out of range in {kind} {qubits}")
        self.gates.append(Gate(kind, qubits, tuple(float(p) for p in params)))
        return self

    def extend(self, other: Circuit, offset: int = 0) -> Circuit:
        for g in other.gates:
            self.append(g.kind, [q + offset for q in g.qubits], g.params)
        return self

    def __len__(self) -> int:
        return len(self.gates)

    def depth(self) -> int:
        """Longest dependency chain over qubits."""
        level = [0] * self.n_qubits
        for g in self.gates:
            d = max(level[q] for q in g.qubits) + 1
            for q in g.qubits:
                level[q] = d
        return max(level, default=0)

    def unitary(self) -> np.ndarray:
        """Dense product of all gate matrices (brute force; small circuits only)."""
        u = np.eye(2**self.n_qubits, dtype=complex)
        for g in self.gates:
            u = embed(g.matrix, g.qubits, self.n_qubits) @ u
        return u

    def dumps(self) -> str:
        """One gate per line: ``KIND q0 [q1 q2] [theta ...]``."""
        lines = []
        for g in self.gates:
            parts = [g.kind.upper(), *map(str, g.qubits)]
            parts += [repr(float(p)) for p in g.params]
            lines.append(" ".join(parts))
        return "\n".join(lines) + ("\n" if lines else "")


@dataclass
class BasisCircuit(Circuit):
    """Circuit restricted to {I, X, SX, SXdg, RZ, ECR}.

    ``provenance[k]`` is the index of the source gate that produced basis
    gate ``k``.
    """

    provenance: list[int] = field(default_factory=list)

    def __post_init__(self):
        for g in self.gates:
            if g.kind not in BASIS_KINDS:
                raise ValueError(f"non-basis gate {g.kind!r} in BasisCircuit")


def loads(text: str, n_qubits: int | None = None) -> Circuit:
    """Parse the one-gate-per-line dump format back into a Circuit."""
    gates = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *rest = line.split()
        kind = kind.lower()
        if kind == "ucry":
            raise UnsupportedGateError("ucry cannot be round-tripped through a dump")
        arity = _ARITY.get(kind)
        if arity is None:
            raise UnsupportedGateError(f"unknown gate kind {kind!r}")
        qubits = tuple(int(q) for q in rest[:arity])
        params = tuple(float(p) for p in rest[arity:])
        gates.append(Gate(kind, qubits, params))
    if n_qubits is None:
        n_qubits = 1 + max((q for g in gates for q in g.qubits), default=0)
    return Circuit(n_qubits, gates)


def embed(mat: np.ndarray, qubits, n_qubits: int) -> np.ndarray:
    """Full 2^n x 2^n matrix of ``mat`` acting on ``qubits`` (in order)."""
    k = len(qubits)
    t = mat.reshape((2,) * (2 * k))
    eye = np.eye(2**n_qubits, dtype=complex).reshape((2,) * (2 * n_qubits))
    # contract gate input legs with the identity's row legs
    out = np.tensordot(t, eye, axes=(list(range(k, 2 * k)), list(qubits)))
    out = np.moveaxis(out, list(range(k)), list(qubits))
    return out.reshape(2**n_qubits, 2**n_qubits)
