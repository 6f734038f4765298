"""Device noise: depolarizing plus thermal relaxation per gate class."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .circuit import PAULIS, Gate
from .config import parse_kv
from .qsim import KrausChannel, identity_channel

ONE_QUBIT_NOISY = frozenset({"i", "x", "sx", "sxdg"})
TWO_QUBIT_NOISY = frozenset({"ecr"})
EIG_CUTOFF = 1e-10


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceCalibration:
    """Median device parameters; times in microseconds."""

    T1: float
    T2: float
    Tg_1q: float
    Tg_2q: float
    eps_g_1q: float
    eps_g_2q: float
    q_e: float = 0.0

    def __post_init__(self):
        if not self.T1 > 0:
            raise CalibrationError("T1 must be positive")
        if not 0 < self.T2 < 2 * self.T1:
            raise CalibrationError("T2 must lie in (0, 2*T1)")
        if self.Tg_1q < 0 or self.Tg_2q < 0:
            raise CalibrationError("gate times must be non-negative")
        for name in ("eps_g_1q", "eps_g_2q", "q_e"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise CalibrationError(f"{name} must lie in [0, 1)")

    @classmethod
    def from_file(cls, path) -> DeviceCalibration:
        """Load a ``key = value`` calibration document; unknown keys are rejected."""
        values = parse_kv(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise CalibrationError(f"unknown calibration keys: {sorted(unknown)}")
        try:
            return cls(**{k: float(v) for k, v in values.items()})
        except TypeError as exc:
            raise CalibrationError(str(exc)) from None

    def dumps(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n" for f in fields(self))


# ibm_osaka medians, 2024-04-15
OSAKA = DeviceCalibration(
    T1=280.0, T2=127.0, Tg_1q=0.06, Tg_2q=0.66, eps_g_1q=2.77e-4, eps_g_2q=8.56e-3
)


def relax_dephase_probs(T1: float, T2: float, Tg: float) -> tuple[float, float]:
    """Survival factors (exp(-Tg/T1), exp(-Tg/T2)) over one gate."""
    if T1 <= 0 or T2 <= 0:
        raise CalibrationError("T1 and T2 must be positive")
    return float(np.exp(-Tg / T1)), float(np.exp(-Tg / T2))


def thermal_relaxation_channel(
    T1: float, T2: float, Tg: float, q_e: float = 0.0
) -> KrausChannel:
    """Single-qubit thermal relaxation over a gate of duration ``Tg``.

    For T2 <= T1 the channel is a mixture of identity, Z and resets to |0>
    and |1>; for T1 < T2 < 2 T1 it is built from its Choi matrix.
    """
    if T2 >= 2 * T1:
        raise CalibrationError("thermal relaxation requires T2 < 2*T1")
    e1, e2 = relax_dephase_probs(T1, T2, Tg)
    if T2 <= T1:
        q_r0 = (1 - q_e) * (1 - e1)
        q_r1 = q_e * (1 - e1)
        q_z = e1 * (1 - e2 / e1) / 2
        q_id = 1 - q_z - q_r0 - q_r1
        return KrausChannel(tuple(k for k in _mixture_kraus(q_id, q_z, q_r0, q_r1)))
    return KrausChannel(tuple(kraus_from_choi(thermal_choi(e1, e2, q_e))))


def _mixture_kraus(q_id, q_z, q_r0, q_r1):
    yield np.sqrt(q_id) * PAULIS[0]
    if q_z > 0:
        yield np.sqrt(q_z) * PAULIS[3]
    # reset to |0>: {|0><0|, |0><1|}; reset to |1>: {|1><0|, |1><1|}
    for w, target in ((q_r0, 0), (q_r1, 1)):
        if w > 0:
            for src in (0, 1):
                k = np.zeros((2, 2), dtype=complex)
                k[target, src] = np.sqrt(w)
                yield k


def thermal_choi(eps_T1: float, eps_T2: float, p_e: float = 0.0) -> np.ndarray:
    """Choi matrix sum_ij |i><j| (x) E(|i><j|) of thermal relaxation."""
    p_r = 1 - eps_T1
    return np.array(
        [
            [1 - p_e * p_r, 0, 0, eps_T2],
            [0, p_e * p_r, 0, 0],
            [0, 0, (1 - p_e) * p_r, 0],
            [eps_T2, 0, 0, 1 - (1 - p_e) * p_r],
        ],
        dtype=complex,
    )


def kraus_from_choi(choi: np.ndarray) -> list[np.ndarray]:
    w, v = np.linalg.eigh(choi)
    if w.min() < -EIG_CUTOFF:
        raise CalibrationError("Choi matrix is not positive semidefinite")
    d = int(round(np.sqrt(choi.shape[0])))
    # column vector |K>> has entry (i, out) = K[out, i]
    return [
        np.sqrt(lam) * v[:, k].reshape(d, d).T for k, lam in enumerate(w) if lam > EIG_CUTOFF
    ]


def choi_action(choi: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """tr_1[choi (rho^T (x) I)] by explicit partial trace."""
    d = rho.shape[0]
    m = (choi @ np.kron(rho.T, np.eye(d))).reshape(d, d, d, d)
    return np.einsum("ikil->kl", m)


def _check_q(q: float, name: str) -> float:
    if q < -1e-6 or q > 1 + 1e-6:
        raise CalibrationError(f"{name}={q:.6g} outside [0, 1]: inconsistent calibration")
    return float(min(max(q, 0.0), 1.0))


def depolarizing_q1(eps_g: float, eps_T1: float, eps_T2: float) -> float:
    """Single-qubit depolarizing probability consistent with the gate error rate."""
    d1 = eps_T1 + 2 * eps_T2
    if d1 <= 0:
        raise CalibrationError("eps_T1 + 2*eps_T2 must be positive")
    return _check_q(1 + 3 * (2 * eps_g - 1) / d1, "q1")


def depolarizing_q2(eps_g: float, eps_T1: float, eps_T2: float) -> float:
    d2 = 2 * eps_T1 + eps_T1**2 + 4 * eps_T2 + 4 * eps_T2**2 + 4 * eps_T1 * eps_T2
    if d2 <= 0:
        raise CalibrationError("d2 must be positive")
    return _check_q(1 + 5 * (4 * eps_g - 3) / d2, "q2")


def depolarizing_channel(q: float, n_qubits: int = 1) -> KrausChannel:
    """(1-q) rho + q/4^n sum_P P rho P over all n-qubit Pauli strings."""
    if not 0 <= q <= 1:
        raise ValueError("depolarizing probability must lie in [0, 1]")
    strings = [np.eye(1, dtype=complex)]
    for _ in range(n_qubits):
        strings = [np.kron(s, p) for s in strings for p in PAULIS]
    m = len(strings)
    ops = [np.sqrt(1 - q + q / m) * strings[0]]
    ops += [np.sqrt(q / m) * s for s in strings[1:]] if q > 0 else []
    return KrausChannel(tuple(ops), tuple(range(n_qubits)))


@dataclass(eq=False)
class NoiseModel:
    """Channels applied after each gate, keyed by gate class.

    Each entry is a list of ``(channel, positions)`` where ``positions``
    index into the gate's qubit tuple. The ``noiseless`` class is always
    empty.
    """

    one_qubit: list = field(default_factory=list)
    two_qubit: list = field(default_factory=list)

    def channels_for(self, gate: Gate):
        if gate.kind in ONE_QUBIT_NOISY:
            return self.one_qubit
        if gate.kind in TWO_QUBIT_NOISY:
            return self.two_qubit
        return []

    @property
    def classes(self) -> dict:
        return {"1q-noisy": self.one_qubit, "2q-noisy": self.two_qubit, "noiseless": []}


def build_noise_model(cal: DeviceCalibration = OSAKA) -> NoiseModel:
    """Depolarizing then thermal relaxation after I/X/SX (and SXdg) and ECR; RZ is virtual."""
    e1, e2 = relax_dephase_probs(cal.T1, cal.T2, cal.Tg_1q)
    q1 = depolarizing_q1(cal.eps_g_1q, e1, e2)
    relax1 = thermal_relaxation_channel(cal.T1, cal.T2, cal.Tg_1q, cal.q_e)
    e1, e2 = relax_dephase_probs(cal.T1, cal.T2, cal.Tg_2q)
    q2 = depolarizing_q2(cal.eps_g_2q, e1, e2)
    relax2 = thermal_relaxation_channel(cal.T1, cal.T2, cal.Tg_2q, cal.q_e)
    one = [(depolarizing_channel(q1, 1), (0,)), (relax1, (0,))]
    two = [(depolarizing_channel(q2, 2), (0, 1)), (relax2, (0,)), (relax2, (1,))]
    return NoiseModel(_drop_identity(one), _drop_identity(two))


def depolarizing_noise_model(q: float) -> NoiseModel:
    """Pure single-qubit depolarizing on every noisy 1q gate (analysis helper)."""
    return NoiseModel([(depolarizing_channel(q, 1), (0,))], [])


def _drop_identity(entries):
    keep = []
    for ch, pos in entries:
        if len(ch.operators) == 1 and np.allclose(
            ch.operators[0], np.eye(ch.operators[0].shape[0]), atol=1e-15
        ):
            continue
        keep.append((ch, pos))
    return keep


def is_identity(ch: KrausChannel) -> bool:
    return np.allclose(ch.superop(), identity_channel(len(ch.qubits)).superop(), atol=1e-14)
