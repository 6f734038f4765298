from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmitdd.circuit import (
    BASIS_KINDS,
    BasisCircuit,
    Circuit,
    Gate,
    UnsupportedGateError,
    loads,
)
from qmitdd.qsim import run_circuit
from qmitdd.transpile import FoldingPlan, decompose, fold, gate_census, synthesize_1q, ucry_to_cx


def equal_up_to_phase(a, b, atol=1e-10):
    k = np.unravel_index(np.argmax(np.abs(b)), b.shape)
    phase = a[k] / b[k]
    return abs(abs(phase) - 1) < atol and np.allclose(a, phase * b, atol=atol)


def single(kind, n, qubits, params=()):
    return Circuit(n).append(kind, qubits, params)


def test_basis_circuit_passes_through():
    c = single("x", 1, [0])
    out = decompose(c)
    assert [g.kind for g in out.gates] == ["x"]


def test_h_becomes_three_basis_gates():
    out = decompose(single("h", 1, [0]))
    assert [g.kind for g in out.gates] == ["rz", "sx", "rz"]
    assert equal_up_to_phase(out.unitary(), single("h", 1, [0]).unitary())


@pytest.mark.parametrize(
    "kind, n, qubits",
    [("cx", 2, [0, 1]), ("cx", 2, [1, 0]), ("ccx", 3, [0, 1, 2]), ("ccx", 3, [2, 0, 1]),
     ("cswap", 3, [0, 1, 2]), ("cswap", 3, [1, 2, 0])],
)
def test_multi_qubit_rules_preserve_unitary(kind, n, qubits):
    c = single(kind, n, qubits)
    out = decompose(c)
    assert all(g.kind in BASIS_KINDS for g in out.gates)
    assert equal_up_to_phase(out.unitary(), c.unitary())


def test_cx_uses_one_ecr():
    assert gate_census(decompose(single("cx", 2, [0, 1])))[1] == 1


@settings(max_examples=40, deadline=None)
@given(st.floats(-2 * np.pi, 2 * np.pi), st.sampled_from(["rz", "ry"]))
def test_rotation_families(theta, kind):
    c = single(kind, 1, [0], [theta])
    assert equal_up_to_phase(decompose(c).unitary(), c.unitary())


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-np.pi, np.pi), min_size=3, max_size=3))
def test_generic_1q_synthesis(angles):
    u = Gate("u", (0,), tuple(angles)).matrix
    c = Circuit(1, synthesize_1q(u, 0))
    assert equal_up_to_phase(c.unitary(), u)


@pytest.mark.parametrize("controls", [0, 1, 2, 3])
def test_multiplexed_ry(controls):
    rng = np.random.default_rng(controls)
    angles = rng.uniform(-np.pi, np.pi, 2**controls)
    qubits = list(range(controls + 1))
    c = single("ucry", controls + 1, qubits, angles)
    lowered = Circuit(controls + 1, ucry_to_cx(qubits[:-1], qubits[-1], angles))
    assert np.allclose(lowered.unitary(), c.unitary(), atol=1e-12)
    assert equal_up_to_phase(decompose(c).unitary(), c.unitary())


def test_unknown_gate_rejected():
    with pytest.raises(UnsupportedGateError):
        Gate("toffoli4", (0, 1, 2, 3))


def test_basis_circuit_rejects_non_basis_gate():
    with pytest.raises(ValueError):
        BasisCircuit(1, [Gate("h", (0,))])


def test_fold_counts_and_scale():
    c = decompose(Circuit(2).append("x", [0]).append("sx", [1]).append("ecr", [0, 1])
                  .append("rz", [0], [0.4]).append("x", [1]))
    assert len(c) == 5
    assert fold(c, 0).gates == c.gates
    f = fold(c, 1)
    assert len(f) == 15
    assert FoldingPlan(1).scale == 3
    assert f.gates[:3] == [Gate("x", (0,))] * 3
    assert f.gates[3:6] == [Gate("sx", (1,)), Gate("sxdg", (1,)), Gate("sx", (1,))]
    with pytest.raises(ValueError):
        FoldingPlan(-1)


@pytest.mark.parametrize("i", range(7))
def test_fold_preserves_noiseless_probability(i):
    rng = np.random.default_rng(5)
    c = Circuit(3)
    prep = rng.uniform(-np.pi, np.pi, 7)
    c.append("ry", [0], prep[:1]).append("ucry", [0, 1], prep[1:3]).append("ucry", [0, 1, 2], [*prep[3:7]])
    c.append("cswap", [0, 1, 2]).append("h", [0])
    b = decompose(c)
    assert abs(run_circuit(fold(b, i))[1] - run_circuit(b)[1]) < 1e-10
    assert equal_up_to_phase(fold(b, i).unitary(), c.unitary())


def test_census():
    assert gate_census(Circuit(2)) == (0, 0, 0)
    c = Circuit(2).append("x", [0]).append("x", [0]).append("x", [1]).append("ecr", [0, 1])
    assert gate_census(c) == (3, 1, 5)
    c.append("rz", [0], [1.0])
    assert gate_census(c) == (3, 1, 5)
    m_d = gate_census(c)[2]
    for i in range(4):
        assert gate_census(fold(decompose(c), i))[2] == (1 + 2 * i) * m_d


def test_provenance_points_at_source_gates():
    c = Circuit(2).append("h", [0]).append("cx", [0, 1]).append("h", [1])
    b = decompose(c)
    assert len(b.provenance) == len(b.gates)
    assert set(b.provenance) <= {0, 1, 2}
    assert b.provenance[[g.kind for g in b.gates].index("ecr")] == 1


def test_dump_roundtrip():
    c = decompose(Circuit(2).append("h", [0]).append("cx", [0, 1]))
    again = loads(c.dumps(), 2)
    assert again.gates == c.gates
