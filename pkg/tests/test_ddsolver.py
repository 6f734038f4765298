from __future__ import annotations

from importlib.resources import files

import numpy as np
import pytest

from qmitdd import ddsolver as dd
from qmitdd.materialdb import KdTree, MaterialDatabase, RambergOsgoodParams, generate_db, tangent_scaling

RO = RambergOsgoodParams()
REF_STRESS = [3.0, 3.333, 3.0, -3.298, -3.298, -4.243, 0.283, -0.24, -0.24, 0.283, -4.243]


def roof():
    return dd.parse_truss((files("qmitdd") / "data" / "roof_truss.txt").read_text())


def single_bar(P=100.0, A=10.0, L=1000.0):
    return dd.TrussModel(
        nodes=[[0, 0], [L, 0]], bars=[[0, 1]], areas=[A],
        fixed=[[True, True], [False, True]], loads=[[0, 0], [P, 0]],
    )


def linear_db(C, eps):
    """Database lying exactly on sigma = C eps."""
    eps = np.asarray(eps, float)
    return MaterialDatabase(np.column_stack([eps, C * eps]), C)


def test_single_bar_operators():
    t = single_bar()
    asm = dd.assemble(t, 7.0)
    assert np.allclose(asm.B, [[-1e-3, 0, 1e-3, 0]])
    # only u_x of node 2 is free: K = w C / L^2
    assert asm.K.shape == (1, 1)
    assert asm.K[0, 0] == pytest.approx(1e4 * 7.0 / 1e6)


def test_under_constrained_truss_raises():
    t = single_bar()
    t.fixed[1, 1] = False
    with pytest.raises(dd.UnderConstrainedError):
        dd.assemble(t, 1.0)


def test_roof_truss_file():
    t = roof()
    assert (t.n_bars, len(t.nodes)) == (11, 7)
    assert t.loads[:, 1].sum() == pytest.approx(-600)
    asm = dd.assemble(t, 1e4)
    assert np.allclose(asm.K, asm.K.T)
    assert np.linalg.eigvalsh(asm.K).min() > 0


def test_shared_factor_matches_dense_solve():
    asm = dd.assemble(roof(), 3000.0)
    rhs = np.random.default_rng(0).normal(size=asm.B.shape[1])
    u = asm.solve(rhs)
    assert np.allclose(u[asm.free], np.linalg.solve(asm.K, rhs[asm.free]))
    assert np.all(u[~asm.free] == 0)


def test_projection_is_admissible():
    t = roof()
    db = generate_db(RO, -6, 6, 41, scaling=3000.0)
    asm = dd.assemble(t, 3000.0)
    s = dd.project(np.random.default_rng(1).integers(len(db), size=11), asm, db)
    assert dd.equilibrium_residual(asm, s.stresses) < 1e-8 * np.linalg.norm(asm.f)
    assert np.allclose(s.strains, asm.B @ s.u)
    # sigma = sigma* + C B eta
    assert np.allclose(s.stresses - db.stresses[s.assignments, 0], asm.C * asm.B @ s.eta)


def test_exact_solution_is_fixed_point():
    t = single_bar(P=100.0, A=10.0)
    C = 1e4
    sig = 100.0 / 10.0
    db = linear_db(C, [-2e-3, sig / C, 3e-3])
    asm = dd.assemble(t, C)
    state, changed, _ = dd.dd_iterate(dd.DDState(np.array([1])), asm, db, KdTree(db.scaled()),
                                      dd.ClassicalBackend())
    assert not changed
    assert np.allclose(state.eta, 0, atol=1e-15)
    assert state.stresses[0] == pytest.approx(sig)


def test_one_bar_two_points_matches_enumeration():
    t = single_bar(P=50.0, A=10.0)
    C = 1e4
    db = MaterialDatabase(np.array([[4e-4, 4.0], [7e-4, 5.5]]), C)
    asm = dd.assemble(t, C)
    costs = [dd.global_distance(dd.project([a], asm, db), asm, db) for a in range(2)]
    rep = dd.solve(t, db, rng=np.random.default_rng(0))
    assert rep.converged
    assert rep.assignments[0] == int(np.argmin(costs))


def test_classical_global_distance_never_increases():
    t = roof()
    C = tangent_scaling(RO, 6)
    db = generate_db(RO, -6, 6, 161, scaling=C)
    for seed in range(3):
        rep = dd.solve(t, db, rng=np.random.default_rng(seed))
        assert rep.converged
        assert np.all(np.diff(rep.distances) <= 1e-9 * rep.distances[0])


def test_solve_rejects_multidimensional_database():
    db = MaterialDatabase(np.zeros((3, 4)), np.eye(2))
    with pytest.raises(ValueError):
        dd.solve(single_bar(), db)


def test_reference_solution_single_bar():
    sig, u = dd.reference_solution(single_bar(P=40.0, A=10.0), RO)
    assert sig[0] == pytest.approx(4.0)
    assert u[2] == pytest.approx(RO.strain(4.0) * 1000)


def test_reference_solution_linear_regime():
    t = roof()
    lin = RambergOsgoodParams(alpha=0.0)
    sig, _ = dd.reference_solution(t.with_loads(t.loads * 1e-3), RO)
    sig_lin, _ = dd.reference_solution(t.with_loads(t.loads * 1e-3), lin)
    assert np.allclose(sig, sig_lin, rtol=1e-3)


def test_reference_solution_roof():
    sig, _ = dd.reference_solution(roof(), RO)
    assert np.allclose(sig, REF_STRESS, atol=1e-3)
    asm = dd.assemble(roof(), 1.0)
    assert dd.equilibrium_residual(asm, sig) < 1e-8


def test_reference_solution_unloaded():
    t = roof()
    sig, u = dd.reference_solution(t.with_loads(np.zeros_like(t.loads)), RO)
    assert not sig.any() and not u.any()


def test_rms_stress_error():
    w = np.array([1.0, 2.0, 3.0])
    ref = np.array([1.0, -2.0, 4.0])
    assert dd.rms_stress_error(ref, ref, w) == 0
    assert dd.rms_stress_error(1.1 * ref, ref, w) == pytest.approx(0.1)
    assert np.isnan(dd.rms_stress_error(ref, np.zeros(3), w))


@pytest.mark.parametrize("text, msg", [
    ("1 0 0\n", "before any section"),
    ("NODES\n1 0\n", "fields"),
    ("NODES\n1 0 0\n1 1 0\nBARS\n1 1 1 1\n", "duplicate"),
    ("NODES\n1 0 0\n2 1 0\nBARS\n1 1 3 1\n", "unknown node"),
    ("NODES\n1 0 0\n", "NODES and BARS"),
    ("NODES\n1 0 x\n2 1 0\nBARS\n1 1 2 1\n", "could not convert"),
])
def test_truss_parser_errors(text, msg):
    with pytest.raises(dd.TrussFileError, match=msg):
        dd.parse_truss(text)


@pytest.mark.parametrize("bars, areas", [
    ([[0, 0]], [1.0]), ([[0, 2]], [0.0]), ([[0, 1]], [1.0]), ([[0, 5]], [1.0]),
])
def test_invalid_truss_geometry(bars, areas):
    with pytest.raises(ValueError):
        dd.TrussModel(nodes=[[0, 0], [0, 0], [1, 0]], bars=bars, areas=areas,
                      fixed=np.zeros((3, 2)), loads=np.zeros((3, 2)))


def test_truss_parser_accepts_commas_and_comments():
    t = dd.parse_truss("""
        # a two-bar frame
        NODES
        1, 0, 0
        2, 100, 0   # tip
        3, 0, 100
        BARS
        10, 1, 2, 5
        11, 3, 2, 5
        SUPPORTS
        1 1 1
        3 1 1
        LOADS
        2 0 -10
    """)
    assert t.bar_ids == [10, 11]
    sig, _ = dd.reference_solution(t, RO)
    # the diagonal hangs the tip, the horizontal bar pushes back
    assert sig == pytest.approx([-2.0, 2 * np.sqrt(2)], rel=1e-9)


def test_quantum_backend_zero_vector_is_classical():
    b = dd.QuantumBackend(None, 100, 0)
    assert b.distance([0.0, 0.0], [3.0, 4.0], np.random.default_rng()) == 25.0
    assert b.name == "unmitigated"
    assert dd.QuantumBackend(None, 100, 0, folds=2).name == "mitigated-richardson"


def test_noiseless_quantum_backend_matches_classical_solution():
    t = roof()
    C = tangent_scaling(RO, 6)
    db = generate_db(RO, -6, 6, 41, scaling=C)
    a = dd.solve(t, db, rng=np.random.default_rng(4))
    b = dd.solve(t, db, dd.QuantumBackend(None, 10**14, 0), rng=np.random.default_rng(4))
    assert np.array_equal(a.assignments, b.assignments)
