"""Distance-minimizing data-driven solver for pin-jointed trusses.

The admissible set is enforced by two linear solves sharing one matrix
K = sum_e w_e B_e^T C B_e. Material points come from a database searched
with a k-d tree whose leaf distances may come from any backend.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import qdistance, zne
from .estimation import SamplingPolicy, sample_counts, stream
from .materialdb import KdTree, MaterialDatabase, RambergOsgoodParams, scale_points

log = logging.getLogger(__name__)

MAX_ITER = 500
NEWTON_MAX_ITER = 100


class TrussFileError(ValueError):
    pass


class UnderConstrainedError(ArithmeticError):
    pass


@dataclass
class TrussModel:
    """Node coordinates in mm, bar areas in mm^2, loads in N.

    ``bars`` and ``fixed`` index nodes by position; the file ids are kept
    in ``node_ids`` and ``bar_ids`` for reporting.
    """

    nodes: np.ndarray
    bars: np.ndarray
    areas: np.ndarray
    fixed: np.ndarray
    loads: np.ndarray
    node_ids: list[int] = field(default_factory=list)
    bar_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 2)
        self.bars = np.asarray(self.bars, dtype=int).reshape(-1, 2)
        self.areas = np.asarray(self.areas, dtype=float).ravel()
        self.fixed = np.asarray(self.fixed, dtype=bool).reshape(self.nodes.shape)
        self.loads = np.asarray(self.loads, dtype=float).reshape(self.nodes.shape)
        n = len(self.nodes)
        if not self.node_ids:
            self.node_ids = list(range(1, n + 1))
        if not self.bar_ids:
            self.bar_ids = list(range(1, len(self.bars) + 1))
        if len(self.areas) != len(self.bars):
            raise TrussFileError("one area per bar required")
        if np.any(self.areas <= 0):
            raise TrussFileError("bar areas must be positive")
        if self.bars.size and (self.bars.min() < 0 or self.bars.max() >= n):
            raise TrussFileError("bar refers to an unknown node")
        if np.any(self.bars[:, 0] == self.bars[:, 1]):
            raise TrussFileError("bar connects a node to itself")
        if np.any(self.lengths() <= 0):
            raise TrussFileError("bar of zero length")

    @property
    def n_bars(self) -> int:
        return len(self.bars)

    @property
    def n_dofs(self) -> int:
        return 2 * len(self.nodes)

    def lengths(self) -> np.ndarray:
        d = self.nodes[self.bars[:, 1]] - self.nodes[self.bars[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def volumes(self) -> np.ndarray:
        return self.areas * self.lengths()

    def with_loads(self, loads) -> TrussModel:
        return TrussModel(self.nodes, self.bars, self.areas, self.fixed, loads,
                          list(self.node_ids), list(self.bar_ids))


_SECTIONS = {"NODES": 3, "BARS": 4, "SUPPORTS": 3, "LOADS": 3}


def parse_truss(text: str) -> TrussModel:
    """Read NODES / BARS / SUPPORTS / LOADS sections; '#' starts a comment."""
    rows: dict[str, list[list[str]]] = {k: [] for k in _SECTIONS}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.upper() in _SECTIONS:
            section = line.upper()
            continue
        if section is None:
            raise TrussFileError(f"line {lineno}: data before any section header")
        parts = line.replace(",", " ").split()
        if len(parts) != _SECTIONS[section]:
            raise TrussFileError(f"line {lineno}: {section} rows need {_SECTIONS[section]} fields")
        rows[section].append(parts)
    if not rows["NODES"] or not rows["BARS"]:
        raise TrussFileError("truss needs NODES and BARS sections")

    try:
        node_ids = [int(r[0]) for r in rows["NODES"]]
        if len(set(node_ids)) != len(node_ids):
            raise TrussFileError("duplicate node id")
        pos = {nid: i for i, nid in enumerate(node_ids)}
        nodes = [[float(r[1]), float(r[2])] for r in rows["NODES"]]
        bars, areas, bar_ids = [], [], []
        for r in rows["BARS"]:
            bar_ids.append(int(r[0]))
            bars.append([pos[int(r[1])], pos[int(r[2])]])
            areas.append(float(r[3]))
        fixed = np.zeros((len(nodes), 2), bool)
        for r in rows["SUPPORTS"]:
            fixed[pos[int(r[0])]] = [bool(int(r[1])), bool(int(r[2]))]
        loads = np.zeros((len(nodes), 2))
        for r in rows["LOADS"]:
            loads[pos[int(r[0])]] += [float(r[1]), float(r[2])]
    except KeyError as exc:
        raise TrussFileError(f"reference to unknown node {exc.args[0]}") from None
    except ValueError as exc:
        if isinstance(exc, TrussFileError):
            raise
        raise TrussFileError(str(exc)) from None
    return TrussModel(nodes, bars, areas, fixed, loads, node_ids, bar_ids)


def load_truss(path) -> TrussModel:
    return parse_truss(Path(path).read_text())


@dataclass
class Assembly:
    B: np.ndarray  # (bars, dofs) strain-displacement rows, 1/mm
    w: np.ndarray  # bar volumes, mm^3
    C: float
    free: np.ndarray
    K: np.ndarray  # free-dof block of sum_e w_e C B_e^T B_e
    factor: tuple
    f: np.ndarray  # full load vector

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """K^-1 rhs on the free dofs; constrained dofs stay zero."""
        u = np.zeros(self.B.shape[1])
        u[self.free] = cho_solve(self.factor, rhs[self.free])
        return u


def strain_rows(truss: TrussModel) -> np.ndarray:
    """B_e = (-c, -s, c, s) / L placed on the dofs of the bar's end nodes."""
    L = truss.lengths()
    d = truss.nodes[truss.bars[:, 1]] - truss.nodes[truss.bars[:, 0]]
    cs = d / L[:, None]
    B = np.zeros((truss.n_bars, truss.n_dofs))
    rows = np.arange(truss.n_bars)
    for k in range(2):
        B[rows, 2 * truss.bars[:, 0] + k] = -cs[:, k] / L
        B[rows, 2 * truss.bars[:, 1] + k] = cs[:, k] / L
    return B


def _stiffness(B, coeff, free):
    K = (B.T * coeff) @ B
    return K[np.ix_(free, free)]


def assemble(truss: TrussModel, C: float) -> Assembly:
    C = float(np.squeeze(C))
    if C <= 0:
        raise ValueError("scaling C must be positive")
    B = strain_rows(truss)
    w = truss.volumes()
    free = ~truss.fixed.ravel()
    K = _stiffness(B, w * C, free)
    if K.size:
        ev = np.linalg.eigvalsh(K)
        if ev[0] <= 1e-12 * ev[-1]:
            raise UnderConstrainedError("stiffness matrix is singular: mechanism or missing supports")
    try:
        factor = cho_factor(K)
    except LinAlgError as exc:
        raise UnderConstrainedError(str(exc)) from None
    return Assembly(B, w, C, free, K, factor, truss.loads.ravel().copy())


@dataclass
class DDState:
    assignments: np.ndarray
    u: np.ndarray | None = None
    eta: np.ndarray | None = None
    strains: np.ndarray | None = None
    stresses: np.ndarray | None = None


def project(assignments, asm: Assembly, db: MaterialDatabase) -> DDState:
    """Closest admissible state to the assigned data points."""
    eps_star = db.strains[assignments, 0]
    sig_star = db.stresses[assignments, 0]
    u = asm.solve(asm.B.T @ (asm.w * asm.C * eps_star))
    eta = asm.solve(asm.f - asm.B.T @ (asm.w * sig_star))
    return DDState(np.array(assignments), u, eta, asm.B @ u, sig_star + asm.C * (asm.B @ eta))


def bar_distances(state: DDState, asm: Assembly, db: MaterialDatabase, assignments=None) -> np.ndarray:
    a = state.assignments if assignments is None else assignments
    de = state.strains - db.strains[a, 0]
    ds = state.stresses - db.stresses[a, 0]
    return asm.C * de**2 + ds**2 / asm.C


def global_distance(state: DDState, asm: Assembly, db: MaterialDatabase, assignments=None) -> float:
    """1/2 sum_e w_e F_e with the exact metric."""
    return float(0.5 * asm.w @ bar_distances(state, asm, db, assignments))


class ClassicalBackend:
    """Exact squared distance on the scaled coordinates."""

    name = "classical"

    def for_query(self, coords, key):
        return lambda q, i: float(np.sum((coords[i] - q) ** 2))


class QuantumBackend:
    """Circuit-estimated squared distances under a noise model.

    ``folds=None`` evaluates the plain circuit once (unmitigated); otherwise
    the circuit is folded 0..folds times and extrapolated with ``model``.
    Each query draws from its own stream keyed on (seed, *key), so results
    do not depend on evaluation order. Pairs with a zero vector need no
    circuit: the cross term vanishes and the distance is |V|^2 + |V'|^2.
    """

    def __init__(self, noise, n_m: int, seed: int, folds: int | None = None,
                 model=zne.Model.RICHARDSON, algorithm=qdistance.Algorithm.H,
                 sampling="auto", cache_size: int = 200_000):
        self.noise = noise
        self.policy = SamplingPolicy(n_m, sampling)
        self.seed = int(seed)
        self.folds = folds
        self.model = zne.Model(model)
        self.algorithm = qdistance.Algorithm(algorithm)
        self._cache: dict = {}
        self._cache_size = cache_size

    @property
    def name(self) -> str:
        return "unmitigated" if self.folds is None else f"mitigated-{self.model.value}"

    def exact_series(self, V, Vp) -> np.ndarray:
        key = (V.tobytes(), Vp.tobytes())
        p = self._cache.get(key)
        if p is None:
            circ = qdistance.basis_circuit(self.algorithm, V, Vp)
            p = zne.exact_series(circ, self.folds or 0, self.noise)
            if len(self._cache) >= self._cache_size:
                self._cache.clear()
            self._cache[key] = p
        return p

    def distance(self, V, Vp, rng) -> float:
        V, Vp = np.asarray(V, float), np.asarray(Vp, float)
        if not (V.any() and Vp.any()):
            return float(V @ V + Vp @ Vp)
        p = self.exact_series(V, Vp)
        p_hat = sample_counts(p, self.policy, rng) / self.policy.n_m
        if self.folds is None:
            return float(qdistance.distance_from_p(self.algorithm, p_hat[0], V, Vp))
        series = zne.ProbabilitySeries(zne.fold_scales(self.folds), p_hat, self.policy.n_m)
        fit = zne.fit_extrapolation(series, self.model)
        return zne.to_estimate(self.algorithm, fit.p_zero, V, Vp, self.policy.n_m, 0.0).d_hat

    def for_query(self, coords, key):
        rng = stream(self.seed, *key)
        return lambda q, i: self.distance(q, coords[i], rng)


def dd_iterate(state: DDState, asm: Assembly, db: MaterialDatabase, tree: KdTree, backend,
               iteration: int = 0):
    """One projection plus per-bar nearest-neighbor search.

    Returns (new state, changed, backend calls per bar).
    """
    proj = project(state.assignments, asm, db)
    queries = scale_points(np.column_stack([proj.strains, proj.stresses]), db.c_sqrt, db.c_isqrt)
    new = np.empty_like(proj.assignments)
    calls = np.zeros(len(new), dtype=int)
    for e, q in enumerate(queries):
        fn = backend.for_query(tree.coords, (iteration, e))
        new[e], _, calls[e] = tree.nearest(q, fn)
    changed = bool(np.any(new != proj.assignments))
    proj.assignments = new
    return proj, changed, calls


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    distances: list[float]
    stresses: np.ndarray  # data stresses of the final assignments
    admissible_stresses: np.ndarray
    strains: np.ndarray
    assignments: np.ndarray
    mean_calls: float
    state: DDState


def solve(truss: TrussModel, db: MaterialDatabase, backend=None, rng=None,
          max_iter: int = MAX_ITER, tree: KdTree | None = None) -> SolveReport:
    """Iterate from random assignments until no bar changes its data point."""
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if db.k != 1:
        raise ValueError("truss bars need a one-dimensional strain-stress database")
    backend = backend or ClassicalBackend()
    rng = rng if rng is not None else np.random.default_rng()
    tree = tree or KdTree(db.scaled())
    asm = assemble(truss, db.scaling[0, 0])
    state = DDState(rng.integers(len(db), size=truss.n_bars))
    history, all_calls = [], []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        state, changed, calls = dd_iterate(state, asm, db, tree, backend, it)
        all_calls.extend(calls)
        history.append(global_distance(state, asm, db))
        if not changed:
            converged = True
            break
    if not converged:
        log.warning("data-driven solve stopped after %d iterations without a fixed point", it)
    # final projection so the admissible fields match the reported assignments
    final = project(state.assignments, asm, db)
    return SolveReport(
        converged, it, history, db.stresses[final.assignments, 0].copy(),
        final.stresses, final.strains, final.assignments, float(np.mean(all_calls)), final,
    )


def equilibrium_residual(asm: Assembly, stresses) -> float:
    """Free-dof norm of sum_e w_e B_e^T sigma_e - f."""
    r = asm.B.T @ (asm.w * np.asarray(stresses)) - asm.f
    return float(np.linalg.norm(r[asm.free]))


def reference_solution(truss: TrussModel, ro: RambergOsgoodParams, tol: float = 1e-10):
    """Nonlinear equilibrium with the Ramberg-Osgood law; returns (stresses, u).

    Newton on the free displacements with backtracking; each bar stress
    comes from inverting the monotone strain-stress relation.
    """
    B = strain_rows(truss)
    w = truss.volumes()
    free = ~truss.fixed.ravel()
    f = truss.loads.ravel()
    fnorm = np.linalg.norm(f[free])
    u = np.zeros(truss.n_dofs)
    if fnorm == 0:
        return np.zeros(truss.n_bars), u

    def state(u):
        sig = np.array([ro.stress(e) for e in B @ u])
        r = (B.T @ (w * sig) - f)[free]
        return sig, r

    sig, r = state(u)
    for _ in range(NEWTON_MAX_ITER):
        rnorm = np.linalg.norm(r)
        if rnorm < tol * fnorm:
            return sig, u
        Kt = _stiffness(B, w / ro.compliance(sig), free)
        du = np.zeros_like(u)
        du[free] = np.linalg.solve(Kt, -r)
        step = 1.0
        while step > 1e-8:
            sig_t, r_t = state(u + step * du)
            if np.linalg.norm(r_t) < rnorm:
                break
            step /= 2
        u, sig, r = u + step * du, sig_t, r_t
    raise ArithmeticError("Newton iteration for the reference solution did not converge")


def rms_stress_error(sigma, sigma_ref, w) -> float:
    """sqrt(sum w (sigma - ref)^2 / sum w ref^2); NaN when the reference is zero."""
    sigma, sigma_ref, w = (np.asarray(a, dtype=float) for a in (sigma, sigma_ref, w))
    den = float(w @ sigma_ref**2)
    if den == 0:
        return float("nan")
    return float(np.sqrt(w @ (sigma - sigma_ref) ** 2 / den))
