"""Strain-stress databases, metric scaling and k-d tree nearest-neighbor search."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class RambergOsgoodParams:
    E: float = 1e4
    alpha: float = 0.5
    sigma0: float = 5.0
    beta: float = 3.0

    def __post_init__(self):
        if self.E <= 0 or self.sigma0 <= 0 or self.beta < 1:
            raise ValueError("need E > 0, sigma0 > 0 and beta >= 1")

    def strain(self, sigma):
        s = np.asarray(sigma, dtype=float)
        return s / self.E + self.alpha * (s / self.E) * (np.abs(s) / self.sigma0) ** (self.beta - 1)

    def compliance(self, sigma):
        """d strain / d stress."""
        s = np.asarray(sigma, dtype=float)
        return (1 + self.alpha * self.beta * (np.abs(s) / self.sigma0) ** (self.beta - 1)) / self.E

    def stress(self, eps, tol: float = 1e-12, max_iter: int = 100) -> float:
        """Invert strain(sigma) = eps by Newton safeguarded with bisection."""
        eps = float(eps)
        if eps == 0:
            return 0.0
        lo, hi = sorted((0.0, eps * self.E))  # |sigma| <= E |eps|
        s = 0.5 * (lo + hi)
        for _ in range(max_iter):
            f = float(self.strain(s)) - eps
            if f == 0:
                return s
            if f > 0:
                hi = s
            else:
                lo = s
            step = s - f / float(self.compliance(s))
            s_new = step if lo < step < hi else 0.5 * (lo + hi)
            if abs(s_new - s) <= tol * abs(s_new) or hi - lo <= 4 * np.spacing(hi):
                return s_new
            s = s_new
        raise ArithmeticError("Ramberg-Osgood inversion did not converge")


def _spd_sqrt(C):
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[0] != C.shape[1] or not np.allclose(C, C.T, atol=1e-12 * np.abs(C).max()):
        raise ValueError("scaling metric must be a symmetric matrix")
    w, v = np.linalg.eigh(C)
    if w.min() <= 0:
        raise ValueError("scaling metric must be positive definite")
    return (v * np.sqrt(w)) @ v.T, (v / np.sqrt(w)) @ v.T


@dataclass
class MaterialDatabase:
    """Rows of ``points`` are (strain components..., stress components...)."""

    points: np.ndarray
    scaling: np.ndarray

    def __post_init__(self):
        self.scaling = np.atleast_2d(np.asarray(self.scaling, dtype=float))
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        k = self.scaling.shape[0]
        if self.points.shape[1] != 2 * k:
            raise ValueError(f"points need {2 * k} columns for a {k}x{k} metric")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("database entries must be finite")
        self.c_sqrt, self.c_isqrt = _spd_sqrt(self.scaling)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def k(self) -> int:
        return self.scaling.shape[0]

    @property
    def strains(self) -> np.ndarray:
        return self.points[:, : self.k]

    @property
    def stresses(self) -> np.ndarray:
        return self.points[:, self.k :]

    def scaled(self) -> np.ndarray:
        return scale_points(self.points, self.c_sqrt, self.c_isqrt)

    def scale(self, z) -> np.ndarray:
        return scale_points(np.atleast_2d(z), self.c_sqrt, self.c_isqrt)[0]

    def unscale(self, v) -> np.ndarray:
        v = np.atleast_2d(np.asarray(v, dtype=float))
        k = self.k
        # inverse of (C^1/2 eps, C^-1/2 sigma)
        return np.hstack([v[:, :k] @ self.c_isqrt.T, v[:, k:] @ self.c_sqrt.T]).squeeze()

    def save(self, path) -> None:
        k = self.k
        header = f"# strain_dims={k} stress_dims={k}\n"
        cols = [f"eps{i}" for i in range(k)] + [f"sigma{i}" for i in range(k)]
        body = "\n".join(",".join(repr(float(x)) for x in row) for row in self.points)
        Path(path).write_text(header + ",".join(cols) + "\n" + body + "\n")

    @classmethod
    def load(cls, path, scaling) -> MaterialDatabase:
        """Read the CSV written by :meth:`save`; column counts are validated."""
        lines = Path(path).read_text().splitlines()
        if not lines or not lines[0].startswith("#"):
            raise ValueError("database file must start with a '# strain_dims=.. stress_dims=..' row")
        dims = dict(tok.split("=") for tok in lines[0][1:].split())
        ks, kt = int(dims["strain_dims"]), int(dims["stress_dims"])
        rows = []
        for lineno, line in enumerate(lines[2:], 3):
            if not line.strip():
                continue
            vals = line.split(",")
            if len(vals) != ks + kt:
                raise ValueError(f"line {lineno}: expected {ks + kt} columns, got {len(vals)}")
            rows.append([float(x) for x in vals])
        return cls(np.array(rows), scaling)


def scale_points(z, c_sqrt, c_isqrt) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=float))
    k = c_sqrt.shape[0]
    return np.hstack([z[:, :k] @ c_sqrt.T, z[:, k:] @ c_isqrt.T])


def scale_point(z, C) -> np.ndarray:
    """V = (C^1/2 eps, C^-1/2 sigma) so that |V - V'|^2 is the data-driven distance."""
    s, si = _spd_sqrt(C)
    return scale_points(z, s, si)[0]


def dd_distance(z, zp, C) -> float:
    """(eps - eps')^T C (eps - eps') + (sigma - sigma')^T C^-1 (sigma - sigma')."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    k = C.shape[0]
    dz = np.asarray(z, float) - np.asarray(zp, float)
    de, ds = dz[:k], dz[k:]
    return float(de @ C @ de + ds @ np.linalg.solve(C, ds))


def tangent_scaling(params: RambergOsgoodParams, sigma_max: float) -> float:
    """Smallest tangent modulus over |sigma| <= sigma_max.

    Used as the truss metric: with C above the local tangent modulus a
    fixed point of the data-driven iteration can sit several database
    spacings away from the closest point on the material curve.
    """
    return float(1.0 / params.compliance(abs(sigma_max)))


def generate_db(params: RambergOsgoodParams, sigma_min: float, sigma_max: float, N: int,
                scaling=None) -> MaterialDatabase:
    """N uniformly spaced stresses on [sigma_min, sigma_max] with their R-O strains."""
    if N < 2 or not sigma_min < sigma_max:
        raise ValueError("need N >= 2 and sigma_min < sigma_max")
    sigma = np.linspace(sigma_min, sigma_max, N)
    scaling = params.E if scaling is None else scaling
    return MaterialDatabase(np.column_stack([params.strain(sigma), sigma]), scaling)


# --- k-d tree -------------------------------------------------------------

DistanceBackend = Callable[[np.ndarray, int], float]


class BackendError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"distance backend failed on database point {index}: {cause}")
        self.index = index


@dataclass
class _Node:
    dim: int = -1
    threshold: float = 0.0
    left: _Node | None = None
    right: _Node | None = None
    indices: np.ndarray | None = None

    @property
    def is_leaf(self) -> bool:
        return self.indices is not None


class KdTree:
    """k-d tree over scaled database coordinates.

    Splits on the widest-spread dimension at the median; leaves hold at most
    ``leaf_size`` points. Only leaf points are ever passed to the distance
    backend; pruning uses exact plane distances on the stored coordinates.
    """

    def __init__(self, coords, leaf_size: int = 8):
        self.coords = np.atleast_2d(np.asarray(coords, dtype=float))
        if self.coords.shape[0] == 0:
            raise ValueError("cannot build a k-d tree over an empty database")
        self.leaf_size = max(1, int(leaf_size))
        self.root = self._build(np.arange(self.coords.shape[0]))

    def _build(self, idx: np.ndarray) -> _Node:
        pts = self.coords[idx]
        spread = np.ptp(pts, axis=0) if idx.size else np.zeros(self.coords.shape[1])
        if idx.size <= self.leaf_size or spread.max() == 0:
            return _Node(indices=idx)
        dim = int(np.argmax(spread))
        order = idx[np.argsort(pts[:, dim], kind="stable")]
        mid = order.size // 2
        threshold = float(self.coords[order[mid], dim])
        # points equal to the threshold go right; the left part stays non-empty
        left = order[self.coords[order, dim] < threshold]
        right = order[self.coords[order, dim] >= threshold]
        if left.size == 0:
            return _Node(indices=idx)
        return _Node(dim, threshold, self._build(np.sort(left)), self._build(np.sort(right)))

    def leaves(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                yield node.indices
            else:
                stack += [node.right, node.left]

    def nearest(self, query, backend: DistanceBackend | None = None):
        """(index, distance, backend calls) of the point with least backend distance.

        ``backend(query, index)`` returns the distance between the query and
        database point ``index``; the default is the exact squared distance.
        Ties go to the lowest index.
        """
        q = np.asarray(query, dtype=float)
        if backend is None:
            backend = lambda qq, i: float(np.sum((self.coords[i] - qq) ** 2))  # noqa: E731
        best = [np.inf, -1]
        calls = 0

        def visit(node: _Node):
            nonlocal calls
            if node.is_leaf:
                for i in node.indices:
                    try:
                        d = float(backend(q, int(i)))
                    except Exception as exc:  # noqa: BLE001
                        raise BackendError(int(i), exc) from exc
                    calls += 1
                    if d < best[0] or (d == best[0] and i < best[1]):
                        best[0], best[1] = d, int(i)
                return
            diff = q[node.dim] - node.threshold
            near, far = (node.left, node.right) if diff < 0 else (node.right, node.left)
            visit(near)
            if diff * diff <= max(best[0], 0.0):
                visit(far)

        visit(self.root)
        return best[1], best[0], calls


def nearest(tree: KdTree, query, backend: DistanceBackend | None = None):
    return tree.nearest(query, backend)


def brute_force_nearest(coords, query, backend: DistanceBackend | None = None):
    coords = np.atleast_2d(coords)
    q = np.asarray(query, dtype=float)
    if backend is None:
        d = np.sum((coords - q) ** 2, axis=1)
    else:
        d = np.array([backend(q, i) for i in range(coords.shape[0])])
    i = int(np.argmin(d))  # argmin returns the first (lowest-index) minimum
    return i, float(d[i]), coords.shape[0]
