"""Zero-noise extrapolation over folded circuit evaluations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import qdistance
from .estimation import SamplingPolicy, sample_counts, stream
from .qsim import run_circuit

log = logging.getLogger(__name__)

GN_TOL = 1e-10
GN_MAX_ITER = 200


class Model(str, Enum):
    LINEAR = "linear"
    QUADRATIC = "quadratic"
    EXPONENTIAL = "exponential"
    RICHARDSON = "richardson"


class DegenerateFitError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ProbabilitySeries:
    lambdas: np.ndarray
    p_hats: np.ndarray
    n_m: int | None = None

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        p = np.asarray(self.p_hats, dtype=float)
        if lam.shape != p.shape or lam.ndim != 1 or lam.size == 0:
            raise ValueError("lambdas and p_hats must be equal-length 1-D arrays")
        if np.any(np.diff(lam) <= 0):
            raise ValueError("lambdas must be strictly increasing")
        if np.any((p < 0) | (p > 1)):
            raise ValueError("p_hats must lie in [0, 1]")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "p_hats", p)


@dataclass
class ExtrapolationFit:
    model: Model
    coefficients: np.ndarray
    p_zero: float
    fallback: bool = False
    iterations: int = 0
    notes: list[str] = field(default_factory=list)

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        c = self.coefficients
        if self.model is Model.EXPONENTIAL and not self.fallback:
            return c[0] + c[1] * np.exp(-c[2] * lam)
        return np.polynomial.polynomial.polyval(lam, c)


def fold_scales(n: int) -> np.ndarray:
    return 1 + 2 * np.arange(n + 1)


def exact_series(circuit, n: int, noise) -> np.ndarray:
    """Exact P[first qubit = 0] for 0..n folds of every gate."""
    return np.array([run_circuit(circuit, noise, folds=i)[1] for i in range(n + 1)])


def collect_series(circuit, n: int, n_m: int, noise, rng, mode="auto") -> ProbabilitySeries:
    """Fold 0..n times, simulate under ``noise`` and sample each point."""
    if n < 0:
        raise ValueError("maximum folding number must be non-negative")
    p = exact_series(circuit, n, noise)
    policy = SamplingPolicy(n_m, mode)
    counts = sample_counts(p, policy, rng)
    return ProbabilitySeries(fold_scales(n), counts / policy.n_m, policy.n_m)


def _polyfit(lam, p, degree):
    degree = min(degree, lam.size - 1)
    vander = np.vander(lam, degree + 1, increasing=True)
    if np.linalg.matrix_rank(vander) < degree + 1:
        raise DegenerateFitError("singular normal equations")
    coef, *_ = np.linalg.lstsq(vander, p, rcond=None)
    return coef


def _exp_init(lam, p):
    diffs = np.diff(p)
    ratios = diffs[1:] / diffs[:-1]
    steps = np.diff(lam)[:-1]
    ok = np.isfinite(ratios) & (ratios > 0) & (ratios < 1)
    if ok.any():
        rate = float(np.mean(-np.log(ratios[ok]) / steps[ok]))
    else:
        rate = 1.0 / lam[-1]
    basis = np.column_stack([np.ones_like(lam), np.exp(-rate * lam)])
    (c0, c1), *_ = np.linalg.lstsq(basis, p, rcond=None)
    return np.array([c0, c1, rate])


def _fit_exponential(lam, p):
    """Damped Gauss-Newton (Levenberg-Marquardt) for c0 + c1 exp(-c2 lam).

    Returns (coefficients, iterations, converged). Converged means the
    residual gradient fell below GN_TOL, or no damped step could lower the
    cost any further, within GN_MAX_ITER iterations.
    """
    c = _exp_init(lam, p)
    mu = 1e-3

    def resid(c):
        with np.errstate(over="ignore", invalid="ignore"):
            return c[0] + c[1] * np.exp(-c[2] * lam) - p

    r = resid(c)
    cost = r @ r
    for it in range(GN_MAX_ITER):
        e = np.exp(-c[2] * lam)
        J = np.column_stack([np.ones_like(lam), e, -c[1] * lam * e])
        g = J.T @ r
        if np.linalg.norm(g) < GN_TOL:
            return c, it, True
        A = J.T @ J
        for _ in range(30):
            try:
                step = np.linalg.solve(A + mu * np.diag(np.diag(A) + 1e-30), -g)
            except np.linalg.LinAlgError:
                mu *= 10
                continue
            trial = c + step
            rt = resid(trial)
            with np.errstate(over="ignore", invalid="ignore"):
                ct = rt @ rt
            if np.isfinite(ct) and ct <= cost:
                c, r, cost = trial, rt, ct
                mu = max(mu / 3, 1e-12)
                break
            mu *= 10
        else:
            # no damped step lowers the cost: a minimum up to round-off
            return c, it, bool(np.all(np.isfinite(c)))
    return c, GN_MAX_ITER, False


def fit_extrapolation(series: ProbabilitySeries, model) -> ExtrapolationFit:
    """Least-squares fit of ``model`` to the series and its value at lambda = 0.

    Polynomial models use degree min(model degree, points - 1); Richardson
    always interpolates all points. The exponential model needs three points
    and falls back to a linear fit (flagged) with fewer points or when it
    does not converge.
    """
    model = Model(model)
    lam, p = series.lambdas, series.p_hats
    if model is not Model.EXPONENTIAL:
        degree = {Model.LINEAR: 1, Model.QUADRATIC: 2, Model.RICHARDSON: lam.size - 1}[model]
        coef = _polyfit(lam, p, degree)
        return ExtrapolationFit(model, coef, float(coef[0]))
    if lam.size < 3 or np.ptp(p) == 0:
        coef = _polyfit(lam, p, 1)
        note = "constant series" if np.ptp(p) == 0 else "too few points for exponential"
        return ExtrapolationFit(model, coef, float(coef[0]), fallback=lam.size < 3, notes=[note])
    c, iters, ok = _fit_exponential(lam, p)
    p0 = c[0] + c[1]
    if not ok or not np.isfinite(p0):
        log.debug("exponential fit did not converge; falling back to linear")
        coef = _polyfit(lam, p, 1)
        return ExtrapolationFit(model, coef, float(coef[0]), fallback=True, iterations=iters,
                                notes=["exponential diverged"])
    return ExtrapolationFit(model, c, float(p0), iterations=iters)


def mitigated_distance(
    V,
    Vp,
    algorithm,
    model,
    n: int,
    n_m: int,
    noise,
    rng,
    *,
    circuit=None,
) -> qdistance.DistanceEstimate:
    """Fold, sample, extrapolate to lambda = 0 and convert to a distance."""
    circuit = circuit if circuit is not None else qdistance.basis_circuit(algorithm, V, Vp)
    series = collect_series(circuit, n, n_m, noise, rng)
    fit = fit_extrapolation(series, model)
    return to_estimate(algorithm, fit.p_zero, V, Vp, n_m, 0.0)


def to_estimate(algorithm, p, V, Vp, n_m, lam) -> qdistance.DistanceEstimate:
    """Clamp p to the algorithm's valid range and a negative distance to zero (flagged)."""
    lo, hi = qdistance.probability_range(algorithm)
    clamped = not lo <= p <= hi
    p = min(max(p, lo), hi)
    d = qdistance.distance_from_p(algorithm, p, V, Vp)
    if d < 0:
        d, clamped = 0.0, True
    return qdistance.DistanceEstimate(float(d), float(p), int(n_m), qdistance.Algorithm(algorithm), lam, clamped)


def unmitigated_distance(V, Vp, algorithm, n_m: int, noise, rng, *, circuit=None):
    """Single lambda = 1 evaluation, no extrapolation."""
    circuit = circuit if circuit is not None else qdistance.basis_circuit(algorithm, V, Vp)
    p = run_circuit(circuit, noise)[1]
    p_hat = float(sample_counts(p, SamplingPolicy(n_m), rng)) / n_m
    d = qdistance.distance_from_p(algorithm, p_hat, V, Vp)
    return qdistance.DistanceEstimate(float(d), p_hat, int(n_m), qdistance.Algorithm(algorithm), 1.0)


def extrapolate_series(p_exact: np.ndarray, n_m: int, model, seed: int, task: int, mode="auto"):
    """Sample a precomputed exact series with a task-keyed stream and fit it."""
    policy = SamplingPolicy(n_m, mode)
    counts = sample_counts(p_exact, policy, stream(seed, task))
    series = ProbabilitySeries(fold_scales(len(p_exact) - 1), counts / policy.n_m, policy.n_m)
    return fit_extrapolation(series, model)
