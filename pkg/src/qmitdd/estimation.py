"""Measurement sampling: turn an exact probability into p_hat = n0 / n_m."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

NORMAL_THRESHOLD = 5


class SamplingMode(str, Enum):
    EXACT = "binomial"
    NORMAL = "normal"
    AUTO = "auto"


@dataclass(frozen=True)
class SamplingPolicy:
    n_m: int
    mode: SamplingMode = SamplingMode.AUTO

    def __post_init__(self):
        if int(self.n_m) < 1:
            raise ValueError("n_m must be at least 1")
        object.__setattr__(self, "n_m", int(self.n_m))
        object.__setattr__(self, "mode", SamplingMode(self.mode))


def stream(seed: int, *task: int) -> np.random.Generator:
    """Counter-based generator keyed on (seed, task...), independent of call order."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(t) for t in task))
    return np.random.Generator(np.random.Philox(ss))


def use_normal(p, n_m: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return (n_m * p > NORMAL_THRESHOLD) & (n_m * (1 - p) > NORMAL_THRESHOLD)


def sample_counts(p, policy: SamplingPolicy, rng: np.random.Generator) -> np.ndarray:
    """Draw n0 for every probability in ``p`` (array in, int64 array out)."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    n = policy.n_m
    if policy.mode is SamplingMode.EXACT:
        return rng.binomial(n, p)
    normal = use_normal(p, n) if policy.mode is SamplingMode.AUTO else np.ones(p.shape, bool)
    draw = rng.normal(n * p, np.sqrt(n * p * (1 - p)))
    counts = np.clip(np.rint(draw), 0, n).astype(np.int64)
    if not normal.all():
        exact = rng.binomial(n, p)
        counts = np.where(normal, counts, exact)
    return counts


def sample_p_hat(p: float, policy: SamplingPolicy, rng: np.random.Generator) -> float:
    """One estimate p_hat = n0 / n_m."""
    return float(sample_counts(np.float64(p), policy, rng)) / policy.n_m
