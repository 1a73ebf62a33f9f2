from __future__ import annotations

import logging
from typing import Union

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from marom.schemas.configs import LhsConfig
from marom.services.fields import DesignMatrix

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.SeedSequence]


def maximin_score(points: np.ndarray) -> float:
    """Minimum pairwise Euclidean distance between rows (inf for a single row)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[0] < 2:
        return float("inf")
    return float(pdist(pts).min())


def lhs_unit(n: int, b: int, seed: SeedLike, optimize_iters: int = 1000) -> np.ndarray:
    """
    Midpoint Latin hypercube in [0, 1]^b (n rows × b columns), improved by
    random within-column swaps that strictly raise the maximin score.

    The permutations are drawn before any swap, so `optimize_iters=0` gives
    the starting design of the same seed.
    """
    rng = np.random.default_rng(seed)
    unit = np.empty((n, b), dtype=np.float64)
    for j in range(b):
        unit[:, j] = (rng.permutation(n) + 0.5) / n
    if n < 3 or optimize_iters == 0:
        return unit

    dist = squareform(pdist(unit))
    np.fill_diagonal(dist, np.inf)
    best = float(dist.min())
    accepted = 0
    for _ in range(optimize_iters):
        col = int(rng.integers(b))
        i, j = (int(v) for v in rng.choice(n, size=2, replace=False))
        unit[[i, j], col] = unit[[j, i], col]
        rows = cdist(unit[[i, j]], unit)
        rows[0, i] = rows[1, j] = np.inf
        trial = dist.copy()
        trial[[i, j], :] = rows
        trial[:, [i, j]] = rows.T
        score = float(trial.min())
        if score > best:
            dist, best = trial, score
            accepted += 1
        else:
            unit[[i, j], col] = unit[[j, i], col]
    logger.debug("lhs_optimized", extra={"n": n, "b": b, "iters": optimize_iters, "accepted": accepted, "score": best})
    return unit


def lhs_maximin(config: LhsConfig) -> DesignMatrix:
    bounds = np.asarray(config.bounds, dtype=np.float64)
    b = bounds.shape[0]
    unit = lhs_unit(config.n, b, config.seed, config.optimize_iters)
    values = bounds[:, :1] + unit.T * (bounds[:, 1:] - bounds[:, :1])
    names = tuple(config.names) if config.names else tuple(f"p{i + 1}" for i in range(b))
    return DesignMatrix(values, names, bounds)
