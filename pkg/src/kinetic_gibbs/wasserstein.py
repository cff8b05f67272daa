"""Wasserstein-2 distances: closed form between Gaussians, exact discrete
optimal transport between equal-size empirical clouds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

__all__ = [
    "GaussianMoments",
    "w2_gaussian",
    "w2_assignment",
    "fit_gaussian",
    "as_cloud",
    "write_cloud_csv",
    "read_cloud_csv",
]

_SYM_TOL = 1e-12


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        k = mean.size
        if mean.ndim != 1 or cov.shape != (k, k):
            raise ValueError(f"mean of size {k} needs a {k}x{k} covariance, got {cov.shape}")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if np.max(np.abs(cov - cov.T)) > _SYM_TOL * scale:
            raise ValueError("covariance is not symmetric")
        if np.linalg.eigvalsh(cov).min() < -_SYM_TOL * scale:
            raise ValueError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def standard(cls, k: int, var: float = 1.0) -> "GaussianMoments":
        return cls(np.zeros(k), var * np.eye(k))


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    w, q = np.linalg.eigh(0.5 * (a + a.T))
    w = np.clip(w, 0.0, None)
    return (q * np.sqrt(w)) @ q.T


def w2_gaussian(g1: GaussianMoments, g2: GaussianMoments) -> float:
    """W2 between N(m1, S1) and N(m2, S2).

    W2^2 = |m1 - m2|^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)
    """
    if g1.dim != g2.dim:
        raise ValueError(f"dimension mismatch: {g1.dim} vs {g2.dim}")
    r1 = _psd_sqrt(g1.cov)
    cross = _psd_sqrt(r1 @ g2.cov @ r1)
    bures = np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * np.trace(cross)
    sq = float(np.sum((g1.mean - g2.mean) ** 2) + max(bures, 0.0))
    return float(np.sqrt(max(sq, 0.0)))


def as_cloud(points) -> np.ndarray:
    """Validate an empirical cloud; 1-d input is read as n points in R^1."""
    c = np.asarray(points, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    if c.ndim != 2 or c.shape[0] < 1:
        raise ValueError("a cloud is a non-empty (n, k) array")
    if not np.all(np.isfinite(c)):
        raise ValueError("cloud has non-finite entries")
    return c


def w2_assignment(c1, c2) -> tuple[float, np.ndarray]:
    """Exact W2 between uniform empirical measures of equal size.

    Returns the distance and the optimal permutation ``perm`` (point i of
    ``c1`` is matched to point ``perm[i]`` of ``c2``).
    """
    x, y = as_cloud(c1), as_cloud(c2)
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"clouds must have equal size, got {x.shape[0]} and {y.shape[0]}")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    cost = cdist(x, y, "sqeuclidean")
    rows, perm = linear_sum_assignment(cost)
    # correctly rounded sum: independent of order, so W2(x, y) == W2(y, x) exactly
    value = math.fsum(cost[rows, perm]) / x.shape[0]
    return float(np.sqrt(max(value, 0.0))), perm


def fit_gaussian(points) -> GaussianMoments:
    """Sample mean and population covariance (divisor n)."""
    c = as_cloud(points)
    mean = c.mean(axis=0)
    centred = c - mean
    cov = centred.T @ centred / c.shape[0]
    return GaussianMoments(mean, 0.5 * (cov + cov.T))


def write_cloud_csv(points, path, header: list[str] | None = None) -> None:
    c = as_cloud(points)
    if header is None:
        header = [f"x_{i + 1}" for i in range(c.shape[1])]
    np.savetxt(Path(path), c, delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def read_cloud_csv(path) -> np.ndarray:
    return as_cloud(np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2))
