"""Lyapunov function and statistical checks of the drift and moment bounds.

The bounds concern expectations, which are only observable through Monte
Carlo averages over chains.  Each check therefore compares an estimate with
its bound in units of the estimate's standard error, with threshold ``z``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import binom, norm

from .models import GradientModel

__all__ = [
    "lyapunov_value",
    "lyapunov_lower_bounds",
    "MomentSeries",
    "track_moments",
    "DriftReport",
    "check_drift",
    "drift_budget",
    "BoundCheck",
    "MomentBoundReport",
    "check_moment_bounds",
    "FlatnessReport",
    "check_flatness",
    "write_series_csv",
    "read_series_csv",
    "SERIES_COLUMNS",
]


def lyapunov_value(theta, v, beta: float, gamma: float, lam: float,
                   U_of_theta: Callable | float | np.ndarray) -> np.ndarray | float:
    """V(theta, v) = beta U + (beta/4) gamma^2 (|theta + v/gamma|^2 + |v/gamma|^2 - lam |theta|^2).

    ``theta`` and ``v`` are single points or ``(n, d)`` batches.
    ``U_of_theta`` is the potential as a callable or its precomputed values.
    """
    if not 0 < lam <= 0.25:
        raise ValueError("lambda must lie in (0, 1/4]")
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    th = np.asarray(theta, dtype=float)
    vv = np.asarray(v, dtype=float)
    u = U_of_theta(th) if callable(U_of_theta) else np.asarray(U_of_theta, dtype=float)
    w = vv / gamma
    quad = np.sum((th + w) ** 2, axis=-1) + np.sum(w * w, axis=-1) - lam * np.sum(th * th, axis=-1)
    out = beta * u + beta / 4 * gamma**2 * quad
    return float(out) if np.ndim(out) == 0 else out


def lyapunov_lower_bounds(theta, v, beta: float, gamma: float, lam: float):
    """The two quadratic minorants of V (for U >= 0)."""
    th2 = np.sum(np.asarray(theta, dtype=float) ** 2, axis=-1)
    v2 = np.sum(np.asarray(v, dtype=float) ** 2, axis=-1)
    return (1 - 2 * lam) * beta * gamma**2 / 8 * th2, beta / 4 * (1 - 2 * lam) * v2


SERIES_COLUMNS = ("k", "m2", "m2_se", "th2", "th2_se", "v2", "v2_se", "vsq", "vsq_se")


@dataclass
class MomentSeries:
    """Cross-chain moments at the recorded iterations ``k``.

    ``m2`` is the mean of V/beta, ``vsq`` the mean of V^2.  Both are NaN when
    the model has no potential.  ``m2_chains`` optionally keeps the
    per-chain V/beta values, shape (len(k), n_chains), for paired errors.
    """

    k: np.ndarray
    m2: np.ndarray
    m2_se: np.ndarray
    th2: np.ndarray
    th2_se: np.ndarray
    v2: np.ndarray
    v2_se: np.ndarray
    vsq: np.ndarray
    vsq_se: np.ndarray
    n_chains: int
    m2_chains: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in SERIES_COLUMNS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.k.size
        for name in SERIES_COLUMNS[1:]:
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have length {n}")
        for name in ("m2", "th2", "v2", "vsq"):
            vals = getattr(self, name)
            if np.any(vals[np.isfinite(vals)] < 0):
                raise ValueError(f"{name} has negative entries")

    def __len__(self) -> int:
        return self.k.size

    @classmethod
    def from_m2(cls, k, m2, m2_se, n_chains: int = 2) -> "MomentSeries":
        """Series carrying only M2 (for synthetic drift checks)."""
        m2 = np.asarray(m2, dtype=float)
        nan = np.full(m2.shape, np.nan)
        return cls(np.asarray(k, dtype=float), m2, m2_se, nan, nan, nan, nan, nan, nan, n_chains)


def _mean_se(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # x has shape (R, C); mean over chains
    c = x.shape[1]
    mean = x.mean(axis=1)
    se = x.std(axis=1, ddof=1) / math.sqrt(c) if c > 1 else np.zeros_like(mean)
    return mean, se


def track_moments(result, beta: float, gamma: float, lam: float, model: GradientModel,
                  keep_chains: bool = True) -> MomentSeries:
    """MomentSeries from an ensemble run that recorded its states.

    Chains that diverged are left out entirely.  V needs gamma > 0 and a
    potential; otherwise only the |theta|^2 and |v|^2 columns are filled.
    """
    states = result.states
    if states is None:
        raise ValueError("ensemble was run without record_states")
    d = model.d
    failed = set(result.failed)
    keep = np.array([cid not in failed for cid in result.chain_ids])
    states = states[:, keep, :]
    R, C, _ = states.shape
    if C == 0:
        raise ValueError("no surviving chains")
    theta = states[..., :d]
    v = states[..., d:]
    th2 = np.sum(theta * theta, axis=-1)
    v2 = np.sum(v * v, axis=-1)
    th2_m, th2_se = _mean_se(th2)
    v2_m, v2_se = _mean_se(v2)
    if model.potential is None or gamma <= 0:
        if model.potential is None:
            warnings.warn(f"model {model.name!r} has no potential; V-based moments are NaN", stacklevel=2)
        nan = np.full(R, np.nan)
        return MomentSeries(result.iterations, nan, nan, th2_m, th2_se, v2_m, v2_se, nan, nan, C)
    u = model.U(theta.reshape(R * C, d)).reshape(R, C)
    V = lyapunov_value(theta, v, beta, gamma, lam, u)
    m2_m, m2_se = _mean_se(V / beta)
    vsq_m, vsq_se = _mean_se(V * V)
    return MomentSeries(result.iterations, m2_m, m2_se, th2_m, th2_se, v2_m, v2_se, vsq_m, vsq_se, C,
                        V / beta if keep_chains else None)


# ---------------------------------------------------------------------------
# drift


@dataclass
class DriftReport:
    k: np.ndarray  # iteration of the left end of each residual
    residual: np.ndarray
    se: np.ndarray
    z: float
    violations: np.ndarray  # indices into ``residual``
    budget: int

    @property
    def n_violations(self) -> int:
        return int(self.violations.size)

    @property
    def passed(self) -> bool:
        return self.n_violations <= self.budget

    @property
    def worst(self) -> float:
        """Largest residual in standard-error units."""
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(self.se > 0, self.residual / self.se, np.sign(self.residual) * np.inf)
        t = np.where(self.residual == 0, 0.0, t)
        return float(np.max(t)) if t.size else -math.inf


def drift_budget(n_tests: int, z: float, alpha: float = 0.01) -> int:
    """Violations allowed among ``n_tests`` one-sided z-tests under the null.

    The (1 - alpha) quantile of Binomial(n_tests, P(N(0,1) > z)).
    """
    p = norm.sf(z)
    return int(binom.ppf(1 - alpha, n_tests, p))


def check_drift(series: MomentSeries, gamma: float, lam: float, eta: float, K3: float,
                z: float = 4.0, alpha: float = 0.01) -> DriftReport:
    """Test M2(k+t) <= phi^t M2(k) + 2 K3 eta (1 - phi^t)/(1 - phi), phi = 1 - gamma lam eta / 2.

    With t = 1 this is the one-step drift inequality; larger strides come
    from iterating it.  Errors are paired per chain when ``m2_chains`` is
    available, otherwise propagated as if the two ends were independent.
    """
    if len(series) < 2:
        raise ValueError("drift check needs at least two recorded iterations")
    if series.n_chains < 30:
        warnings.warn("drift check on fewer than 30 chains; normal approximation is doubtful", stacklevel=2)
    k = series.k
    t = np.diff(k)
    if np.any(t <= 0):
        raise ValueError("iterations must be increasing")
    c = gamma * lam * eta / 2
    if not 0 <= c < 1:
        raise ValueError("need 0 <= gamma lam eta / 2 < 1")
    # phi^t and (1 - phi^t)/(1 - phi) without cancellation for tiny eta
    log_phit = t * math.log1p(-c)
    phit = np.exp(log_phit)
    geo = -np.expm1(log_phit) / c if c > 0 else t.astype(float)
    m2 = series.m2
    resid = m2[1:] - phit * m2[:-1] - 2 * K3 * eta * geo
    if series.m2_chains is not None and series.m2_chains.shape[1] > 1:
        per = series.m2_chains[1:] - phit[:, None] * series.m2_chains[:-1]
        se = per.std(axis=1, ddof=1) / math.sqrt(per.shape[1])
    else:
        se = np.sqrt(series.m2_se[1:] ** 2 + (phit * series.m2_se[:-1]) ** 2)
    # round-off slack so an exactly saturated recursion is not flagged
    slack = 1e-12 * (np.abs(m2[1:]) + np.abs(phit * m2[:-1]) + abs(2 * K3 * eta) * geo)
    bad = np.flatnonzero(resid > z * se + slack)
    return DriftReport(k[:-1], resid, se, z, bad, drift_budget(resid.size, z, alpha))


# ---------------------------------------------------------------------------
# moment bounds


@dataclass(frozen=True)
class BoundCheck:
    name: str
    series: str
    bound: float
    worst_margin: float  # max over k of (estimate - bound)/se
    worst_k: float
    passed: bool


@dataclass
class MomentBoundReport:
    checks: list[BoundCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]


def _margin(est: np.ndarray, se: np.ndarray, bound: float) -> np.ndarray:
    diff = est - bound
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(se > 0, diff / se, np.sign(diff) * np.inf)
    return np.where(diff == 0, 0.0, m)


def check_moment_bounds(series: MomentSeries, C_theta: float, C_v: float, C_zeta: float | None = None,
                        Vsq_bound: float | None = None, z: float = 4.0) -> MomentBoundReport:
    """Compare sup_k of the tracked moments with their uniform bounds.

    C_theta and C_zeta bound mean |theta|^2, C_v bounds mean |v|^2 and
    Vsq_bound bounds mean V^2 (skipped with a warning when V is unknown).
    """
    plan = [("C_theta", "th2", C_theta), ("C_v", "v2", C_v)]
    if C_zeta is not None:
        plan.append(("C_zeta", "th2", C_zeta))
    if Vsq_bound is not None:
        if np.all(np.isnan(series.vsq)):
            warnings.warn("series has no V^2 estimates; skipping the V^2 bound", stacklevel=2)
        else:
            plan.append(("Vsq_bound", "vsq", Vsq_bound))
    checks = []
    for name, col, bound in plan:
        m = _margin(getattr(series, col), getattr(series, col + "_se"), bound)
        i = int(np.argmax(m))
        checks.append(BoundCheck(name, col, float(bound), float(m[i]), float(series.k[i]), bool(m[i] <= z)))
    return MomentBoundReport(checks)


# ---------------------------------------------------------------------------
# flatness


@dataclass(frozen=True)
class FlatnessReport:
    early: float  # mean over the second quarter of the recorded iterations
    late: float  # mean over the last quarter
    se: float
    z: float

    @property
    def passed(self) -> bool:
        return abs(self.late - self.early) <= self.z * self.se


def check_flatness(mean: np.ndarray, se: np.ndarray, z: float = 3.0) -> FlatnessReport:
    """Compare the last-quarter average of a moment series with the
    second-quarter average.

    Successive entries of a chain average are positively correlated, so the
    standard error of a window average is taken as the mean of the
    pointwise errors (the fully correlated case), which never understates it.
    """
    mean = np.asarray(mean, dtype=float)
    se = np.asarray(se, dtype=float)
    n = mean.size
    if n < 4:
        raise ValueError("flatness check needs at least four points")
    q = n // 4
    early, late = slice(q, 2 * q), slice(n - q, n)
    s = math.hypot(se[early].mean(), se[late].mean())
    return FlatnessReport(float(mean[early].mean()), float(mean[late].mean()), s, z)


# ---------------------------------------------------------------------------
# csv


def write_series_csv(series: MomentSeries, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SERIES_COLUMNS)
        cols = [getattr(series, c) for c in SERIES_COLUMNS]
        for row in zip(*cols):
            w.writerow([int(row[0])] + [repr(float(x)) for x in row[1:]])


def read_series_csv(path, n_chains: int = 0) -> MomentSeries:
    data = np.genfromtxt(Path(path), delimiter=",", names=True, ndmin=1)
    return MomentSeries(*(data[c] for c in SERIES_COLUMNS), n_chains=n_chains)
