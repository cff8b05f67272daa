"""Potentials with stochastic gradient oracles, and empirical probes of their
declared regularity constants.

Every model evaluates in batch: ``theta`` has shape ``(n, d)`` and a data
batch has leading axis ``n``, so one call serves a whole ensemble of chains.
Single points of shape ``(d,)`` are accepted everywhere and returned with the
same rank.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Literal

import numpy as np
from scipy import special

__all__ = [
    "Declared",
    "GradientModel",
    "BLRDataset",
    "UnsupportedCheckError",
    "quadratic_model",
    "gaussian_location_model",
    "mixture_prior_model",
    "blr_model",
    "blr_synthetic_data",
    "read_blr_csv",
    "write_blr_csv",
    "check_unbiasedness",
    "probe_dissipativity",
    "probe_lipschitz",
    "UnbiasednessReport",
    "DissipativityReport",
    "LipschitzReport",
]


class UnsupportedCheckError(ValueError):
    """The requested check needs something the model does not expose."""


@dataclass(frozen=True)
class Declared:
    """Regularity constants a model claims to satisfy.

    ``L1``/``L2``/``rho`` are the local Lipschitz constants in theta and in
    the data, ``a``/``b`` the dissipativity pair, ``H0 = |H(0, 0)|``,
    ``h0 = |h(0)|``, ``u0 = U(0)``, ``L1_bar = L1 * E(1+|X|)^rho``,
    ``C_rho = E(1+|X|)^(4(rho+1))`` and ``sigma_Z`` the centred data moment
    entering the gradient-noise bound.
    """

    L1: float
    L2: float
    rho: float
    a: float
    b: float
    H0: float
    h0: float
    u0: float
    L1_bar: float
    C_rho: float = 1.0
    sigma_Z: float = 0.0


@dataclass(frozen=True)
class GradientModel:
    name: str
    d: int
    data_dim: int
    stochastic_gradient: Callable[[np.ndarray, Any], np.ndarray]
    sample_data: Callable[[np.random.Generator, int], np.ndarray]
    declared: Declared
    full_gradient: Callable[[np.ndarray], np.ndarray] | None = None
    potential: Callable[[np.ndarray], np.ndarray] | None = None
    # finite data law: returns (batch of every outcome, probability weights)
    enumerate_data: Callable[[bool], tuple[np.ndarray, np.ndarray]] | None = None
    # False when data points are indices rather than vectors in R^m
    data_is_euclidean: bool = True
    deterministic: bool = False
    # per-sample dissipativity witness x -> (a(x), b(x)), each of shape (n,)
    witness: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None
    extras: dict = field(default_factory=dict, compare=False)

    def H(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 1:
            return self.stochastic_gradient(theta[None, :], np.asarray(x)[None, ...])[0]
        return self.stochastic_gradient(theta, x)

    def h(self, theta: np.ndarray) -> np.ndarray:
        if self.full_gradient is None:
            raise UnsupportedCheckError(f"model {self.name!r} exposes no full gradient")
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 1:
            return self.full_gradient(theta[None, :])[0]
        return self.full_gradient(theta)

    def U(self, theta: np.ndarray) -> np.ndarray | float:
        if self.potential is None:
            raise UnsupportedCheckError(f"model {self.name!r} exposes no potential")
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 1:
            return float(self.potential(theta[None, :])[0])
        return self.potential(theta)


def _no_data(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.zeros((n, 0))


def quadratic_model(kappa: float = 1.0, d: int = 1, b: float = 1.0) -> GradientModel:
    """U(theta) = kappa |theta|^2 / 2 with the exact gradient as its oracle.

    ``b`` only feeds the declared dissipativity pair; any positive value is
    valid since <h(theta), theta> = kappa |theta|^2.
    """
    if kappa <= 0 or d < 1:
        raise ValueError("need kappa > 0 and d >= 1")

    def grad(theta, x=None):
        return kappa * theta

    def potential(theta):
        return 0.5 * kappa * np.sum(theta * theta, axis=-1)

    declared = Declared(L1=kappa, L2=0.0, rho=0.0, a=kappa, b=b, H0=0.0, h0=0.0,
                        u0=0.0, L1_bar=kappa, C_rho=1.0, sigma_Z=0.0)
    return GradientModel(
        name="quadratic", d=d, data_dim=0,
        stochastic_gradient=grad, sample_data=_no_data, declared=declared,
        full_gradient=grad, potential=potential,
        enumerate_data=lambda replacement=True: (np.zeros((1, 0)), np.ones(1)),
        deterministic=True, extras={"kappa": kappa, "U_star": 0.0},
    )


def _chi_moment(d: int, j: int) -> float:
    # E R^j for R ~ chi_d
    return math.exp(0.5 * j * math.log(2.0) + special.gammaln((d + j) / 2) - special.gammaln(d / 2))


def gaussian_location_model(mu_x=None, d: int = 1, scale: float = 1.0) -> GradientModel:
    """H(theta, x) = theta - x with X ~ Normal(mu_x, scale^2 I).

    Declared constants: L1 = L2 = 1, rho = 0, and the per-sample witness
    <H(theta,x), theta> >= |theta|^2/2 - |x|^2/2, whence a = 1/2 and
    b = E|X|^2 / 2.  ``scale = 0`` gives point-mass data.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    mu = np.zeros(d) if mu_x is None else np.asarray(mu_x, dtype=float).reshape(-1)
    if mu.shape != (d,):
        raise ValueError(f"mu_x must have length {d}")
    if scale < 0:
        raise ValueError("scale must be >= 0")

    def grad(theta, x):
        return theta - x

    def full(theta):
        return theta - mu

    def potential(theta):
        diff = theta - mu
        return 0.5 * np.sum(diff * diff, axis=-1)

    def sample(rng, n):
        if scale == 0:
            return np.broadcast_to(mu, (n, d)).copy()
        return mu + scale * rng.standard_normal((n, d))

    mu_norm = float(np.linalg.norm(mu))
    if mu_norm == 0.0:
        # |X| = scale * chi_d: E(1+|X|)^4 by the binomial expansion
        c_rho = sum(math.comb(4, j) * scale**j * _chi_moment(d, j) for j in range(5))
    else:
        draws = mu + scale * np.random.default_rng(0).standard_normal((1_000_000, d))
        c_rho = float(np.mean((1.0 + np.linalg.norm(draws, axis=1)) ** 4))
    second = mu_norm**2 + d * scale**2
    declared = Declared(
        L1=1.0, L2=1.0, rho=0.0, a=0.5, b=max(0.5 * second, 1e-12),
        H0=0.0, h0=mu_norm, u0=0.5 * mu_norm**2, L1_bar=1.0,
        C_rho=c_rho, sigma_Z=d * scale**2,
    )
    return GradientModel(
        name="gaussian_location", d=d, data_dim=d,
        stochastic_gradient=grad, sample_data=sample, declared=declared,
        full_gradient=full, potential=potential,
        witness=lambda x: (np.full(len(x), 0.5), 0.5 * np.sum(x * x, axis=1)),
        deterministic=(scale == 0), extras={"mu_x": mu, "scale": scale, "U_star": 0.0},
    )


def _mixture_parts(m: np.ndarray):
    def grad(theta):
        return theta - np.tanh(theta @ m)[:, None] * m

    def potential(theta):
        # -log of the mixture average; >= 0 since both exponentials are <= 1
        s = theta @ m
        return (0.5 * np.sum(theta * theta, axis=-1) + 0.5 * (m @ m)
                - np.logaddexp(s, -s) + math.log(2.0))

    return grad, potential


def _line_minimum(potential, m: np.ndarray) -> float:
    from scipy.optimize import minimize_scalar

    norm = float(np.linalg.norm(m))
    if norm == 0.0:
        return float(potential(np.zeros((1, m.size)))[0])
    unit = m / norm
    f = lambda t: float(potential((t * unit)[None, :])[0])
    res = minimize_scalar(f, bounds=(0.0, norm + 1.0), method="bounded",
                          options={"xatol": 1e-12})
    return min(res.fun, f(0.0))


def mixture_prior_model(m) -> GradientModel:
    """Two-mode Gaussian mixture prior, pi0 ∝ e^{-|θ-m|²/2} + e^{-|θ+m|²/2}.

    The potential is shifted by log 2 so that U >= 0 with U(0) = |m|²/2.
    """
    m = np.atleast_1d(np.asarray(m, dtype=float))
    if not np.all(np.isfinite(m)):
        raise ValueError("mode vector must be finite")
    d = m.size
    grad, potential = _mixture_parts(m)
    mm = float(m @ m)
    declared = Declared(L1=1.0 + mm, L2=0.0, rho=0.0, a=0.5, b=max(0.5 * mm, 1e-12),
                        H0=0.0, h0=0.0, u0=0.5 * mm, L1_bar=1.0 + mm)
    return GradientModel(
        name="mixture_prior", d=d, data_dim=0,
        stochastic_gradient=lambda theta, x=None: grad(theta), sample_data=_no_data,
        declared=declared, full_gradient=grad, potential=potential,
        enumerate_data=lambda replacement=True: (np.zeros((1, 0)), np.ones(1)),
        deterministic=True, extras={"m": m, "U_star": _line_minimum(potential, m)},
    )


@dataclass(frozen=True)
class BLRDataset:
    z: np.ndarray  # (M, d) features
    y: np.ndarray  # (M,) labels in {0, 1}
    K: int = 1

    def __post_init__(self):
        z = np.atleast_2d(np.asarray(self.z, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if z.shape[0] == 0:
            raise ValueError("empty dataset")
        if z.shape[0] != y.size:
            raise ValueError("features and labels differ in length")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        if not 1 <= self.K <= z.shape[0]:
            raise ValueError(f"minibatch size K={self.K} outside [1, M={z.shape[0]}]")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)

    @property
    def M(self) -> int:
        return self.z.shape[0]

    @property
    def d(self) -> int:
        return self.z.shape[1]

    def with_batch(self, K: int) -> "BLRDataset":
        return BLRDataset(self.z, self.y, K)


def read_blr_csv(path, K: int = 1) -> BLRDataset:
    """Read a dataset with header ``z_1,...,z_d,y``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        d = len(header) - 1
        if d < 1 or header[-1] != "y" or header[:-1] != [f"z_{i + 1}" for i in range(d)]:
            raise ValueError(f"{path}: header must be z_1..z_d,y, got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise ValueError(f"{path}:{lineno}: expected {d + 1} fields")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from None
    if not rows:
        raise ValueError(f"{path}: no records")
    data = np.array(rows)
    return BLRDataset(data[:, :-1], data[:, -1], K)


def write_blr_csv(dataset: BLRDataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"z_{i + 1}" for i in range(dataset.d)] + ["y"])
        for zi, yi in zip(dataset.z, dataset.y):
            w.writerow([repr(float(v)) for v in zi] + [int(yi)])


def blr_synthetic_data(M: int, d: int, theta_true, seed: int, K: int = 1) -> BLRDataset:
    if M < 1:
        raise ValueError("M must be >= 1")
    theta_true = np.asarray(theta_true, dtype=float).reshape(d)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((M, d))
    y = (rng.random(M) < special.expit(z @ theta_true)).astype(float)
    return BLRDataset(z, y, K)


def blr_model(dataset: BLRDataset, m) -> GradientModel:
    """Bayesian logistic regression under the two-mode mixture prior.

    A data sample is a row of K indices drawn uniformly with replacement;
    H(θ, u) = ∇f0(θ) + (M/K) Σ_k (s(z_ik·θ) - y_ik) z_ik.
    """
    m = np.atleast_1d(np.asarray(m, dtype=float))
    if m.size != dataset.d:
        raise ValueError("prior mode and features differ in dimension")
    z, y, M, K = dataset.z, dataset.y, dataset.M, dataset.K
    prior_grad, prior_pot = _mixture_parts(m)

    def grad(theta, idx):
        idx = np.asarray(idx, dtype=np.intp)
        zb = z[idx]  # (n, K, d)
        resid = special.expit(np.einsum("nkd,nd->nk", zb, theta)) - y[idx]
        scale = M / idx.shape[-1]
        return prior_grad(theta) + scale * np.einsum("nk,nkd->nd", resid, zb)

    def full(theta):
        resid = special.expit(theta @ z.T) - y  # (n, M)
        return prior_grad(theta) + resid @ z

    def potential(theta):
        logits = theta @ z.T
        # -log p(y|θ) = log(1+e^t) - y t
        nll = np.sum(np.logaddexp(0.0, logits) - y * logits, axis=-1)
        return prior_pot(theta) + nll

    def sample(rng, n):
        return rng.integers(0, M, size=(n, K))

    def enumerate_(replacement=True):
        if replacement:
            tuples = np.array(list(itertools.product(range(M), repeat=K)), dtype=np.intp)
        else:
            tuples = np.array(list(itertools.combinations(range(M), K)), dtype=np.intp)
        return tuples, np.full(len(tuples), 1.0 / len(tuples))

    zmax = float(np.max(np.linalg.norm(z, axis=1)))
    mm = float(m @ m)
    lik_bound = M * zmax  # sup of the rescaled likelihood term
    declared = Declared(
        L1=1.0 + mm + 0.25 * M * zmax**2, L2=0.0, rho=0.0, a=0.5,
        b=0.5 * (math.sqrt(mm) + lik_bound) ** 2,
        H0=0.5 * lik_bound, h0=float(np.linalg.norm((0.5 - y) @ z)),
        u0=0.5 * mm + M * math.log(2.0), L1_bar=1.0 + mm + 0.25 * M * zmax**2,
    )
    return GradientModel(
        name="blr", d=dataset.d, data_dim=K,
        stochastic_gradient=grad, sample_data=sample, declared=declared,
        full_gradient=full, potential=potential, enumerate_data=enumerate_,
        data_is_euclidean=False, extras={"dataset": dataset, "m": m},
    )


# ---------------------------------------------------------------------------
# probes


@dataclass(frozen=True)
class UnbiasednessReport:
    deviation: float  # max-abs |mean H - h|
    tolerance: float
    passed: bool
    mode: str


def check_unbiasedness(model: GradientModel, theta, mode: Literal["exhaustive", "monte_carlo"] = "monte_carlo",
                       n_samples: int = 100_000, seed: int = 0, replacement: bool = True) -> UnbiasednessReport:
    """Compare the mean stochastic gradient at ``theta`` with h(theta).

    Exhaustive mode averages over every outcome of a finite data law and
    passes at 1e-10; Monte Carlo mode passes when every coordinate is within
    4 sample standard deviations / sqrt(N).
    """
    if model.full_gradient is None:
        raise UnsupportedCheckError(f"model {model.name!r} exposes no full gradient")
    theta = np.asarray(theta, dtype=float).reshape(model.d)
    target = model.h(theta)
    if mode == "exhaustive":
        if model.enumerate_data is None:
            raise UnsupportedCheckError(f"model {model.name!r} has no finite data law")
        xs, w = model.enumerate_data(replacement)
        grads = model.stochastic_gradient(np.broadcast_to(theta, (len(xs), model.d)).copy(), xs)
        mean = w @ grads
        dev = float(np.max(np.abs(mean - target)))
        return UnbiasednessReport(dev, 1e-10, dev < 1e-10, "exhaustive")
    if mode != "monte_carlo":
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    if model.deterministic:
        # one evaluation is the exact mean; averaging copies would add rounding
        g = model.stochastic_gradient(theta[None, :], model.sample_data(rng, 1))[0]
        dev = float(np.max(np.abs(g - target)))
        return UnbiasednessReport(dev, 0.0, dev == 0.0, "monte_carlo")
    xs = model.sample_data(rng, n_samples)
    grads = model.stochastic_gradient(np.broadcast_to(theta, (n_samples, model.d)).copy(), xs)
    diff = np.abs(grads.mean(axis=0) - target)
    tol = 4.0 * grads.std(axis=0) / math.sqrt(n_samples)
    # deterministic oracles have zero spread; allow rounding only
    tol = np.maximum(tol, 1e-12 * (1.0 + np.abs(target)))
    return UnbiasednessReport(float(diff.max()), float(tol.max()), bool(np.all(diff <= tol)), "monte_carlo")


def _sphere(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    u = rng.standard_normal((n, d))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


@dataclass(frozen=True)
class DissipativityReport:
    stochastic_margin: float  # min over grid of <H(θ,x),θ> - (a|θ|² - b)
    full_margin: float | None  # same for h, None without a full gradient
    a: float
    b: float
    roundoff: float = 0.0  # margins above -roundoff count as non-negative

    @property
    def passed(self) -> bool:
        ok = self.stochastic_margin >= -self.roundoff
        return ok and (self.full_margin is None or self.full_margin >= -self.roundoff)


def probe_dissipativity(model: GradientModel, radius_grid=None, n_data_draws: int = 16,
                        n_directions: int = 1000, a: float | None = None, b: float | None = None,
                        seed: int = 0) -> DissipativityReport:
    """Worst margin of the dissipativity inequality on radii x directions x data.

    ``a``/``b`` default to the model's declared pair.  When neither is
    overridden and the model carries a per-sample witness (a(x), b(x)), the
    stochastic margin is taken against that witness; otherwise the aggregate
    pair is applied to every drawn sample.  A negative margin is reported,
    never raised.
    """
    use_witness = model.witness is not None and a is None and b is None
    a = model.declared.a if a is None else a
    b = model.declared.b if b is None else b
    if radius_grid is None:
        radius_grid = np.logspace(-3, 2, 50)
    rng = np.random.default_rng(seed)
    radii = np.asarray(radius_grid, dtype=float)
    dirs = _sphere(rng, n_directions, model.d)
    pts = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, model.d)
    bound = a * np.sum(pts * pts, axis=1) - b

    worst = math.inf
    for _ in range(n_data_draws):
        xs = model.sample_data(rng, len(pts))
        inner = np.sum(model.stochastic_gradient(pts, xs) * pts, axis=1)
        if use_witness:
            ax, bx = model.witness(xs)
            margin = inner - (ax * np.sum(pts * pts, axis=1) - bx)
        else:
            margin = inner - bound
        worst = min(worst, float(np.min(margin)))
    full = None
    if model.full_gradient is not None:
        full = float(np.min(np.sum(model.full_gradient(pts) * pts, axis=1) - bound))
    roundoff = 1e-12 * (1.0 + float(np.max(np.abs(bound))) + abs(b))
    return DissipativityReport(worst, full, a, b, roundoff)


@dataclass(frozen=True)
class LipschitzReport:
    theta_ratio: float
    x_ratio: float | None  # None when data are not vectors
    L1: float
    L2: float
    n_excluded: int

    @property
    def passed(self) -> bool:
        ok = self.theta_ratio <= self.L1 * (1 + 1e-9)
        if self.x_ratio is not None:
            ok = ok and self.x_ratio <= self.L2 * (1 + 1e-9)
        return ok


def probe_lipschitz(model: GradientModel, n_pairs: int = 10_000, n_data_draws: int = 4,
                    seed: int = 0, scale: float = 3.0, pairs=None) -> LipschitzReport:
    """Largest observed local-Lipschitz ratios in theta and in the data.

    ``pairs`` may supply explicit ``(theta, theta_prime)`` arrays; otherwise
    pairs are Gaussian with standard deviation ``scale``, half of them
    close together to probe curvature.  Pairs closer than 1e-12 are dropped.
    """
    rng = np.random.default_rng(seed)
    rho = model.declared.rho
    if pairs is None:
        t1 = scale * rng.standard_normal((n_pairs, model.d))
        near = rng.random(n_pairs) < 0.5
        step = np.where(near[:, None], 1e-3, scale) * rng.standard_normal((n_pairs, model.d))
        t2 = t1 + step
    else:
        t1, t2 = (np.atleast_2d(np.asarray(p, dtype=float)) for p in pairs)
    gap = np.linalg.norm(t1 - t2, axis=1)
    keep = gap >= 1e-12
    n_excluded = int(np.sum(~keep))
    t1, t2, gap = t1[keep], t2[keep], gap[keep]

    theta_ratio = 0.0
    x_ratio = None if not model.data_is_euclidean else 0.0
    for _ in range(n_data_draws):
        if len(gap) == 0:
            break
        x = model.sample_data(rng, len(gap))
        diff = np.linalg.norm(model.stochastic_gradient(t1, x) - model.stochastic_gradient(t2, x), axis=1)
        xn = np.linalg.norm(x.reshape(len(gap), -1), axis=1)
        theta_ratio = max(theta_ratio, float(np.max(diff / ((1.0 + xn) ** rho * gap))))
        if x_ratio is not None and model.data_dim > 0:
            x2 = model.sample_data(rng, len(gap))
            xgap = np.linalg.norm((x - x2).reshape(len(gap), -1), axis=1)
            ok = xgap >= 1e-12
            if np.any(ok):
                dx = np.linalg.norm(model.stochastic_gradient(t1, x) - model.stochastic_gradient(t1, x2), axis=1)
                x2n = np.linalg.norm(x2.reshape(len(gap), -1), axis=1)
                th = np.linalg.norm(t1, axis=1)
                denom = (1.0 + xn + x2n) ** rho * (1.0 + th) * xgap
                x_ratio = max(x_ratio, float(np.max(dx[ok] / denom[ok])))
    return LipschitzReport(theta_ratio, x_ratio, model.declared.L1, model.declared.L2, n_excluded)
