"""SGHMC recursion, chain and ensemble runners, and exact Gaussian oracles.

One step maps (theta, v) to

    v'     = v - eta * (gamma * v + H(theta, X)) + sqrt(2 gamma eta / beta) * xi
    theta' = theta + eta * v

with both right-hand sides evaluated at the *old* state.

Seeding rule: chain ``k`` of master seed ``s`` draws its injected noise from
``PCG64(SeedSequence(s, spawn_key=(k, 0)))``, its data samples from
``spawn_key=(k, 1)`` and (for random starts) its initial state from
``spawn_key=(k, 2)``.  A chain's output therefore depends only on
``(s, k)``, never on how many other chains run beside it.
"""

from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from scipy.linalg import expm, solve_discrete_lyapunov

from .models import GradientModel

logger = logging.getLogger(__name__)

__all__ = [
    "ChainState",
    "SamplerConfig",
    "InitialSpec",
    "GaussianMomentsPair",
    "DivergenceError",
    "EnsembleDivergenceError",
    "ChainResult",
    "EnsembleResult",
    "sghmc_step",
    "run_chain",
    "run_ensemble",
    "chain_generators",
    "exact_ou_moments",
    "sghmc_quadratic_moments",
    "sample_extended_quadratic",
    "DIVERGENCE_THRESHOLD",
]

DIVERGENCE_THRESHOLD = 1e12
_BLOCK = 256  # steps of noise/data drawn per generator call
_CHUNK = 64  # chains per partial sum; fixes the reduction order across thread splits


class DivergenceError(FloatingPointError):
    def __init__(self, iteration: int, message: str | None = None):
        self.iteration = iteration
        super().__init__(message or f"chain diverged at iteration {iteration}")


class EnsembleDivergenceError(DivergenceError):
    """Raised after an ensemble run in which some chains diverged.

    ``partial`` holds the ensemble result with the failed chains' terminal
    states set to NaN; ``failed`` maps chain id to the iteration of failure.
    """

    def __init__(self, failed: dict[int, int], partial: "EnsembleResult"):
        self.failed = dict(failed)
        self.partial = partial
        first = min(failed.values())
        super().__init__(first, f"{len(failed)} chain(s) diverged: ids {sorted(failed)}")


@dataclass(frozen=True)
class ChainState:
    theta: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        if theta.ndim != 1 or theta.shape != v.shape or theta.size < 1:
            raise ValueError(f"theta and v must be vectors of equal length >= 1, got {theta.shape}, {v.shape}")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(v))):
            raise ValueError("chain state has non-finite entries")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "v", v)

    @property
    def d(self) -> int:
        return self.theta.size

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.v)))


@dataclass(frozen=True)
class SamplerConfig:
    eta: float
    gamma: float
    beta: float
    steps: int = 0
    master_seed: int = 0
    chain_id: int = 0
    burn_in: int | None = None  # default steps // 10
    thin: int | None = None  # default max(1, steps // 10_000)
    noise_enabled: bool = True

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError("eta must be >= 0")
        if not (self.gamma >= 0 and self.beta > 0):
            raise ValueError("need gamma >= 0 and beta > 0")
        if self.steps < 0 or self.chain_id < 0:
            raise ValueError("steps and chain_id must be non-negative")
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.steps // 10)
        if self.thin is None:
            object.__setattr__(self, "thin", max(1, self.steps // 10_000))
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not 0 <= self.burn_in <= self.steps:
            raise ValueError("burn_in must lie in [0, steps]")

    @property
    def noise_scale(self) -> float:
        return math.sqrt(2.0 * self.gamma * self.eta / self.beta)

    def recorded_iterations(self) -> np.ndarray:
        return np.arange(self.burn_in, self.steps + 1, self.thin)


@dataclass(frozen=True)
class InitialSpec:
    """Initial law of (theta_0, v_0): a point mass, or independent Gaussians
    centred at the given point with standard deviations ``theta_scale`` and
    ``v_scale``."""

    theta0: np.ndarray
    v0: np.ndarray
    kind: Literal["point", "gaussian"] = "point"
    theta_scale: float = 0.0
    v_scale: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta0", np.atleast_1d(np.asarray(self.theta0, dtype=float)))
        object.__setattr__(self, "v0", np.atleast_1d(np.asarray(self.v0, dtype=float)))
        if self.theta0.shape != self.v0.shape:
            raise ValueError("theta0 and v0 differ in shape")
        if self.kind not in ("point", "gaussian"):
            raise ValueError(f"unknown initial kind {self.kind!r}")

    @classmethod
    def point(cls, theta0, v0) -> "InitialSpec":
        return cls(theta0, v0)

    def draw(self, master_seed: int, chain_id: int) -> ChainState:
        if self.kind == "point":
            return ChainState(self.theta0.copy(), self.v0.copy())
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=(chain_id, 2))))
        d = self.theta0.size
        return ChainState(self.theta0 + self.theta_scale * rng.standard_normal(d),
                          self.v0 + self.v_scale * rng.standard_normal(d))

    def moments(self) -> "GaussianMomentsPair":
        d = self.theta0.size
        cov = np.diag(np.r_[np.full(d, self.theta_scale**2), np.full(d, self.v_scale**2)])
        if self.kind == "point":
            cov = np.zeros((2 * d, 2 * d))
        return GaussianMomentsPair(np.r_[self.theta0, self.v0], cov)


@dataclass(frozen=True)
class GaussianMomentsPair:
    """Mean and covariance of the joint (theta, v) law, state order (theta, v)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        n = mean.size
        if n % 2 or cov.shape != (n, n):
            raise ValueError("need mean of length 2d and a 2d x 2d covariance")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise ValueError("covariance is not symmetric")
        if n and np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() < -1e-12:
            raise ValueError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @property
    def d(self) -> int:
        return self.mean.size // 2

    def theta_second_moment(self) -> float:
        d = self.d
        return float(self.mean[:d] @ self.mean[:d] + np.trace(self.cov[:d, :d]))

    def v_second_moment(self) -> float:
        d = self.d
        return float(self.mean[d:] @ self.mean[d:] + np.trace(self.cov[d:, d:]))


def _kernel(theta, v, grad, noise, eta, gamma, beta):
    v_new = v - eta * (gamma * v + grad) + math.sqrt(2.0 * gamma * eta / beta) * noise
    theta_new = theta + eta * v
    return theta_new, v_new


def sghmc_step(state: ChainState, grad_sample, noise, cfg: SamplerConfig, iteration: int = 0) -> ChainState:
    """One SGHMC update from ``state`` given H(theta_n, X_{n+1}) and xi_{n+1}."""
    grad_sample = np.asarray(grad_sample, dtype=float)
    noise = np.zeros(state.d) if not cfg.noise_enabled else np.asarray(noise, dtype=float)
    if grad_sample.shape != state.theta.shape or noise.shape != state.theta.shape:
        raise ValueError("gradient and noise must match the state dimension")
    theta, v = _kernel(state.theta, state.v, grad_sample, noise, cfg.eta, cfg.gamma, cfg.beta)
    if not (np.all(np.abs(theta) <= DIVERGENCE_THRESHOLD) and np.all(np.abs(v) <= DIVERGENCE_THRESHOLD)):
        raise DivergenceError(iteration + 1)
    return ChainState(theta, v)


def chain_generators(master_seed: int, chain_id: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(noise, data) generators of one chain under the documented splitting rule."""
    return tuple(
        np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=(chain_id, s))))
        for s in (0, 1)
    )


@dataclass
class _Block:
    # result of simulating a contiguous group of chains
    recorded: np.ndarray  # (R, C, 2d) or None
    th2_sum: np.ndarray  # (R, n_chunks) partial sums over chains
    th2_sq: np.ndarray
    v2_sum: np.ndarray
    v2_sq: np.ndarray
    n_alive: np.ndarray  # (R, n_chunks) chains alive at each recorded iteration
    theta: np.ndarray
    v: np.ndarray
    failed: dict


def _simulate(model: GradientModel, cfg: SamplerConfig, theta: np.ndarray, v: np.ndarray,
              chain_ids: list[int], record_states: bool) -> _Block:
    theta = theta.copy()
    v = v.copy()
    C, d = theta.shape
    rec_iters = cfg.recorded_iterations()
    R = rec_iters.size
    recorded = np.empty((R, C, 2 * d)) if record_states else None
    starts = np.arange(0, C, _CHUNK)
    th2_sum = np.zeros((R, starts.size))
    th2_sq = np.zeros_like(th2_sum)
    v2_sum = np.zeros_like(th2_sum)
    v2_sq = np.zeros_like(th2_sum)
    n_alive = np.zeros_like(th2_sum)
    gens = [chain_generators(cfg.master_seed, k) for k in chain_ids]
    alive = np.ones(C, dtype=bool)
    failed: dict[int, int] = {}
    noise_scale = cfg.noise_scale

    def record(r):
        th2 = np.where(alive, np.sum(theta**2, axis=1), 0.0)
        v2 = np.where(alive, np.sum(v**2, axis=1), 0.0)
        th2_sum[r], th2_sq[r] = np.add.reduceat(th2, starts), np.add.reduceat(th2 * th2, starts)
        v2_sum[r], v2_sq[r] = np.add.reduceat(v2, starts), np.add.reduceat(v2 * v2, starts)
        n_alive[r] = np.add.reduceat(alive.astype(float), starts)
        if recorded is not None:
            recorded[r, :, :d] = theta
            recorded[r, :, d:] = v

    r = 0
    if R and rec_iters[0] == 0:
        record(0)
        r = 1
    k = 0
    while k < cfg.steps:
        nb = min(_BLOCK, cfg.steps - k)
        if cfg.noise_enabled and noise_scale > 0:
            noise = np.stack([g[0].standard_normal((nb, d)) for g in gens], axis=1)
        else:
            noise = None
        data = np.stack([model.sample_data(g[1], nb) for g in gens], axis=1)
        for j in range(nb):
            grad = model.stochastic_gradient(theta, data[j])
            xi = noise[j] if noise is not None else 0.0
            v_new = v - cfg.eta * (cfg.gamma * v + grad) + noise_scale * xi
            theta += cfg.eta * v
            v = v_new
            k += 1
            if not (np.all(np.abs(theta) <= DIVERGENCE_THRESHOLD) and np.all(np.abs(v) <= DIVERGENCE_THRESHOLD)):
                bad = alive & ~(np.all(np.abs(theta) <= DIVERGENCE_THRESHOLD, axis=1)
                                & np.all(np.abs(v) <= DIVERGENCE_THRESHOLD, axis=1))
                for c in np.flatnonzero(bad):
                    failed[chain_ids[c]] = k
                alive &= ~bad
                # dead chains are parked at the origin and excluded from statistics
                theta[~alive] = 0.0
                v[~alive] = 0.0
            if r < R and k == rec_iters[r]:
                record(r)
                r += 1
    dead = ~alive
    theta[dead] = np.nan
    v[dead] = np.nan
    if recorded is not None and dead.any():
        # states after failure are meaningless
        for c in np.flatnonzero(dead):
            it = failed[chain_ids[c]]
            recorded[rec_iters >= it, c, :] = np.nan
    return _Block(recorded, th2_sum, th2_sq, v2_sum, v2_sq, n_alive, theta, v, failed)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("KINETIC_GIBBS_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class EnsembleResult:
    """Cross-chain summaries of an ensemble run.

    ``theta_sq_mean[r]`` is the mean of |theta_k|^2 at ``iterations[r]`` over
    the chains still finite at that iteration; the ``_se`` arrays are
    standard errors of those means.  ``states`` (shape ``(R, n_chains, 2d)``)
    is present only when recording was requested.
    """

    cfg: SamplerConfig
    chain_ids: list[int]
    iterations: np.ndarray
    theta_sq_mean: np.ndarray
    theta_sq_se: np.ndarray
    v_sq_mean: np.ndarray
    v_sq_se: np.ndarray
    terminal_theta: np.ndarray
    terminal_v: np.ndarray
    initial_theta: np.ndarray
    initial_v: np.ndarray
    states: np.ndarray | None = None
    failed: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return len(self.chain_ids)

    @property
    def d(self) -> int:
        return self.terminal_theta.shape[1]

    def terminal_cloud(self) -> np.ndarray:
        """(n_chains, 2d) array of terminal (theta, v), failed chains dropped."""
        cloud = np.hstack([self.terminal_theta, self.terminal_v])
        return cloud[np.all(np.isfinite(cloud), axis=1)]

    def pooled_cloud(self) -> np.ndarray:
        """All recorded post-burn-in states of surviving chains, (R * C, 2d)."""
        if self.states is None:
            raise ValueError("ensemble was run without record_states")
        keep = np.array([cid not in self.failed for cid in self.chain_ids])
        return self.states[:, keep, :].reshape(-1, self.states.shape[2])


def _stats(total, sq, n):
    # n: chains contributing to each row
    with np.errstate(divide="ignore", invalid="ignore"):
        mean = np.where(n > 0, total / n, np.nan)
        var = np.maximum(sq / n - mean * mean, 0.0) * n / (n - 1)
        se = np.where(n > 1, np.sqrt(var / n), 0.0)
    return mean, np.where(n > 0, se, np.nan)


def run_ensemble(model: GradientModel, cfg: SamplerConfig, n_chains: int, initial: InitialSpec,
                 record_states: bool | None = None, params=None, raise_on_divergence: bool = True) -> EnsembleResult:
    """Run ``n_chains`` independent chains with ids ``0..n_chains-1``.

    Chains are simulated as one vectorised batch (split into
    ``KINETIC_GIBBS_THREADS`` groups run on a thread pool); results do not
    depend on the split.  ``record_states`` defaults to True when the
    recorded array stays under 5e7 floats.
    """
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    return _run(model, cfg, list(range(n_chains)), initial, record_states, params, raise_on_divergence)


def _run(model, cfg, chain_ids, initial, record_states, params, raise_on_divergence) -> EnsembleResult:
    if initial.theta0.size != model.d:
        raise ValueError(f"initial state has dimension {initial.theta0.size}, model has {model.d}")
    if params is not None:
        _warn_step(cfg, params)
    R = cfg.recorded_iterations().size
    C = len(chain_ids)
    if record_states is None:
        record_states = R * C * 2 * model.d <= 50_000_000
    starts = [initial.draw(cfg.master_seed, k) for k in chain_ids]
    theta0 = np.array([s.theta for s in starts])
    v0 = np.array([s.v for s in starts])

    n_chunks = -(-C // _CHUNK)
    n_groups = min(_threads(), n_chunks)
    bounds = np.minimum(np.linspace(0, n_chunks, n_groups + 1).astype(int) * _CHUNK, C)
    groups = [(bounds[i], bounds[i + 1]) for i in range(n_groups)]

    def work(g):
        lo, hi = g
        return _simulate(model, cfg, theta0[lo:hi], v0[lo:hi], chain_ids[lo:hi], record_states)

    if n_groups == 1:
        blocks = [work(groups[0])]
    else:
        with ThreadPoolExecutor(n_groups) as pool:
            blocks = list(pool.map(work, groups))

    failed = {}
    for b in blocks:
        failed.update(b.failed)
    agg = lambda name: np.concatenate([getattr(b, name) for b in blocks], axis=1).sum(axis=1)
    n_alive = agg("n_alive")
    th_mean, th_se = _stats(agg("th2_sum"), agg("th2_sq"), n_alive)
    v_mean, v_se = _stats(agg("v2_sum"), agg("v2_sq"), n_alive)
    result = EnsembleResult(
        cfg=cfg, chain_ids=list(chain_ids), iterations=cfg.recorded_iterations(),
        theta_sq_mean=th_mean, theta_sq_se=th_se, v_sq_mean=v_mean, v_sq_se=v_se,
        terminal_theta=np.vstack([b.theta for b in blocks]),
        terminal_v=np.vstack([b.v for b in blocks]),
        initial_theta=theta0, initial_v=v0,
        states=np.concatenate([b.recorded for b in blocks], axis=1) if record_states else None,
        failed=failed,
    )
    if failed and raise_on_divergence:
        raise EnsembleDivergenceError(failed, result)
    return result


def _warn_step(cfg: SamplerConfig, params) -> None:
    from .constants import eta_max

    limit = eta_max(params)
    if cfg.eta > limit:
        warnings.warn(f"step size {cfg.eta:g} exceeds the certified eta_max {limit:.4g}", stacklevel=3)


@dataclass
class ChainResult:
    iterations: np.ndarray
    theta: np.ndarray  # (R, d) recorded positions
    v: np.ndarray  # (R, d) recorded momenta
    final: ChainState
    theta_sq_mean: float  # running mean of |theta|^2 over recorded states
    v_sq_mean: float

    @property
    def trajectory(self) -> np.ndarray:
        return np.hstack([self.theta, self.v])


def run_chain(model: GradientModel, cfg: SamplerConfig, initial: ChainState | InitialSpec,
              params=None) -> ChainResult:
    """Run the single chain ``cfg.chain_id`` and keep its thinned trajectory.

    Raises DivergenceError naming the iteration at which a coordinate became
    non-finite or exceeded 1e12 in magnitude.  With ``params`` (a
    ProblemParams) a warning is issued when eta exceeds the certified
    eta_max; the run proceeds regardless.
    """
    if isinstance(initial, ChainState):
        initial = InitialSpec.point(initial.theta, initial.v)
    try:
        res = _run(model, cfg, [cfg.chain_id], initial, True, params, True)
    except EnsembleDivergenceError as err:
        raise DivergenceError(err.iteration) from None
    d = model.d
    traj = res.states[:, 0, :]
    final = ChainState(res.terminal_theta[0], res.terminal_v[0])
    th2 = np.sum(traj[:, :d] ** 2, axis=1)
    v2 = np.sum(traj[:, d:] ** 2, axis=1)
    return ChainResult(res.iterations, traj[:, :d].copy(), traj[:, d:].copy(), final,
                       float(th2.mean()) if th2.size else math.nan,
                       float(v2.mean()) if v2.size else math.nan)


# ---------------------------------------------------------------------------
# Gaussian oracles for U = kappa |theta|^2 / 2


def _drift_matrices(kappa, gamma, beta, d):
    eye = np.eye(d)
    A = np.block([[np.zeros((d, d)), eye], [-kappa * eye, -gamma * eye]])
    Q = np.block([[np.zeros((d, d)), np.zeros((d, d))], [np.zeros((d, d)), (2.0 * gamma / beta) * eye]])
    return A, Q


def exact_ou_moments(kappa: float, gamma: float, beta: float, t: float,
                     start: GaussianMomentsPair) -> GaussianMomentsPair:
    """Exact law at time ``t`` of the underdamped diffusion with linear drift.

    Mean is propagated by exp(At).  The covariance Gramian comes from Van
    Loan's block-exponential identity on a short step t / 2^k <= 1, then
    doubling G(2s) = G(s) + e^{As} G(s) e^{A^T s}; applying the identity
    directly at large t loses all precision to the growing e^{-At} block.
    """
    if kappa <= 0 or t < 0 or gamma < 0 or beta <= 0:
        raise ValueError("need kappa > 0, gamma >= 0, beta > 0, t >= 0")
    if t == 0:
        return GaussianMomentsPair(start.mean.copy(), start.cov.copy())
    n = start.mean.size
    A, Q = _drift_matrices(kappa, gamma, beta, n // 2)
    k = max(0, math.ceil(math.log2(t)))
    tau = t / 2**k
    # expm([[-A, Q], [0, A^T]] tau) = [[., F12], [0, F22]], F22^T F12 = int_0^tau e^{As} Q e^{A^T s} ds
    F = expm(np.block([[-A, Q], [np.zeros((n, n)), A.T]]) * tau)
    Phi = F[n:, n:].T
    gram = Phi @ F[:n, n:]
    for _ in range(k):
        gram = gram + Phi @ gram @ Phi.T
        Phi = Phi @ Phi
    mean = Phi @ start.mean
    cov = Phi @ start.cov @ Phi.T + gram
    return GaussianMomentsPair(mean, 0.5 * (cov + cov.T))


def sghmc_quadratic_moments(kappa: float, gamma: float, beta: float, eta: float,
                            n: int | None, start: GaussianMomentsPair | None = None) -> GaussianMomentsPair:
    """Exact moments of the SGHMC iterate for U = kappa |theta|^2 / 2 with the
    exact gradient, after ``n`` steps (``n=None``: the stationary law)."""
    d = 1 if start is None else start.d
    eye = np.eye(d)
    B = np.block([[eye, eta * eye], [-eta * kappa * eye, (1.0 - eta * gamma) * eye]])
    S = np.zeros((2 * d, 2 * d))
    S[d:, d:] = (2.0 * gamma * eta / beta) * eye
    if n is None:
        cov = solve_discrete_lyapunov(B, S)
        return GaussianMomentsPair(np.zeros(2 * d), 0.5 * (cov + cov.T))
    Bn = np.linalg.matrix_power(B, n)
    # sum_{j<n} B^j S B^jT by binary doubling: G(a + b) = G(a) + B^a G(b) B^aT
    Gk, Bk = S.copy(), B.copy()
    G, Bp = np.zeros_like(S), np.eye(2 * d)
    for bit in reversed(bin(n)[2:]):
        if bit == "1":
            G = G + Bp @ Gk @ Bp.T
            Bp = Bp @ Bk
        Gk = Gk + Bk @ Gk @ Bk.T
        Bk = Bk @ Bk
    mean = Bn @ start.mean
    cov = Bn @ start.cov @ Bn.T + G
    return GaussianMomentsPair(mean, 0.5 * (cov + cov.T))


def sample_extended_quadratic(kappa: float, beta: float, n: int, seed: int, d: int = 1) -> np.ndarray:
    """i.i.d. draws from the extended Gibbs law for U = kappa |theta|^2 / 2:
    theta ~ N(0, I/(beta kappa)), v ~ N(0, I/beta), independent.  Returns an
    (n, 2d) cloud."""
    if kappa <= 0 or n < 1:
        raise ValueError("need kappa > 0 and n >= 1")
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal((n, d)) / math.sqrt(beta * kappa)
    v = rng.standard_normal((n, d)) / math.sqrt(beta)
    return np.hstack([theta, v])
