"""Config-driven experiment harness.

Usage::

    kinetic-gibbs <command> CONFIG [-o OUTPUT_DIR] [--set KEY=VALUE ...]

The config is a flat ``key = value`` file; ``#`` starts a comment.  Unknown
keys are rejected.  Exit codes: 0 success, 2 configuration or input error,
3 numerical divergence (partial outputs are still written).
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import textwrap
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from scipy.stats import linregress

from . import constants as K
from .diagnostics import check_drift, check_moment_bounds, lyapunov_value, track_moments, write_series_csv
from .models import (
    BLRDataset,
    blr_model,
    blr_synthetic_data,
    check_unbiasedness,
    gaussian_location_model,
    mixture_prior_model,
    quadratic_model,
    read_blr_csv,
)
from .sampler import (
    EnsembleDivergenceError,
    InitialSpec,
    SamplerConfig,
    run_ensemble,
    sample_extended_quadratic,
)
from .wasserstein import GaussianMoments, fit_gaussian, w2_assignment, w2_gaussian, write_cloud_csv

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

# key -> parser; every accepted key is listed here
_FLOAT, _INT = float, int


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _vec(s: str) -> np.ndarray:
    return np.array([float(x) for x in s.replace(" ", "").split(",") if x], dtype=float)


def _str(s: str) -> str:
    return s.strip()


MODEL_KEYS = {"model": _str, "kappa": _FLOAT, "d": _INT, "mu_x": _vec, "data_scale": _FLOAT,
              "prior_m": _vec}
SAMPLER_KEYS = {"eta": _FLOAT, "gamma": _FLOAT, "beta": _FLOAT, "steps": _INT, "burn_in": _INT,
                "thin": _INT, "noise_enabled": _bool, "n_chains": _INT, "master_seed": _INT,
                "init": _str, "theta0": _vec, "v0": _vec, "theta_scale": _FLOAT, "v_scale": _FLOAT}
PARAM_KEYS = {"params": _str, "L1": _FLOAT, "L2": _FLOAT, "rho": _FLOAT, "C_rho": _FLOAT, "H0": _FLOAT,
              "h0": _FLOAT, "u0": _FLOAT, "L1_bar": _FLOAT, "a": _FLOAT, "b": _FLOAT, "sigma_Z": _FLOAT,
              "m0": _FLOAT, "alpha": _FLOAT, "W_rho0": _FLOAT, "C2_star": _FLOAT, "c_LS": _FLOAT,
              "L1_prime": _FLOAT, "B1": _FLOAT, "gen_M": _FLOAT, "n": _FLOAT, "z": _FLOAT}
EXPERIMENT_KEYS = {"eta_list": _vec, "physical_time": _FLOAT, "burn_in_time": _FLOAT,
                   "reference_size": _INT, "bootstrap": _INT, "M": _INT, "K": _INT, "theta_true": _vec,
                   "data_file": _str, "test_size": _INT, "data_seed": _INT, "unbiasedness": _str,
                   "output_dir": _str}
ALL_KEYS = {**MODEL_KEYS, **SAMPLER_KEYS, **PARAM_KEYS, **EXPERIMENT_KEYS}
_PARAM_FIELDS = ("L1", "L2", "rho", "C_rho", "H0", "h0", "u0", "L1_bar", "a", "b", "sigma_Z")


class ConfigError(ValueError):
    pass


class Config(dict):
    def need(self, *keys):
        missing = [k for k in keys if k not in self]
        if missing:
            raise ConfigError(f"missing required key(s): {', '.join(missing)}")

    def get_(self, key, default):
        return self[key] if key in self else default


def parse_config_text(text: str) -> Config:
    cfg = Config()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        _set(cfg, key, value, f"line {lineno}")
    return cfg


def _set(cfg: Config, key: str, value: str, where: str) -> None:
    if key not in ALL_KEYS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        cfg[key] = ALL_KEYS[key](value)
    except ValueError as err:
        raise ConfigError(f"{where}: bad value for {key!r}: {err}") from None


def load_config(path, overrides=()) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from None
    cfg = parse_config_text(text)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        _set(cfg, key.strip(), value, "--set")
    return cfg


# ---------------------------------------------------------------------------
# builders


def build_model(cfg: Config, dataset=None):
    name = cfg.get_("model", "quadratic")
    d = cfg.get_("d", 1)
    if name == "quadratic":
        return quadratic_model(cfg.get_("kappa", 1.0), d=d, b=cfg.get_("b", 1.0))
    if name == "gaussian_location":
        mu = cfg.get_("mu_x", np.zeros(d))
        return gaussian_location_model(mu, d=mu.size, scale=cfg.get_("data_scale", 1.0))
    if name == "mixture":
        return mixture_prior_model(cfg.get_("prior_m", np.ones(d)))
    if name == "blr":
        if dataset is None:
            raise ConfigError("model 'blr' is only available in the blr command")
        return blr_model(dataset, cfg.get_("prior_m", np.zeros(dataset.d)))
    raise ConfigError(f"unknown model {name!r}")


def build_sampler(cfg: Config, eta: float | None = None, steps: int | None = None,
                  burn_in: int | None = None, beta: float | None = None) -> SamplerConfig:
    try:
        return SamplerConfig(
            eta=cfg["eta"] if eta is None else eta,
            gamma=cfg.get_("gamma", 2.0),
            beta=cfg.get_("beta", 1.0) if beta is None else beta,
            steps=cfg.get_("steps", 0) if steps is None else steps,
            master_seed=cfg.get_("master_seed", 0),
            burn_in=cfg.get("burn_in") if burn_in is None else burn_in,
            thin=cfg.get("thin"),
            noise_enabled=cfg.get_("noise_enabled", True),
        )
    except KeyError as err:
        raise ConfigError(f"missing required key {err.args[0]!r}") from None
    except ValueError as err:
        raise ConfigError(str(err)) from None


def build_initial(cfg: Config, d: int) -> InitialSpec:
    theta0 = cfg.get_("theta0", np.zeros(d))
    v0 = cfg.get_("v0", np.zeros(d))
    if theta0.size == 1 and d > 1:
        theta0 = np.full(d, theta0[0])
    if v0.size == 1 and d > 1:
        v0 = np.full(d, v0[0])
    kind = cfg.get_("init", "point")
    try:
        return InitialSpec(theta0, v0, kind=kind, theta_scale=cfg.get_("theta_scale", 1.0),
                           v_scale=cfg.get_("v_scale", 1.0))
    except ValueError as err:
        raise ConfigError(str(err)) from None


def _wants_params(cfg: Config) -> bool:
    return any(k in cfg for k in PARAM_KEYS if k not in ("n", "z"))


def build_params(cfg: Config, model=None, beta: float | None = None) -> K.ProblemParams:
    """ProblemParams from explicit keys, falling back on the model's declared
    constants when ``params = declared`` (or any key is left out)."""
    vals = {}
    if model is not None:
        dec = model.declared
        vals = {f: getattr(dec, f) for f in _PARAM_FIELDS}
        vals["d"] = model.d
    for f in _PARAM_FIELDS:
        if f in cfg:
            vals[f] = cfg[f]
    if "d" in cfg and model is None:
        vals["d"] = cfg["d"]
    vals.setdefault("d", 1)
    missing = [f for f in _PARAM_FIELDS if f not in vals]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    extra = {k: cfg[k] for k in ("alpha", "W_rho0", "C2_star", "c_LS", "L1_prime", "B1") if k in cfg}
    if "gen_M" in cfg:
        extra["M"] = cfg["gen_M"]
    m0 = cfg.get_("m0", None)
    b_ = cfg.get_("beta", 1.0) if beta is None else beta
    g = cfg.get_("gamma", 2.0)
    try:
        p = K.ProblemParams(gamma=g, beta=b_, m0=0.0 if m0 is None else m0, **vals, **extra)
        if m0 is None and model is not None and model.potential is not None and cfg.get_("init", "point") == "point":
            # E V_0 for a point-mass start
            init = build_initial(cfg, model.d)
            lam, _ = K.lambda_ac(p)
            m0 = lyapunov_value(init.theta0, init.v0, b_, g, lam, model.U)
            p = p.with_(m0=float(m0))
    except ValueError as err:
        raise ConfigError(str(err)) from None
    return p


def _out_dir(cfg: Config, cli_dir) -> Path:
    out = Path(cli_dir or cfg.get_("output_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def _run(model, scfg, cfg, params=None, record_states=None):
    """run_ensemble that returns (result, diverged)."""
    init = build_initial(cfg, model.d)
    try:
        res = run_ensemble(model, scfg, cfg.get_("n_chains", 100), init, record_states=record_states,
                           params=params)
        return res, False
    except EnsembleDivergenceError as err:
        ids = ", ".join(f"{c}@{k}" for c, k in sorted(err.failed.items())[:10])
        print(f"divergence: chain@iteration {ids}", file=sys.stderr)
        return err.partial, True


# ---------------------------------------------------------------------------
# commands


def cmd_constants(cfg: Config, out: Path) -> int:
    p = build_params(cfg)
    eta = cfg.get("eta")
    if eta is not None and not 0 < eta <= 1:
        raise ConfigError("eta must lie in (0, 1]")
    report = K.evaluate_all(p, eta=eta, n=cfg.get("n"))
    K.write_report_csv(report, out / "constants.csv")
    print(f"eta_max = {report['eta_max']:.10g}")
    print(f"gibbs_gap = {report['gibbs_gap']:.10g}")
    return EXIT_OK


def cmd_sample(cfg: Config, out: Path) -> int:
    model = build_model(cfg)
    scfg = build_sampler(cfg)
    params = build_params(cfg, model, scfg.beta) if _wants_params(cfg) else None
    res, diverged = _run(model, scfg, cfg, params, record_states=True)
    cloud = res.terminal_cloud()
    if cloud.size:
        write_cloud_csv(cloud, out / "terminal_cloud.csv", _cloud_header(model.d))
    lam = K.lambda_ac(params)[0] if params is not None else 0.25
    if diverged and len(res.failed) == res.n_chains:
        # every chain failed: keep the iterations before the first failure
        rows = res.iterations < min(res.failed.values())
        res = replace(res, iterations=res.iterations[rows], states=res.states[rows], failed={})
    try:
        series = track_moments(res, scfg.beta, scfg.gamma, lam, model)
    except ValueError as err:
        print(f"no moment series: {err}", file=sys.stderr)
        return EXIT_DIVERGED if diverged else EXIT_CONFIG
    write_series_csv(series, out / "moments.csv")
    if model.name == "quadratic" and res.states is not None and cloud.size:
        w2p, w2t = stationarity_w2(res, model, scfg.beta)
        _write_rows(out / "stationarity.csv", ("quantity", "value"), [("w2_pooled", w2p), ("w2_terminal", w2t)])
        print(f"W2(pooled fit, target) = {w2p:.4g}, W2(terminal fit, target) = {w2t:.4g}")
    if params is not None and len(series):
        rows = _sample_checks(series, params, scfg, cfg.get_("z", 4.0))
        _write_rows(out / "checks.csv", ("check", "statistic", "threshold", "passed"), rows)
        for row in rows:
            print(f"{row[0]}: {'pass' if row[3] else 'FAIL'} ({row[1]:.4g} vs {row[2]:.4g})")
    return EXIT_DIVERGED if diverged else EXIT_OK


def quadratic_target(kappa: float, beta: float, d: int) -> GaussianMoments:
    """Extended Gibbs law of U = kappa |theta|^2 / 2: N(0, diag(1/(beta kappa), 1/beta))."""
    return GaussianMoments(np.zeros(2 * d), np.diag(np.r_[np.full(d, 1 / (beta * kappa)), np.full(d, 1 / beta)]))


def stationarity_w2(res, model, beta: float) -> tuple[float, float]:
    """W2 from the fitted Gaussian of the pooled post-burn-in states, and of
    the terminal cloud, to the exact target of a quadratic model."""
    target = quadratic_target(model.extras["kappa"], beta, model.d)
    return (w2_gaussian(fit_gaussian(res.pooled_cloud()), target),
            w2_gaussian(fit_gaussian(res.terminal_cloud()), target))


def _cloud_header(d: int) -> list[str]:
    return [f"theta_{i + 1}" for i in range(d)] + [f"v_{i + 1}" for i in range(d)]


def _sample_checks(series, p: K.ProblemParams, scfg: SamplerConfig, z: float):
    lam, A_c = K.lambda_ac(p)
    k = K.k_constants(p, lam, A_c)
    kb = K.kbar_and_d(p, lam, A_c)
    mb = K.moment_bounds(p, lam, A_c)
    rows = []
    if len(series) >= 2 and not np.all(np.isnan(series.m2)):
        dr = check_drift(series, p.gamma, lam, scfg.eta, k["K3"], z=z)
        rows.append(("drift_violations", float(dr.n_violations), float(dr.budget), dr.passed))
    vsq = p.m0**2 + 2 * kb["D"] / (p.gamma * lam)
    mbr = check_moment_bounds(series, mb["C_theta"], mb["C_v"], mb["C_zeta"], vsq, z=z)
    for c in mbr.checks:
        rows.append((f"bound_{c.name}", c.worst_margin, z, c.passed))
    return rows


def _chain_bootstrap_se(states: np.ndarray, target: GaussianMoments, n_boot: int, seed: int) -> float:
    # resample whole chains, which keeps the within-chain correlation
    R, C, k = states.shape
    rng = np.random.default_rng(seed)
    # per-chain sufficient statistics
    s1 = states.sum(axis=0)  # (C, k)
    s2 = np.einsum("rci,rcj->cij", states, states)
    vals = []
    for _ in range(n_boot):
        idx = rng.integers(0, C, C)
        n = R * C
        mean = s1[idx].sum(axis=0) / n
        cov = s2[idx].sum(axis=0) / n - np.outer(mean, mean)
        vals.append(w2_gaussian(GaussianMoments(mean, 0.5 * (cov + cov.T)), target))
    return float(np.std(vals, ddof=1))


@dataclass
class ScalingRow:
    eta: float
    w2_moment: float
    w2_assign: float
    mc_se: float


def scaling_rows(cfg: Config, out: Path | None = None) -> tuple[list[ScalingRow], bool, list]:
    """One ensemble per step size at fixed physical time; largest eta first.

    A diverged step size yields a row of NaNs and the sweep continues with
    the smaller ones; the returned flag reports whether any run diverged.
    """
    model = build_model(cfg)
    if cfg.get_("model", "quadratic") != "quadratic":
        raise ConfigError("scaling needs the quadratic model (closed-form target)")
    cfg.need("eta_list")
    kappa = cfg.get_("kappa", 1.0)
    beta = cfg.get_("beta", 1.0)
    T = cfg.get_("physical_time", 2000.0)
    T0 = cfg.get_("burn_in_time", 0.1 * T)
    ref_n = cfg.get_("reference_size", 1000)
    d = model.d
    target = quadratic_target(kappa, beta, d)
    rows, results = [], []
    any_diverged = False
    for eta in sorted(cfg["eta_list"], reverse=True):
        steps = int(round(T / eta))
        burn = min(int(round(T0 / eta)), steps)
        scfg = build_sampler(cfg, eta=float(eta), steps=steps, burn_in=burn)
        res, diverged = _run(model, scfg, cfg, record_states=True)
        if diverged:
            any_diverged = True
            rows.append(ScalingRow(float(eta), math.nan, math.nan, math.nan))
            continue
        results.append(res)
        states = res.states
        pooled = states.reshape(-1, 2 * d)
        w2m = w2_gaussian(fit_gaussian(pooled), target)
        # evenly spaced subsample of the pooled cloud against exact reference draws
        take = np.linspace(0, pooled.shape[0] - 1, min(ref_n, pooled.shape[0])).astype(int)
        ref = sample_extended_quadratic(kappa, beta, take.size, seed=cfg.get_("master_seed", 0) + 1, d=d)
        w2a, _ = w2_assignment(pooled[take], ref)
        se = _chain_bootstrap_se(states, target, cfg.get_("bootstrap", 200), cfg.get_("master_seed", 0))
        rows.append(ScalingRow(float(eta), w2m, w2a, se))
    return rows, any_diverged, results


_PLOT_SCRIPT = '''\
# Log-log plot of the W2 error against the step size.
# Run with: python plot_scaling.py  (needs matplotlib)
import csv
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open("scaling.csv")))
eta = [float(r["eta"]) for r in rows]
fig, ax = plt.subplots()
for col in ("w2_moment", "w2_assign"):
    ax.loglog(eta, [float(r[col]) for r in rows], "o-", label=col)
ax.errorbar(eta, [float(r["w2_moment"]) for r in rows], yerr=[2 * float(r["mc_se"]) for r in rows],
            fmt="none", ecolor="k")
ax.set_xlabel("eta")
ax.set_ylabel("W2 to the extended Gibbs target")
ax.legend()
fig.savefig("scaling.png", dpi=150)
'''


def cmd_scaling(cfg: Config, out: Path) -> int:
    rows, diverged, _ = scaling_rows(cfg)
    _write_rows(out / "scaling.csv", ("eta", "w2_moment", "w2_assign", "mc_se"),
                [(r.eta, r.w2_moment, r.w2_assign, r.mc_se) for r in rows])
    (out / "plot_scaling.py").write_text(_PLOT_SCRIPT)
    good = [r for r in rows if np.isfinite(r.w2_moment)]
    if len(good) >= 2:
        fit = linregress(np.log([r.eta for r in good]), np.log([r.w2_moment for r in good]))
        print(f"log-log slope = {fit.slope:.4f}")
    return EXIT_DIVERGED if diverged else EXIT_OK


def optimize_series(cfg: Config, beta: float | None = None):
    """(k, mean U(theta_k) - U_*, se, bound) rows for one ensemble run."""
    model = build_model(cfg)
    if model.potential is None:
        raise ConfigError(f"model {model.name!r} has no potential")
    u_star = model.extras.get("U_star", 0.0)
    scfg = build_sampler(cfg, beta=beta)
    res, diverged = _run(model, scfg, cfg, record_states=True)
    keep = np.array([c not in res.failed for c in res.chain_ids])
    th = res.states[:, keep, : model.d]
    R, C, d = th.shape
    sub = model.U(th.reshape(R * C, d)).reshape(R, C) - u_star
    mean = sub.mean(axis=1)
    se = sub.std(axis=1, ddof=1) / math.sqrt(C) if C > 1 else np.zeros(R)
    bound = np.full(R, np.nan)
    if _wants_params(cfg) or cfg.get_("params", "") == "declared":
        p = build_params(cfg, model, scfg.beta)
        if scfg.eta > 0:
            eta_b = min(scfg.eta, 1.0)
            bound = np.array([K.optimization_bound(p, eta_b, float(k)).total for k in res.iterations])
    return res.iterations, mean, se, bound, diverged


def cmd_optimize(cfg: Config, out: Path) -> int:
    k, mean, se, bound, diverged = optimize_series(cfg)
    _write_rows(out / "optimize.csv", ("k", "subopt", "se", "bound"),
                [(int(a), float(b), float(c), float(e)) for a, b, c, e in zip(k, mean, se, bound)])
    if len(k):
        print(f"terminal mean suboptimality = {mean[-1]:.6g} +- {se[-1]:.2g}")
    return EXIT_DIVERGED if diverged else EXIT_OK


def _blr_data(cfg: Config):
    K_ = cfg.get_("K", 32)
    seed = cfg.get_("data_seed", 0)
    if "data_file" in cfg:
        try:
            data = read_blr_csv(cfg["data_file"], 1)
            # test_size holds out the last rows of the file
            n_test = cfg.get_("test_size", 0)
            if not 0 <= n_test < data.M:
                raise ValueError(f"test_size must lie in [0, {data.M})")
            n_train = data.M - n_test
            train = BLRDataset(data.z[:n_train], data.y[:n_train], K_)
            test = BLRDataset(data.z[n_train:], data.y[n_train:]) if n_test else None
        except (OSError, ValueError) as err:
            raise ConfigError(f"bad dataset: {err}") from None
    else:
        cfg.need("M", "theta_true")
        try:
            train = blr_synthetic_data(cfg["M"], cfg["theta_true"].size, cfg["theta_true"], seed, K=K_)
        except ValueError as err:
            raise ConfigError(str(err)) from None
        test = blr_synthetic_data(cfg.get_("test_size", 10_000), train.d, cfg["theta_true"], seed + 1)
    return train, test


def blr_fit_mle(train) -> np.ndarray:
    """Maximum-likelihood logistic regression (no prior)."""
    z, y = train.z, train.y

    def nll(w):
        s = z @ w
        return np.sum(np.logaddexp(0.0, s) - y * s), z.T @ (expit(s) - y)

    return minimize(nll, np.zeros(train.d), jac=True, method="BFGS").x


def accuracy(w: np.ndarray, data) -> float:
    return float(np.mean(((data.z @ w) > 0).astype(float) == data.y))


def blr_experiment(cfg: Config) -> dict:
    train, test = _blr_data(cfg)
    if test is None:
        test = train
    cfg = Config(cfg)
    cfg.setdefault("d", train.d)
    model = build_model(Config({**cfg, "model": "blr"}), dataset=train)
    mode = cfg.get_("unbiasedness", "auto")
    if mode == "auto":
        mode = "exhaustive" if math.comb(train.M + train.K - 1, train.K) <= 20_000 else "monte_carlo"
    unb = check_unbiasedness(model, np.zeros(train.d), mode=mode, seed=cfg.get_("master_seed", 0),
                             n_samples=10_000)
    scfg = build_sampler(cfg)
    res, diverged = _run(model, scfg, cfg, record_states=True)
    pooled = res.pooled_cloud()[:, : train.d] if res.states is not None else res.terminal_cloud()[:, : train.d]
    post_mean = pooled.mean(axis=0)
    full_batch_dev = None
    if train.K == train.M and pooled.size:
        # K = M: the minibatch of every index must reproduce the full gradient along the run
        every = np.broadcast_to(np.arange(train.M), (pooled.shape[0], train.M))
        h = model.h(pooled)
        full_batch_dev = float(np.max(np.abs(model.H(pooled, every) - h)) / (1.0 + np.max(np.abs(h))))
    w_mle = blr_fit_mle(train)
    return {
        "posterior_mean": post_mean, "mle": w_mle, "accuracy": accuracy(post_mean, test),
        "mle_accuracy": accuracy(w_mle, test), "unbiasedness": unb, "result": res, "diverged": diverged,
        "d": train.d, "full_batch_deviation": full_batch_dev,
    }


def cmd_blr(cfg: Config, out: Path) -> int:
    r = blr_experiment(cfg)
    rows = [("accuracy", r["accuracy"]), ("mle_accuracy", r["mle_accuracy"]),
            ("unbiasedness_mode", r["unbiasedness"].mode),
            ("unbiasedness_deviation", r["unbiasedness"].deviation),
            ("unbiasedness_tolerance", r["unbiasedness"].tolerance),
            ("unbiasedness_passed", r["unbiasedness"].passed)]
    if r["full_batch_deviation"] is not None:
        rows += [("full_batch_deviation", r["full_batch_deviation"]),
                 ("full_batch_consistent", r["full_batch_deviation"] < 1e-12)]
    rows += [(f"posterior_mean_{i + 1}", float(x)) for i, x in enumerate(r["posterior_mean"])]
    rows += [(f"mle_{i + 1}", float(x)) for i, x in enumerate(r["mle"])]
    _write_rows(out / "blr_summary.csv", ("quantity", "value"), rows)
    cloud = r["result"].terminal_cloud()
    if cloud.size:
        write_cloud_csv(cloud, out / "terminal_cloud.csv", _cloud_header(r["d"]))
    print(f"posterior-mean accuracy = {r['accuracy']:.4f}, MLE accuracy = {r['mle_accuracy']:.4f}")
    return EXIT_DIVERGED if r["diverged"] else EXIT_OK


COMMANDS = {"constants": cmd_constants, "sample": cmd_sample, "scaling": cmd_scaling,
            "optimize": cmd_optimize, "blr": cmd_blr}

_EPILOG = textwrap.dedent("""\
    output files (CSV, header row first):
      constants   constants.csv       name, value, log10_value, formula_ref
      sample      moments.csv         k, m2, m2_se, th2, th2_se, v2, v2_se, vsq, vsq_se
                  terminal_cloud.csv  theta_1..theta_d, v_1..v_d
                  checks.csv          check, statistic, threshold, passed  (when constants are given)
                  stationarity.csv    quantity, value  (quadratic model: W2 to the exact target)
      scaling     scaling.csv         eta, w2_moment, w2_assign, mc_se
                  plot_scaling.py     matplotlib script for the log-log plot
      optimize    optimize.csv        k, subopt, se, bound
      blr         blr_summary.csv     quantity, value
                  terminal_cloud.csv  theta_1..theta_d, v_1..v_d

    exit codes: 0 success, 2 configuration or input error, 3 numerical divergence.
    KINETIC_GIBBS_THREADS sets the number of worker threads for chain groups.
    """)


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kinetic-gibbs", description=__doc__.split("\n\n")[0],
                                 epilog=_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config", help="flat key = value config file")
    ap.add_argument("-o", "--output-dir", default=None, help="overrides the output_dir key")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        out = _out_dir(cfg, args.output_dir)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
