"""Explicit constants of the SGHMC convergence analysis.

All functions are pure.  The reflection-coupling contraction constants involve
factors like e^Lambda with Lambda linear in d, so they are evaluated in log
space; a value too large for a double is reported as ``inf`` with an
overflow flag, never as NaN.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

__all__ = [
    "ProblemParams",
    "Entry",
    "ConstantsReport",
    "P0",
    "lambda_ac",
    "k_constants",
    "kbar_and_d",
    "eta_max",
    "eta_max_branches",
    "moment_bounds",
    "sigma_constants",
    "contraction_constants",
    "convergence_constants",
    "gibbs_gap",
    "optimization_bound",
    "generalization_bound",
    "evaluate_all",
    "write_report_csv",
    "read_report_csv",
]


@dataclass(frozen=True)
class ProblemParams:
    L1: float
    L2: float
    rho: float
    C_rho: float
    H0: float
    h0: float
    u0: float
    L1_bar: float
    a: float
    b: float
    gamma: float
    beta: float
    d: int
    sigma_Z: float
    m0: float = 0.0  # E V(theta_0, v_0)
    alpha: float = 1.0
    W_rho0: float | None = None
    C2_star: float | None = None
    c_LS: float | None = None
    L1_prime: float | None = None
    B1: float | None = None
    M: float | None = None

    def __post_init__(self):
        positive = {"a": self.a, "b": self.b, "gamma": self.gamma, "beta": self.beta, "alpha": self.alpha}
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be > 0, got {value}")
        for name in ("L1", "L2", "H0", "h0", "u0", "L1_bar", "sigma_Z", "m0"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if self.C_rho < 1:
            raise ValueError("C_rho = E(1+|X|)^(4(rho+1)) is at least 1")
        if self.d < 1:
            raise ValueError("d must be >= 1")

    def with_(self, **kw) -> "ProblemParams":
        return replace(self, **kw)

    @classmethod
    def from_model(cls, model, gamma: float, beta: float, **kw) -> "ProblemParams":
        """Problem parameters built from a model's declared constants."""
        dec = model.declared
        return cls(L1=dec.L1, L2=dec.L2, rho=dec.rho, C_rho=dec.C_rho, H0=dec.H0, h0=dec.h0,
                   u0=dec.u0, L1_bar=dec.L1_bar, a=dec.a, b=dec.b, gamma=gamma, beta=beta,
                   d=model.d, sigma_Z=dec.sigma_Z, **kw)


# reference parameter set used throughout the tests
P0 = ProblemParams(L1=1, L2=1, rho=0, C_rho=1, H0=1, h0=1, u0=0, L1_bar=1, a=1, b=1,
                   gamma=2, beta=1, d=1, sigma_Z=1, m0=0, alpha=1)


@dataclass(frozen=True)
class Entry:
    name: str
    value: float
    log10_value: float
    formula_ref: str
    flags: tuple[str, ...] = ()


def _log10(x: float) -> float:
    if x > 0:
        return math.log10(x)
    if x == 0:
        return -math.inf
    return math.nan


def _exp_safe(log_value: float) -> tuple[float, bool]:
    try:
        return math.exp(log_value), False
    except OverflowError:
        return math.inf, True


def lambda_ac(p: ProblemParams) -> tuple[float, float]:
    """Contraction parameter lambda in (0, 1/4] and the additive constant A_c."""
    lam = min(0.25, p.a / (p.L1_bar + 2 * p.L1_bar * p.b + p.gamma**2 / 2))
    A_c = p.beta / 2 * (p.b + 2 * lam * p.u0 + 2 * lam * p.L1_bar * p.b)
    return lam, A_c


def k_constants(p: ProblemParams, lam: float, A_c: float) -> dict[str, float]:
    """Coefficients of the first-moment Lyapunov recursion."""
    L1_tilde = 2 * p.L1**2 * p.C_rho
    C1_tilde = 4 * p.L2**2 * p.C_rho + 4 * p.H0**2
    q = 1 - 2 * lam
    K1 = max(
        (p.L1 * p.C_rho / 2 + p.gamma**2 / 4 - p.gamma**2 * lam / 4 + p.gamma / 4) / (q / 8),
        (L1_tilde / 2 + p.gamma / 2 * p.L1 * p.C_rho**2) / (q * p.gamma**2 / 16),
    )
    K2 = (C1_tilde + p.gamma * p.h0**2) / 2
    K3 = (A_c + p.d) * p.gamma / p.beta
    return {"L1_tilde": L1_tilde, "C1_tilde": C1_tilde, "K1": K1, "K2": K2, "K3": K3}


def kbar_and_d(p: ProblemParams, lam: float, A_c: float) -> dict[str, float]:
    """Coefficients of the second-moment (V squared) recursion, K_bar and D.

    The printed hat-c1 uses L2 unsquared and hat-c5 names an undefined L4;
    hat-c1 is evaluated as printed and hat-c5 with L2 in place of L4.
    """
    g, b_, d = p.gamma, p.beta, p.d
    L1, L2, Cr, H0, h0 = p.L1, p.L2, p.C_rho, p.H0, p.h0
    q = 1 - 2 * lam
    out = {}
    out["K1_tilde"] = max((L1 * Cr / 2 + g**2 / 4 - g**2 * lam / 4) / (q / 8),
                          L1**2 * Cr / (q * g**2 / 16))
    out["c1_tilde"] = g * A_c + g * d
    out["c1_hat"] = 2 * L2 * Cr + 2 * H0**2
    out["c2_tilde"] = 6 * g**2 * A_c**2
    out["c3_tilde"] = 9 * g**2 / 8 + 18 * (g + 2) ** 2 * (L1**4 * Cr**4 + L1**4 * Cr)
    out["c3_hat"] = 18 * L1**4 * Cr
    out["c4_tilde"] = 6 * (1 + lam * g - g) ** 2 / 4
    out["c4_hat"] = 6 * (L1 * Cr / 2 + g / 4 + 0.5) ** 2
    out["c5_tilde"] = (g + 2) ** 2 * (30 * h0**4 + 120 * L2**4 + 120 * H0**4 + 30 * L2**4 * Cr + 30 * H0**4)
    out["c5_hat"] = 48 * (L2**4 + H0**4)
    out["c6_tilde"] = g**2 * d * (d + 2)
    out["c7_tilde"] = max(10 * g * d / (q / 8),
                          (2 * g * d) * (6 * L1**2 * Cr + 3 * g**2 + 9 * L1**2 * Cr) / (q * g**2 / 16))
    out["c8_tilde"] = 30 * g * d * L2**2 * Cr + 30 * g * d * H0**2
    out["c9_tilde"] = max((out["c3_tilde"] + out["c3_hat"]) / (q**2 * g**4 / 128),
                          (out["c4_hat"] + out["c4_tilde"]) / (q**2 / 32))
    out["c10_tilde"] = 2 * out["c1_tilde"] + out["c7_tilde"]
    out["c11_tilde"] = p.m0 + 4 * (A_c + d) / (g * lam)
    out["K2_tilde"] = out["K1_tilde"] + out["c9_tilde"]
    out["K_bar"] = 2 * out["K2_tilde"]
    out["D"] = (out["c10_tilde"] * out["c11_tilde"] + 2 * out["c1_hat"] * b_ + out["c2_tilde"]
                + (out["c5_hat"] + out["c5_tilde"]) * b_**2 + out["c6_tilde"] + out["c8_tilde"] * b_)
    return out


def eta_max_branches(p: ProblemParams) -> dict[str, float]:
    lam, A_c = lambda_ac(p)
    k = k_constants(p, lam, A_c)
    kb = kbar_and_d(p, lam, A_c)
    gl = p.gamma * lam
    return {
        "one": 1.0,
        "two_over_gamma_lambda": 2 / gl,
        "gamma_lambda_over_2K1": gl / (2 * k["K1"]),
        "K3_over_K2": k["K3"] / k["K2"] if k["K2"] > 0 else math.inf,
        "gamma_lambda_over_2Kbar": gl / (2 * kb["K_bar"]),
    }


def eta_max(p: ProblemParams) -> float:
    """Largest step size covered by the convergence bound."""
    return min(eta_max_branches(p).values())


def moment_bounds(p: ProblemParams, lam: float, A_c: float) -> dict[str, float]:
    q = 1 - 2 * lam
    theta_den = q * p.beta * p.gamma**2 / 8
    v_den = q * p.beta / 4
    cont = p.m0 + (p.d + A_c) / lam
    disc = p.m0 + 4 * (A_c + p.d) / lam
    aux = p.m0 + 8 * (p.d + A_c) / lam
    return {
        "C_theta_c": cont / theta_den,
        "C_v_c": cont / v_den,
        "C_theta": disc / theta_den,
        "C_v": disc / v_den,
        "C_zeta": aux / theta_den,
    }


def sigma_constants(p: ProblemParams, C_zeta: float, C_theta: float, C_v: float, eta: float,
                    L1_tilde: float | None = None, C1_tilde: float | None = None) -> dict[str, float]:
    if eta <= 0:
        raise ValueError("eta must be > 0")
    if L1_tilde is None:
        L1_tilde = 2 * p.L1**2 * p.C_rho
    if C1_tilde is None:
        C1_tilde = 4 * p.L2**2 * p.C_rho + 4 * p.H0**2
    sigma_H = 8 * p.L2**2 * p.sigma_Z * (1 + C_zeta)
    sigma_V = 4 * eta * p.gamma**2 * C_v + 4 * eta * (L1_tilde * C_theta + C1_tilde) + 4 * p.gamma / p.beta * p.d
    return {"sigma_H": sigma_H, "sigma_V": sigma_V}


def contraction_constants(p: ProblemParams, lam: float, A_c: float) -> dict[str, float]:
    """Lambda, R1, the contraction rate c_dot and prefactor C_dot, with
    natural logs of c_dot and C_dot under ``log_c_dot``/``log_C_dot``."""
    al = p.alpha
    poly = 1 + 2 * al + 2 * al**2
    Lam = 12 / 5 * poly * (p.d + A_c) * p.L1_bar / p.beta / p.gamma**2 / lam / (1 - 2 * lam)
    R1 = math.sqrt(8 * Lam / p.L1_bar)
    scale = p.L1_bar / p.beta / p.gamma**2
    # logs of the three arguments of the min
    logs = [math.log(lam * scale), 0.5 * math.log(Lam) - Lam + math.log(scale), 0.5 * math.log(Lam) - Lam]
    log_c_dot = math.log(p.gamma / 384) + min(logs)
    c_dot = math.exp(log_c_dot)  # underflow to 0.0 is tolerated
    # log of 4 poly (d+A_c) / (gamma c_dot min(1,R1) beta), with c_dot from its log
    log_inner = (math.log(4 * poly * (p.d + A_c)) - math.log(p.gamma) - log_c_dot
                 - math.log(min(1.0, R1) * p.beta))
    log_C_dot = (math.log(2) + 2 + Lam + 2 * math.log(1 + p.gamma) - 2 * math.log(min(1.0, al))
                 + max(0.0, log_inner))
    C_dot, overflow = _exp_safe(log_C_dot)
    return {"Lambda": Lam, "R1": R1, "c_dot": c_dot, "C_dot": C_dot,
            "log_c_dot": log_c_dot, "log_C_dot": log_C_dot, "C_dot_overflow": overflow}


def convergence_constants(p: ProblemParams, eta: float) -> dict[str, float | None]:
    """Constants of the W2 bound C1* eta^1/2 + C2* eta^1/4 + C3* e^{-C4* eta n}.

    C2* has no closed form and is passed through from ``p.C2_star``; C3*
    needs the user-supplied W_rho(mu_0, pi_bar) and is None without it.
    """
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    lam, A_c = lambda_ac(p)
    k = k_constants(p, lam, A_c)
    mb = moment_bounds(p, lam, A_c)
    sg = sigma_constants(p, mb["C_zeta"], mb["C_theta"], mb["C_v"], eta, k["L1_tilde"], k["C1_tilde"])
    eb = contraction_constants(p, lam, A_c)
    g = p.gamma
    log_c1 = 4 * g**2
    c1, _ = _exp_safe(log_c1)
    # C*_{1,1} = sqrt(exp(4 L1^2 C_rho) * 4 c1 (sigma_V + sigma_H + eta sigma_H)), in logs
    inner = sg["sigma_V"] + sg["sigma_H"] + eta * sg["sigma_H"]
    log_C11 = 0.5 * (4 * p.L1**2 * p.C_rho + math.log(4) + log_c1 + math.log(inner))
    C11, _ = _exp_safe(log_C11)
    if sg["sigma_H"] > 0:
        log_C12 = 0.5 * (2 * g**2 + math.log(sg["sigma_H"] * (1 + eta)))
        C12, _ = _exp_safe(log_C12)
    else:
        log_C12, C12 = -math.inf, 0.0
    C3 = None
    log_C3 = None
    if p.W_rho0 is not None:
        if p.W_rho0 == 0:
            C3, log_C3 = 0.0, -math.inf
        else:
            log_C3 = 0.5 * (eb["log_C_dot"] + math.log(p.W_rho0))
            C3, _ = _exp_safe(log_C3)
    log_C1 = float(np.logaddexp(log_C11, log_C12))
    C1, _ = _exp_safe(log_C1)
    return {
        "c1": c1, "C11_star": C11, "C12_star": C12, "C1_star": C1, "log_C1_star": log_C1,
        "C2_star": p.C2_star, "C3_star": C3, "C4_star": eb["c_dot"] / 2,
        "log_C11_star": log_C11, "log_C12_star": log_C12, "log_C3_star": log_C3,
        "log_C4_star": eb["log_c_dot"] - math.log(2),
    }


def gibbs_gap(p: ProblemParams) -> float:
    """Excess of E U under pi_beta over the global minimum of U."""
    return p.d / (2 * p.beta) * math.log(math.e * p.L1_bar / p.a * (p.b * p.beta / p.d + 1))


@dataclass(frozen=True)
class BoundTerms:
    terms: dict[str, float]

    @property
    def total(self) -> float:
        return sum(self.terms.values())


def _decaying_terms(p: ProblemParams, eta: float, n: float, thm: dict, mb: dict) -> dict[str, float]:
    C_m = max(mb["C_theta_c"], mb["C_theta"])
    mult = C_m * p.L1_bar + p.h0
    terms = {"C1bar_eta_half": thm["C1_star"] * mult * eta**0.5}
    if thm["C2_star"] is not None:
        terms["C2bar_eta_quarter"] = thm["C2_star"] * mult * eta**0.25
    if thm["C3_star"] is not None:
        terms["C3bar_exp"] = thm["C3_star"] * mult * math.exp(-thm["C4_star"] * eta * n) if thm["C3_star"] else 0.0
    return terms


def optimization_bound(p: ProblemParams, eta: float, n: float) -> BoundTerms:
    """Upper bound on E U(theta_n) - U_* split into its addends.

    Terms needing C2* or W_rho(mu_0, pi_bar) appear only when those are
    supplied in ``p``.
    """
    lam, A_c = lambda_ac(p)
    mb = moment_bounds(p, lam, A_c)
    thm = convergence_constants(p, eta)
    terms = _decaying_terms(p, eta, n, thm, mb)
    terms["gibbs_gap"] = gibbs_gap(p)
    return BoundTerms(terms)


def optimization_multiplier(p: ProblemParams) -> float:
    """C_m L1_bar + h0, the factor turning W2 constants into function-value ones."""
    lam, A_c = lambda_ac(p)
    mb = moment_bounds(p, lam, A_c)
    return max(mb["C_theta_c"], mb["C_theta"]) * p.L1_bar + p.h0


def generalization_bound(p: ProblemParams, eta: float, n: float) -> BoundTerms:
    """B1 + B2 + B3 bound on the expected population excess risk."""
    missing = [k for k in ("c_LS", "L1_prime", "B1", "M") if getattr(p, k) is None]
    if missing:
        raise ValueError(f"generalization bound needs {', '.join(missing)}")
    lam, A_c = lambda_ac(p)
    mb = moment_bounds(p, lam, A_c)
    thm = convergence_constants(p, eta)
    B1 = sum(_decaying_terms(p, eta, n, thm, mb).values())
    B2 = 4 * p.beta * p.c_LS / p.M * (p.L1_prime / p.a * (p.b + p.d / p.beta) + p.B1)
    return BoundTerms({"B1": B1, "B2": B2, "B3": gibbs_gap(p)})


# ---------------------------------------------------------------------------
# report

_REFS = {
    "lambda": "min{1/4, a/(L1bar + 2 L1bar b + gamma^2/2)}",
    "A_c": "(beta/2)(b + 2 lambda u0 + 2 lambda L1bar b)",
    "L1_tilde": "2 L1^2 C_rho",
    "C1_tilde": "4 L2^2 C_rho + 4 H0^2",
    "K1": "K1 max of two ratios",
    "K2": "(C1_tilde + gamma h0^2)/2",
    "K3": "(A_c + d) gamma / beta",
    "K1_tilde": "K1_tilde max of two ratios",
    "c1_tilde": "gamma A_c + gamma d",
    "c1_hat": "2 L2 C_rho + 2 H0^2 [as printed; L2 unsquared, suspected typo]",
    "c2_tilde": "6 gamma^2 A_c^2",
    "c3_tilde": "9 gamma^2/8 + 18 (gamma+2)^2 (L1^4 C_rho^4 + L1^4 C_rho)",
    "c3_hat": "18 L1^4 C_rho",
    "c4_tilde": "6 (1 + lambda gamma - gamma)^2 / 4",
    "c4_hat": "6 (L1 C_rho/2 + gamma/4 + 1/2)^2",
    "c5_tilde": "(gamma+2)^2 (30 h0^4 + 120 L2^4 + 120 H0^4 + 30 L2^4 C_rho + 30 H0^4)",
    "c5_hat": "48 (L4^4 + H0^4) [L4 undefined, evaluated with L2; suspected typo]",
    "c6_tilde": "gamma^2 d (d+2)",
    "c7_tilde": "c7_tilde max of two ratios",
    "c8_tilde": "30 gamma d L2^2 C_rho + 30 gamma d H0^2",
    "c9_tilde": "c9_tilde max of two ratios",
    "c10_tilde": "2 c1_tilde + c7_tilde",
    "c11_tilde": "E V_0 + 4 (A_c + d)/(gamma lambda)",
    "K2_tilde": "K1_tilde + c9_tilde",
    "K_bar": "2 K2_tilde",
    "D": "c10 c11 + 2 c1_hat beta + c2 + (c5_hat + c5) beta^2 + c6 + c8 beta",
    "eta_max": "min{1, 2/(gamma lambda), gamma lambda/(2 K1), K3/K2, gamma lambda/(2 K_bar)}",
    "C_theta_c": "(m0 + (d + A_c)/lambda) / ((1-2 lambda) beta gamma^2/8)",
    "C_v_c": "(m0 + (d + A_c)/lambda) / ((1-2 lambda) beta/4)",
    "C_theta": "(m0 + 4 (A_c + d)/lambda) / ((1-2 lambda) beta gamma^2/8)",
    "C_v": "(m0 + 4 (A_c + d)/lambda) / ((1-2 lambda) beta/4)",
    "C_zeta": "(m0 + 8 (A_c + d)/lambda) / ((1-2 lambda) beta gamma^2/8)",
    "Vsq_bound": "E V_0^2 + 2 D/(gamma lambda)",
    "sigma_H": "8 L2^2 sigma_Z (1 + C_zeta)",
    "sigma_V": "4 eta gamma^2 C_v + 4 eta (L1_tilde C_theta + C1_tilde) + 4 gamma d / beta",
    "Lambda": "(12/5)(1+2 alpha+2 alpha^2)(d+A_c) L1bar / (beta gamma^2 lambda (1-2 lambda))",
    "R1": "sqrt(8 Lambda / L1bar)",
    "c_dot": "(gamma/384) min(...)",
    "C_dot": "2 e^{2+Lambda} (1+gamma)^2/min(1,alpha)^2 max(1, ...)",
    "c1": "exp(4 gamma^2)",
    "C11_star": "sqrt(exp(4 L1^2 C_rho)(4 c1 sigma_V + 4 c1 sigma_H + 4 c1 eta sigma_H))",
    "C12_star": "sqrt(exp(2 gamma^2) sigma_H (1+eta))",
    "C1_star": "C11_star + C12_star",
    "C2_star": "no closed form; user supplied",
    "C3_star": "sqrt(C_dot W_rho(mu0, nu0))",
    "C4_star": "c_dot / 2",
    "C_m": "max(C_theta_c, C_theta)",
    "C1bar_star": "C1_star (C_m L1bar + h0)",
    "C2bar_star": "C2_star (C_m L1bar + h0)",
    "C3bar_star": "C3_star (C_m L1bar + h0)",
    "gibbs_gap": "(d/(2 beta)) log(e L1bar/a (b beta/d + 1))",
    "gen_bound_B2": "(4 beta c_LS/M)(L1'/a (b + d/beta) + B1)",
    "gen_bound": "B1 + B2 + B3",
}

_SUSPECT = {"c1_hat": ("suspected_typo",), "c5_hat": ("suspected_typo",)}


@dataclass
class ConstantsReport:
    entries: dict[str, Entry] = field(default_factory=dict)

    def add(self, name: str, value, log_value: float | None = None, flags: Iterable[str] = ()) -> None:
        if value is None:
            self.entries[name] = Entry(name, math.nan, math.nan, _REFS.get(name, ""), ("unavailable",))
            return
        value = float(value)
        flags = tuple(flags) + _SUSPECT.get(name, ())
        if math.isinf(value):
            flags += ("overflow",)
        lg = log_value / math.log(10) if log_value is not None else _log10(value)
        self.entries[name] = Entry(name, value, lg, _REFS.get(name, ""), flags)

    def __getitem__(self, name: str) -> float:
        return self.entries[name].value

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def names(self) -> list[str]:
        return list(self.entries)


def evaluate_all(p: ProblemParams, eta: float | None = None, n: float | None = None,
                 Vsq0: float | None = None) -> ConstantsReport:
    """Every explicit constant for ``p``.

    ``eta`` defaults to eta_max; ``Vsq0`` is E V(theta_0, v_0)^2 for the
    second-moment bound and defaults to m0^2 (exact for point-mass starts).
    ``n`` (iteration count) adds the optimisation and generalisation bounds.
    """
    rep = ConstantsReport()
    lam, A_c = lambda_ac(p)
    rep.add("lambda", lam)
    rep.add("A_c", A_c)
    k = k_constants(p, lam, A_c)
    for name in ("L1_tilde", "C1_tilde", "K1", "K2", "K3"):
        rep.add(name, k[name])
    kb = kbar_and_d(p, lam, A_c)
    for name in ("K1_tilde", "c1_tilde", "c2_tilde", "c3_tilde", "c4_tilde", "c5_tilde", "c6_tilde",
                 "c7_tilde", "c8_tilde", "c9_tilde", "c10_tilde", "c11_tilde",
                 "c1_hat", "c3_hat", "c4_hat", "c5_hat", "K2_tilde", "K_bar", "D"):
        rep.add(name, kb[name])
    em = eta_max(p)
    rep.add("eta_max", em)
    eta = em if eta is None else eta
    mb = moment_bounds(p, lam, A_c)
    for name, value in mb.items():
        rep.add(name, value)
    Vsq0 = p.m0**2 if Vsq0 is None else Vsq0
    rep.add("Vsq_bound", Vsq0 + 2 * kb["D"] / (p.gamma * lam))
    sg = sigma_constants(p, mb["C_zeta"], mb["C_theta"], mb["C_v"], eta, k["L1_tilde"], k["C1_tilde"])
    rep.add("sigma_H", sg["sigma_H"])
    rep.add("sigma_V", sg["sigma_V"])
    eb = contraction_constants(p, lam, A_c)
    rep.add("Lambda", eb["Lambda"])
    rep.add("R1", eb["R1"])
    rep.add("c_dot", eb["c_dot"], eb["log_c_dot"])
    rep.add("C_dot", eb["C_dot"], eb["log_C_dot"])
    thm = convergence_constants(p, eta)
    rep.add("c1", thm["c1"], 4 * p.gamma**2)
    rep.add("C11_star", thm["C11_star"], thm["log_C11_star"])
    rep.add("C12_star", thm["C12_star"], thm["log_C12_star"])
    rep.add("C1_star", thm["C1_star"], thm["log_C1_star"])
    rep.add("C2_star", thm["C2_star"])
    rep.add("C3_star", thm["C3_star"], thm["log_C3_star"])
    rep.add("C4_star", thm["C4_star"], thm["log_C4_star"])
    mult = max(mb["C_theta_c"], mb["C_theta"]) * p.L1_bar + p.h0
    rep.add("C_m", max(mb["C_theta_c"], mb["C_theta"]))
    rep.add("C1bar_star", thm["C1_star"] * mult, thm["log_C1_star"] + math.log(mult))
    rep.add("C2bar_star", None if thm["C2_star"] is None else thm["C2_star"] * mult)
    if thm["C3_star"] is None:
        rep.add("C3bar_star", None)
    else:
        rep.add("C3bar_star", thm["C3_star"] * mult, thm["log_C3_star"] + math.log(mult))
    rep.add("gibbs_gap", gibbs_gap(p))
    if p.c_LS is not None and p.L1_prime is not None and p.B1 is not None and p.M is not None:
        gen = generalization_bound(p, eta, math.inf if n is None else n)
        rep.add("gen_bound_B2", gen.terms["B2"])
        rep.add("gen_bound", gen.total)
    return rep


CSV_COLUMNS = ("name", "value", "log10_value", "formula_ref")


def write_report_csv(report: ConstantsReport, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for e in report.entries.values():
            ref = e.formula_ref + (f" [{';'.join(e.flags)}]" if e.flags else "")
            w.writerow([e.name, repr(e.value), repr(e.log10_value), ref])


def read_report_csv(path) -> dict[str, float]:
    with Path(path).open(newline="") as fh:
        return {row["name"]: float(row["value"]) for row in csv.DictReader(fh)}
