"""Sampling-based and analytic verification of the closed-form moments.

Every closed-form operation has an independent ground-truth route:

* affine map: Monte Carlo over sampled weights/inputs plus direct moment
  algebra (E[WX+b] and Var via independent second moments);
* Gamma/Poisson activations: Monte Carlo plus adaptive quadrature / series
  summation of the defining integral (these closed forms are exact, so the
  tolerance is pure MC noise, 4 standard errors);
* Gaussian sigmoid/tanh: Monte Carlo with antithetic pairs (the closed
  forms are approximations; tolerances below are the measured worst-case
  bounds plus noise headroom).

The Gaussian tolerances are scaled by output range: sigmoid 0.03; tanh
0.06 on the mean and 0.12 on the variance (range 2, variance units x4).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

from .errors import DomainError
from .families import MomentTensor
from .moments import (
    DEFAULT_CONSTANTS,
    LinearLayerParams,
    NmmConstants,
    lmm,
    nmm_gamma,
    nmm_poisson,
    nmm_sigmoid_gauss,
    nmm_tanh_gauss,
)

GAUSS_GRID_M = (-4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0)
GAUSS_GRID_S = (0.0, 0.25, 1.0, 4.0)

TOL_SIGMOID = 0.03
TOL_TANH_MEAN = 0.06
TOL_TANH_VAR = 0.12
SE_MULT = 4.0


@dataclass
class OracleReport:
    operation: str
    grid_point: str
    quantity: str        # "mean" or "var"
    closed: float
    mc: float
    mc_se: float
    abs_err: float
    tol: float
    passed: bool

    def row(self) -> str:
        return (
            f"{self.operation:18s} {self.grid_point:28s} {self.quantity:4s} "
            f"{self.closed:+.6e} {self.mc:+.6e} {self.mc_se:.2e} "
            f"{self.abs_err:.3e} {self.tol:.3e} {'ok' if self.passed else 'FAIL'}"
        )


REPORT_HEADER = (
    f"{'operation':18s} {'grid point':28s} {'qty':4s} "
    f"{'closed':>13s} {'monte carlo':>13s} {'se':>8s} {'abs err':>9s} {'tol':>9s} verdict"
)


def _se_mean(x: np.ndarray) -> float:
    if x.size < 2:  # degenerate draw (zero-variance input)
        return 0.0
    return float(x.std(ddof=1) / math.sqrt(x.size))


def _se_var(x: np.ndarray) -> float:
    # large-sample standard error of the sample variance: sqrt((m4 - s^4)/n)
    if x.size < 2:
        return 0.0
    c = x - x.mean()
    m4 = float(np.mean(c**4))
    s2 = float(np.mean(c**2))
    return math.sqrt(max(m4 - s2 * s2, 0.0) / x.size)


def _pair(op, point, qty, closed, est, se, tol) -> OracleReport:
    err = abs(closed - est)
    return OracleReport(op, point, qty, closed, est, se, err, tol, err <= tol)


# ---------------------------------------------------------------------------
# affine map

def verify_lmm(p: LinearLayerParams, a: MomentTensor, n: int = 10**6,
               seed=0) -> list[OracleReport]:
    """Scalar affine-map check: sample W, b, a and compare empirical moments."""
    if n < 10**4:
        raise ValueError("n must be >= 1e4 for a meaningful check")
    if p.W_m.shape != (1, 1):
        raise ValueError("MC affine check is scalar; use shape (1, 1)")
    closed = lmm(a, p)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((3, n))
    w = p.W_m[0, 0] + math.sqrt(p.W_s[0, 0]) * z[0]
    b = p.b_m[0] + math.sqrt(p.b_s[0]) * z[1]
    x = a.m[0] + math.sqrt(a.s[0]) * z[2]
    o = w * x + b
    point = (
        f"W=({p.W_m[0,0]:g},{p.W_s[0,0]:g}) b=({p.b_m[0]:g},{p.b_s[0]:g}) "
        f"a=({a.m[0]:g},{a.s[0]:g})"
    )
    se_m = max(_se_mean(o), 1e-15)
    se_s = max(_se_var(o), 1e-15)
    return [
        _pair("lmm", point, "mean", float(closed.m[0]), float(o.mean()), se_m, SE_MULT * se_m),
        _pair("lmm", point, "var", float(closed.s[0]), float(o.var(ddof=1)), se_s, SE_MULT * se_s),
    ]


def lmm_analytic_scalar(p: LinearLayerParams, a: MomentTensor) -> tuple[float, float]:
    """Independent moment algebra for the scalar case: E and Var of Wx+b."""
    wm, ws = float(p.W_m[0, 0]), float(p.W_s[0, 0])
    bm, bs = float(p.b_m[0]), float(p.b_s[0])
    xm, xs = float(a.m[0]), float(a.s[0])
    mean = wm * xm + bm
    e_w2 = ws + wm * wm
    e_x2 = xs + xm * xm
    var = e_w2 * e_x2 - (wm * xm) ** 2 + bs
    return mean, var


# ---------------------------------------------------------------------------
# nonlinear moment matching

def _mc_gauss(f, m: float, s: float, n: int, rng) -> tuple[float, float, float, float]:
    """Antithetic MC estimate of mean/variance of f(X), X ~ N(m, s)."""
    if s == 0.0:
        fx = np.array([f(m)], dtype=np.float64)
    else:
        z = rng.standard_normal(n // 2)
        x = m + math.sqrt(s) * np.concatenate([z, -z])
        fx = f(x)
    return float(fx.mean()), float(fx.var()), max(_se_mean(fx), 1e-15), max(_se_var(fx), 1e-15)


def verify_nmm_gauss(activation: str, grid_m=GAUSS_GRID_M, grid_s=GAUSS_GRID_S,
                     n: int = 10**6, seed=0,
                     constants: NmmConstants = DEFAULT_CONSTANTS,
                     tol_mean: float | None = None,
                     tol_var: float | None = None) -> list[OracleReport]:
    """Sigmoid/tanh closed forms against MC on the (mean, variance) grid."""
    if activation == "sigmoid":
        f = lambda x: 1.0 / (1.0 + np.exp(-x))
        nmm = nmm_sigmoid_gauss
        tm = TOL_SIGMOID if tol_mean is None else tol_mean
        tv = TOL_SIGMOID if tol_var is None else tol_var
    elif activation == "tanh":
        f = np.tanh
        nmm = nmm_tanh_gauss
        tm = TOL_TANH_MEAN if tol_mean is None else tol_mean
        tv = TOL_TANH_VAR if tol_var is None else tol_var
    else:
        raise ValueError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    reports = []
    for s in grid_s:
        for m in grid_m:
            closed = nmm(MomentTensor(np.array([m]), np.array([s])), constants)
            mc_m, mc_v, se_m, se_v = _mc_gauss(f, m, s, n, rng)
            point = f"m={m:g} s={s:g}"
            op = f"nmm_{activation}"
            reports.append(_pair(op, point, "mean", float(closed.m[0]), mc_m, se_m, tm))
            reports.append(_pair(op, point, "var", float(closed.s[0]), mc_v, se_v, tv))
    return reports


def verify_nmm_gamma(shape: float, rate: float, n: int = 10**6, seed=0,
                     constants: NmmConstants = DEFAULT_CONSTANTS) -> list[OracleReport]:
    """Exact Gamma activation vs MC at 4 standard errors."""
    if shape <= 0 or rate <= 0:
        raise DomainError("Gamma check needs shape > 0 and rate > 0")
    c, g = constants.c, constants.gamma
    closed = nmm_gamma(np.array([shape]), np.array([rate]), constants)
    rng = np.random.default_rng(seed)
    x = rng.gamma(shape, 1.0 / rate, n)
    fx = c * (1.0 - np.exp(-g * x))
    point = f"shape={shape:g} rate={rate:g}"
    se_m, se_v = max(_se_mean(fx), 1e-15), max(_se_var(fx), 1e-15)
    return [
        _pair("nmm_gamma", point, "mean", float(closed.m[0]), float(fx.mean()), se_m, SE_MULT * se_m),
        _pair("nmm_gamma", point, "var", float(closed.s[0]), float(fx.var(ddof=1)), se_v, SE_MULT * se_v),
    ]


def verify_nmm_poisson(lam: float, n: int = 10**6, seed=0,
                       constants: NmmConstants = DEFAULT_CONSTANTS) -> list[OracleReport]:
    """Exact Poisson activation vs MC at 4 standard errors."""
    if lam <= 0:
        raise DomainError("Poisson check needs lam > 0")
    c, g = constants.c, constants.gamma
    closed = nmm_poisson(np.array([lam]), constants)
    rng = np.random.default_rng(seed)
    x = rng.poisson(lam, n).astype(np.float64)
    fx = c * (1.0 - np.exp(-g * x))
    point = f"lam={lam:g}"
    se_m, se_v = max(_se_mean(fx), 1e-15), max(_se_var(fx), 1e-15)
    return [
        _pair("nmm_poisson", point, "mean", float(closed.m[0]), float(fx.mean()), se_m, SE_MULT * se_m),
        _pair("nmm_poisson", point, "var", float(closed.s[0]), float(fx.var(ddof=1)), se_v, SE_MULT * se_v),
    ]


def gamma_activation_quadrature(shape: float, rate: float,
                                constants: NmmConstants = DEFAULT_CONSTANTS) -> tuple[float, float]:
    """Adaptive quadrature of the Gamma activation moments (independent route).

    The variance integrates the centered square, avoiding the cancellation
    of E[f^2] - E[f]^2 when both sit near c^2.
    """
    c, g = constants.c, constants.gamma
    dist = stats.gamma(shape, scale=1.0 / rate)
    f = lambda x: c * (1.0 - np.exp(-g * x))
    upper = dist.ppf(1.0 - 1e-15)
    e1 = integrate.quad(lambda x: f(x) * dist.pdf(x), 0.0, upper, limit=400)[0]
    var = integrate.quad(lambda x: (f(x) - e1) ** 2 * dist.pdf(x), 0.0, upper,
                         limit=400)[0]
    return e1, var


def poisson_activation_series(lam: float,
                              constants: NmmConstants = DEFAULT_CONSTANTS) -> tuple[float, float]:
    """Direct series summation of the Poisson activation moments (centered)."""
    c, g = constants.c, constants.gamma
    kmax = int(lam + 40.0 * math.sqrt(lam) + 60.0)
    k = np.arange(kmax + 1)
    pmf = np.exp(stats.poisson(lam).logpmf(k))
    fx = c * (1.0 - np.exp(-g * k))
    e1 = float(np.sum(pmf * fx))
    var = float(np.sum(pmf * (fx - e1) ** 2))
    return e1, var


# ---------------------------------------------------------------------------
# whole-cell check

def verify_cell(params, x_mom: MomentTensor, state, cfg, n: int = 10**5,
                seed=0, tol: float = 0.05,
                zero_variance: bool = False) -> dict[str, list[OracleReport]]:
    """Sample weights/inputs/state, run the plain GRU equations per sample,
    and compare empirical state moments with the moment-matched step under
    both cell-variance rules.  Cell must be small (H <= 8).

    zero_variance collapses every weight distribution to its mean exactly
    (degenerate case: the step must match a plain GRU step exactly).
    """
    from dataclasses import replace as _replace

    from scipy.special import expit

    from . import autodiff as ad
    from .cell import GATES, NetworkConfig, bind, cell_step_vars, zero_weight_variances

    H, D = params.hidden, params.input_dim
    if H > 8:
        raise ValueError("verify_cell is for small cells (H <= 8)")
    rng = np.random.default_rng(seed)

    def sp(rho):
        return np.zeros_like(rho) if zero_variance else np.logaddexp(0.0, rho)

    draws = {}
    for g in GATES:
        for base, shape in (("U", (H, D)), ("W", (H, H)), ("b", (H,))):
            m = params.arrays[f"{g}.{base}_m"]
            s = sp(params.arrays[f"{g}.{base}_rho"])
            draws[f"{g}.{base}"] = m + np.sqrt(s) * rng.standard_normal((n,) + shape)
    x = x_mom.m + np.sqrt(x_mom.s) * rng.standard_normal((n, D))
    h = state.h_m + np.sqrt(state.h_s) * rng.standard_normal((n, H))

    def gate(g, rec):
        return (
            np.einsum("nij,nj->ni", draws[f"{g}.U"], x)
            + np.einsum("nij,nj->ni", draws[f"{g}.W"], rec)
            + draws[f"{g}.b"]
        )

    r = expit(gate("r", h))
    z = expit(gate("z", h))
    c = np.tanh(gate("hc", r * h))
    h_new = (1.0 - z) * c + z * h
    emp_m = h_new.mean(axis=0)
    emp_s = h_new.var(axis=0)
    se_m = h_new.std(axis=0, ddof=1) / math.sqrt(n)

    def closed_step(ccfg):
        bc = bind(params, ccfg)
        if zero_variance:
            zero_weight_variances(bc)
        x_s_var = ad.Var(np.atleast_2d(x_mom.s)) if x_mom.s.any() else None
        m, s = cell_step_vars(bc, ad.Var(np.atleast_2d(x_mom.m)), x_s_var,
                              ad.Var(np.atleast_2d(state.h_m)),
                              ad.Var(np.atleast_2d(state.h_s)))
        return m.value.reshape(-1), s.value.reshape(-1)

    out: dict[str, list[OracleReport]] = {}
    for rule in ("corrected", "table1_literal"):
        ccfg = _replace(cfg, cell_variance_rule=rule) if cfg else NetworkConfig(
            hidden=H, cell_variance_rule=rule)
        cm, cs = closed_step(ccfg)
        reports = []
        for i in range(H):
            reports.append(_pair(f"cell[{rule}]", f"unit {i}", "mean",
                                 float(cm[i]), float(emp_m[i]), float(se_m[i]), tol))
            reports.append(_pair(f"cell[{rule}]", f"unit {i}", "var",
                                 float(cs[i]), float(emp_s[i]), float(se_m[i]), tol))
        out[rule] = reports
    return out


# ---------------------------------------------------------------------------
# default suite for the CLI gate

def default_suite(n: int = 10**6, seed=0,
                  constants: NmmConstants = DEFAULT_CONSTANTS) -> list[OracleReport]:
    """The standard verification grid used by the command-line gate."""
    rng = np.random.default_rng(seed)
    reports: list[OracleReport] = []

    for i in range(8):
        p = LinearLayerParams(
            W_m=np.array([[rng.uniform(-3, 3)]]),
            W_s=np.array([[rng.uniform(0, 10 if i == 7 else 2)]]),
            b_m=np.array([rng.uniform(-2, 2)]),
            b_s=np.array([rng.uniform(0, 1)]),
        )
        a = MomentTensor(np.array([rng.uniform(-3, 3)]), np.array([rng.uniform(0, 2)]))
        reports += verify_lmm(p, a, n=n, seed=rng.integers(2**32))

    reports += verify_nmm_gauss("sigmoid", n=n, seed=int(rng.integers(2**32)),
                                constants=constants)
    reports += verify_nmm_gauss("tanh", n=n, seed=int(rng.integers(2**32)),
                                constants=constants)

    for shape, rate in ((1.0, 1.0), (2.0, 3.0), (0.5, 0.7), (5.0, 2.0)):
        reports += verify_nmm_gamma(shape, rate, n=n, seed=int(rng.integers(2**32)),
                                    constants=constants)
    for lam in (0.5, 1.0, 4.0, 10.0):
        reports += verify_nmm_poisson(lam, n=n, seed=int(rng.integers(2**32)),
                                      constants=constants)
    return reports
