"""Moment matching through affine maps and elementwise nonlinearities.

Affine maps with factorized random weights propagate mean and variance
exactly (``lmm``).  Sigmoid and tanh of Gaussian inputs use the probit-based
closed-form approximation (``nmm_sigmoid_gauss`` / ``nmm_tanh_gauss``); the
saturating-exponential activations of Gamma and Poisson inputs are exact
(``nmm_gamma`` / ``nmm_poisson``).

Variance outputs are clamped to >= 0; the closed forms can go slightly
negative in saturated regions.  Where the input variance is exactly 0 the
variance kernels return exactly 0, so deterministic inputs stay
deterministic through an unrolled network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DomainError, ShapeError
from .families import MomentTensor, _as_f64

ZETA = math.sqrt(math.pi / 8.0)
NU_SIG = 4.0 - 2.0 * math.sqrt(2.0)
OMEGA_SIG_MAIN = -math.log(math.sqrt(2.0) + 1.0)
OMEGA_SIG_APPENDIX = OMEGA_SIG_MAIN / 2.0
NU_TANH = 2.0 * NU_SIG
OMEGA_TANH = -math.log(math.sqrt(2.0) + 1.0) / 2.0


@dataclass(frozen=True)
class NmmConstants:
    """Constants of the closed-form nonlinear moment matching.

    c and gamma scale the Gamma/Poisson activation c*(1 - exp(-gamma*x));
    c = gamma = 1 resembles tanh on the positive axis.
    """

    zeta: float = ZETA
    nu_sig: float = NU_SIG
    omega_sig: float = OMEGA_SIG_MAIN
    nu_tanh: float = NU_TANH
    omega_tanh: float = OMEGA_TANH
    c: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.c <= 0 or self.gamma <= 0:
            raise DomainError(f"c and gamma must be > 0, got c={self.c} gamma={self.gamma}")

    @classmethod
    def appendix_variant(cls, **kw) -> "NmmConstants":
        """Variant with the halved sigmoid-variance offset constant."""
        return cls(omega_sig=OMEGA_SIG_APPENDIX, **kw)


DEFAULT_CONSTANTS = NmmConstants()


@dataclass
class ClampStats:
    """Counter of variance elements clamped to 0 (approximation residual)."""

    clamped: int = 0

    def add(self, n: int) -> None:
        self.clamped += int(n)


@dataclass(frozen=True)
class LinearLayerParams:
    """Affine layer with factorized random weights, in moment form.

    W_* are (out, in) matrices, b_* are (out,) vectors; the variance
    parts W_s and b_s must be elementwise nonnegative.
    """

    W_m: np.ndarray
    W_s: np.ndarray
    b_m: np.ndarray
    b_s: np.ndarray

    def __post_init__(self):
        for name in ("W_m", "W_s", "b_m", "b_s"):
            object.__setattr__(self, name, _as_f64(getattr(self, name)))
        if self.W_m.shape != self.W_s.shape or self.b_m.shape != self.b_s.shape:
            raise ShapeError("mean/variance parameter shapes differ")
        if self.W_m.ndim != 2 or self.b_m.ndim != 1:
            raise ShapeError("W must be a matrix and b a vector")
        if self.W_m.shape[0] != self.b_m.shape[0]:
            raise ShapeError(
                f"W out-dim {self.W_m.shape[0]} != b dim {self.b_m.shape[0]}"
            )
        if np.any(self.W_s < 0) or np.any(self.b_s < 0):
            raise DomainError("W_s and b_s must be >= 0 elementwise")

    @property
    def out_dim(self) -> int:
        return self.W_m.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W_m.shape[1]


def lmm(a: MomentTensor, p: LinearLayerParams) -> MomentTensor:
    """Exact mean/variance of W a + b for independent factorized W, b, a."""
    if a.m.shape != (p.in_dim,):
        raise ShapeError(f"input shape {a.m.shape} does not match in-dim {p.in_dim}")
    if np.any(a.s < 0):
        raise DomainError("input variance must be >= 0")
    o_m = p.W_m @ a.m + p.b_m
    o_s = p.W_s @ a.s + p.b_s + (p.W_m * p.W_m) @ a.s + p.W_s @ (a.m * a.m)
    return MomentTensor(o_m, o_s)


# Elementwise kernels over raw arrays; shared with the autodiff primitives.
# Each *_var_raw kernel may return slightly negative values (clamped by the
# callers) and returns exactly 0 where s == 0.

def sigmoid_mm_mean(m, s, c: NmmConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    return expit(m / np.sqrt(1.0 + c.zeta**2 * s))


def sigmoid_mm_var_raw(m, s, c: NmmConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    a_m = sigmoid_mm_mean(m, s, c)
    raw = expit(c.nu_sig * (m + c.omega_sig) / np.sqrt(1.0 + (c.zeta * c.nu_sig) ** 2 * s))
    return np.where(s == 0.0, 0.0, raw - a_m * a_m)


def tanh_mm_mean(m, s, c: NmmConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    return 2.0 * expit(m / np.sqrt(0.25 + c.zeta**2 * s)) - 1.0


def tanh_mm_var_raw(m, s, c: NmmConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    sp = expit(m / np.sqrt(0.25 + c.zeta**2 * s))
    sq = expit(c.nu_tanh * (m + c.omega_tanh) / np.sqrt(1.0 + (c.zeta * c.nu_tanh) ** 2 * s))
    return np.where(s == 0.0, 0.0, 4.0 * (sq - sp * sp))


def _finish(m, raw_s, stats: ClampStats | None) -> MomentTensor:
    if stats is not None:
        stats.add(np.count_nonzero(raw_s < 0))
    return MomentTensor(m, np.maximum(raw_s, 0.0))


def nmm_sigmoid_gauss(
    o: MomentTensor,
    constants: NmmConstants = DEFAULT_CONSTANTS,
    clamp_stats: ClampStats | None = None,
) -> MomentTensor:
    """Mean/variance of sigmoid(X) for Gaussian X with moments o."""
    if np.any(o.s < 0):
        raise DomainError("input variance must be >= 0")
    return _finish(
        sigmoid_mm_mean(o.m, o.s, constants),
        sigmoid_mm_var_raw(o.m, o.s, constants),
        clamp_stats,
    )


def nmm_tanh_gauss(
    o: MomentTensor,
    constants: NmmConstants = DEFAULT_CONSTANTS,
    clamp_stats: ClampStats | None = None,
) -> MomentTensor:
    """Mean/variance of tanh(X) for Gaussian X with moments o."""
    if np.any(o.s < 0):
        raise DomainError("input variance must be >= 0")
    return _finish(
        tanh_mm_mean(o.m, o.s, constants),
        tanh_mm_var_raw(o.m, o.s, constants),
        clamp_stats,
    )


def nmm_gamma(
    shape, rate, constants: NmmConstants = DEFAULT_CONSTANTS
) -> MomentTensor:
    """Exact moments of c*(1 - exp(-gamma*X)) for Gamma(shape, rate) X.

    Takes conventional shape/rate parameters (> 0); convert from natural
    form with families.to_moments / the shape = alpha+1, rate = -beta map.
    """
    k = _as_f64(shape)
    r = _as_f64(rate)
    if k.shape != r.shape:
        raise ShapeError(f"shape {k.shape} != rate {r.shape}")
    from .families import _check

    _check(k > 0, "Gamma shape > 0", k)
    _check(r > 0, "Gamma rate > 0", r)
    g, c = constants.gamma, constants.c
    r1 = (r / (r + g)) ** k          # E[exp(-gamma X)]
    r2 = (r / (r + 2.0 * g)) ** k    # E[exp(-2 gamma X)]
    a_m = c * (1.0 - r1)
    a_s = c * c * (r2 - r1 * r1)
    return MomentTensor(a_m, np.maximum(a_s, 0.0))


def nmm_poisson(lam, constants: NmmConstants = DEFAULT_CONSTANTS) -> MomentTensor:
    """Exact moments of c*(1 - exp(-gamma*X)) for Poisson(lam) X."""
    lam = _as_f64(lam)
    from .families import _check

    _check(lam > 0, "Poisson rate > 0", lam)
    g, c = constants.gamma, constants.c
    e1 = np.exp((math.exp(-g) - 1.0) * lam)        # E[exp(-gamma X)]
    e2 = np.exp((math.exp(-2.0 * g) - 1.0) * lam)  # E[exp(-2 gamma X)]
    a_m = c * (1.0 - e1)
    a_s = c * c * (e2 - e1 * e1)
    return MomentTensor(a_m, np.maximum(a_s, 0.0))
