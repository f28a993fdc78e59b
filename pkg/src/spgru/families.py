"""Exponential families with two-way natural/moment parameter mappings.

Supported families and their natural form (alpha, beta):

* Gaussian: mu = -alpha/beta, sigma^2 = -1/beta, valid for beta < 0.
* Gamma:    shape = alpha + 1, rate = -beta, valid for alpha > -1, beta < 0;
            mean = -(alpha+1)/beta, variance = (alpha+1)/beta^2.
* Poisson:  single rate lambda > 0 stored in alpha; beta is a 0.0 sentinel
            that is never read; mean = variance = lambda.

All arrays are dense float64. Variances are floored at VARIANCE_FLOOR on
conversion to keep reciprocals finite.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DomainError, ShapeError

# Floor applied to variances on from/to conversions.
VARIANCE_FLOOR = 1e-12


class Family(Enum):
    GAUSSIAN = "gaussian"
    GAMMA = "gamma"
    POISSON = "poisson"


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check(ok: np.ndarray, what: str, values: np.ndarray) -> None:
    ok = np.asarray(ok)
    if not bool(ok.all()):
        idx = tuple(int(i) for i in np.argwhere(~np.atleast_1d(ok))[0])
        val = float(np.atleast_1d(values)[idx])
        raise DomainError(f"{what} violated at index {idx}: value {val!r}")


@dataclass(frozen=True)
class NaturalParams:
    """Natural-form parameter arrays (alpha, beta) for one family."""

    alpha: np.ndarray
    beta: np.ndarray
    family: Family

    def __post_init__(self):
        object.__setattr__(self, "alpha", _as_f64(self.alpha))
        object.__setattr__(self, "beta", _as_f64(self.beta))
        if self.alpha.shape != self.beta.shape:
            raise ShapeError(
                f"alpha shape {self.alpha.shape} != beta shape {self.beta.shape}"
            )

    @property
    def shape(self) -> tuple:
        return self.alpha.shape


@dataclass(frozen=True)
class MomentTensor:
    """Mean m and variance s arrays of a factorized random tensor."""

    m: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m", _as_f64(self.m))
        object.__setattr__(self, "s", _as_f64(self.s))
        if self.m.shape != self.s.shape:
            raise ShapeError(f"m shape {self.m.shape} != s shape {self.s.shape}")

    @property
    def shape(self) -> tuple:
        return self.m.shape


def _validate_natural(p: NaturalParams) -> None:
    if p.family is Family.GAUSSIAN:
        _check(p.beta < 0, "Gaussian beta < 0", p.beta)
    elif p.family is Family.GAMMA:
        _check(p.alpha > -1, "Gamma alpha > -1", p.alpha)
        _check(p.beta < 0, "Gamma beta < 0", p.beta)
    elif p.family is Family.POISSON:
        _check(p.alpha > 0, "Poisson rate > 0", p.alpha)
    else:  # pragma: no cover
        raise ValueError(f"unknown family {p.family}")


def to_moments(p: NaturalParams) -> MomentTensor:
    """Map natural parameters to (mean, variance)."""
    _validate_natural(p)
    if p.family is Family.GAUSSIAN:
        m = -p.alpha / p.beta
        s = -1.0 / p.beta
    elif p.family is Family.GAMMA:
        m = -(p.alpha + 1.0) / p.beta
        s = (p.alpha + 1.0) / (p.beta * p.beta)
    else:  # Poisson
        m = p.alpha.copy()
        s = p.alpha.copy()
    return MomentTensor(m, np.maximum(s, VARIANCE_FLOOR))


def from_moments(t: MomentTensor, family: Family) -> NaturalParams:
    """Invert :func:`to_moments`; round-trips exactly for valid inputs."""
    if family is Family.GAUSSIAN:
        _check(t.s > 0, "Gaussian s > 0 (s = 0 is non-invertible)", t.s)
        s = np.maximum(t.s, VARIANCE_FLOOR)
        beta = -1.0 / s
        alpha = t.m / s
    elif family is Family.GAMMA:
        _check(t.m > 0, "Gamma m > 0", t.m)
        _check(t.s > 0, "Gamma s > 0 (s = 0 is non-invertible)", t.s)
        s = np.maximum(t.s, VARIANCE_FLOOR)
        alpha = t.m * t.m / s - 1.0
        beta = -t.m / s
    elif family is Family.POISSON:
        # s is ignored on inversion: the family has a single parameter.
        _check(t.m > 0, "Poisson m > 0", t.m)
        alpha = t.m.copy()
        beta = np.zeros_like(alpha)
    else:  # pragma: no cover
        raise ValueError(f"unknown family {family}")
    return NaturalParams(alpha, beta, family)


def sample(p: NaturalParams, n: int, rng_seed) -> np.ndarray:
    """Draw n i.i.d. samples per element; deterministic for a fixed seed.

    Returns an array of shape (n,) + p.shape.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    _validate_natural(p)
    rng = np.random.default_rng(rng_seed)
    size = (n,) + p.shape
    if p.family is Family.GAUSSIAN:
        mom = to_moments(p)
        return rng.normal(mom.m, np.sqrt(mom.s), size)
    if p.family is Family.GAMMA:
        shape = p.alpha + 1.0
        rate = -p.beta
        return rng.gamma(shape, 1.0 / rate, size)
    return rng.poisson(p.alpha, size).astype(np.float64)
