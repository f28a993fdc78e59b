"""Probabilistic GRU cell operating on (mean, variance) pairs.

Every gate applies the exact affine moment propagation followed by the
closed-form sigmoid/tanh moment matching; the cell state is a convex
combination in the mean channel with a configurable variance rule.  The
candidate's recurrent input is the reset-gated previous state r * h, with
the product moments controlled by ``gate_product_rule``:

* ``full_independent``: mean = r_m*h_m, var = r_s*h_s + r_s*h_m^2 + r_m^2*h_s
  (exact for independent factors);
* ``paper_simplified``: the gate enters at its mean only, var = r_m^2*h_s.

``cell_variance_rule`` selects the state-variance combination:

* ``corrected`` (default): h_s' = (1-z_m)^2*c_s + z_m^2*h_s;
* ``table1_literal``: h_s' = (1-z_s)^2*c_m + z_s^2*h_s, kept for fidelity
  experiments (mixes a mean into a variance; clamped at 0).

Weight/bias variances are stored as unconstrained rho with
s = log(1+e^rho) applied at use sites, so plain gradient steps keep every
variance positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as _expit

from . import autodiff as ad
from .autodiff import Var
from .errors import ConfigError, ShapeError
from .families import MomentTensor
from .moments import DEFAULT_CONSTANTS, ClampStats, NmmConstants

GATES = ("r", "z", "hc")

MODES = ("autoencoder", "predictor", "composite")
VARIANCE_RULES = ("corrected", "table1_literal")
PRODUCT_RULES = ("full_independent", "paper_simplified")
LOSSES = ("bce_mean", "gaussian_nll")
OMEGA_VARIANTS = ("main", "appendix")


def softplus_inv(y: float) -> float:
    """Inverse of log(1+e^x); y must be > 0."""
    if y <= 0:
        raise ValueError(f"softplus is positive, got target {y}")
    return float(np.log(np.expm1(y)))


def param_names() -> list[str]:
    """Canonical parameter ordering used by the optimizer and checkpoints."""
    names = []
    for g in GATES:
        for base in ("U", "W", "b"):
            names += [f"{g}.{base}_m", f"{g}.{base}_rho"]
    names += ["out.V_m", "out.V_rho", "out.b_m", "out.b_rho"]
    return names


@dataclass
class SpGruParams:
    """All learnable arrays of one cell plus its output layer."""

    hidden: int
    input_dim: int
    arrays: dict[str, np.ndarray]

    def copy(self) -> "SpGruParams":
        return SpGruParams(self.hidden, self.input_dim,
                           {k: v.copy() for k, v in self.arrays.items()})

    def means_only(self) -> dict[str, np.ndarray]:
        """Mean-channel weights, for the deterministic reference network."""
        return {k: v for k, v in self.arrays.items() if k.endswith("_m")}


@dataclass(frozen=True)
class CellState:
    h_m: np.ndarray
    h_s: np.ndarray


@dataclass(frozen=True)
class NetworkConfig:
    mode: str = "predictor"
    input_len: int = 10
    output_len: int = 10
    hidden: int = 128
    cell_variance_rule: str = "corrected"
    gate_product_rule: str = "full_independent"
    loss: str = "bce_mean"
    sigmoid_omega: str = "main"
    init_s: float = 1e-3

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.cell_variance_rule not in VARIANCE_RULES:
            raise ConfigError(f"cell_variance_rule must be one of {VARIANCE_RULES}")
        if self.gate_product_rule not in PRODUCT_RULES:
            raise ConfigError(f"gate_product_rule must be one of {PRODUCT_RULES}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}")
        if self.sigmoid_omega not in OMEGA_VARIANTS:
            raise ConfigError(f"sigmoid_omega must be one of {OMEGA_VARIANTS}")
        if self.input_len < 1 or self.output_len < 1:
            raise ConfigError("input_len and output_len must be >= 1")
        if self.hidden < 1:
            raise ConfigError("hidden must be >= 1")
        if self.init_s <= 0:
            raise ConfigError("init_s must be > 0")

    def constants(self) -> NmmConstants:
        if self.sigmoid_omega == "appendix":
            return NmmConstants.appendix_variant()
        return DEFAULT_CONSTANTS

    def n_outputs(self) -> int:
        if self.mode == "autoencoder":
            return self.input_len
        if self.mode == "predictor":
            return self.output_len
        return self.input_len + self.output_len


def init_params(seed, hidden: int, input_dim: int, init_s: float = 1e-3) -> SpGruParams:
    """Uniform(-k, k) means with k = 1/sqrt(fan_in); variances all init_s."""
    if init_s <= 0:
        raise ValueError("init_s must be > 0")
    rng = np.random.default_rng(seed)
    rho0 = softplus_inv(init_s)
    k_in = 1.0 / math.sqrt(input_dim)
    k_rec = 1.0 / math.sqrt(hidden)
    arrays: dict[str, np.ndarray] = {}
    for g in GATES:
        arrays[f"{g}.U_m"] = rng.uniform(-k_in, k_in, (hidden, input_dim))
        arrays[f"{g}.U_rho"] = np.full((hidden, input_dim), rho0)
        arrays[f"{g}.W_m"] = rng.uniform(-k_rec, k_rec, (hidden, hidden))
        arrays[f"{g}.W_rho"] = np.full((hidden, hidden), rho0)
        arrays[f"{g}.b_m"] = np.zeros(hidden)
        arrays[f"{g}.b_rho"] = np.full(hidden, rho0)
    arrays["out.V_m"] = rng.uniform(-k_rec, k_rec, (input_dim, hidden))
    arrays["out.V_rho"] = np.full((input_dim, hidden), rho0)
    arrays["out.b_m"] = np.zeros(input_dim)
    arrays["out.b_rho"] = np.full(input_dim, rho0)
    return SpGruParams(hidden, input_dim, arrays)


# ---------------------------------------------------------------------------
# Var-level cell graph (records on a tape when one is given)

@dataclass
class BoundCell:
    """Parameter Vars with softplus-applied variances and cached squares."""

    vars: dict[str, Var]
    leaves: dict[str, Var]
    constants: NmmConstants
    cfg: NetworkConfig
    stats: ClampStats = field(default_factory=ClampStats)


def bind_leaves(leaves: dict[str, Var], cfg: NetworkConfig) -> BoundCell:
    """Derive use-site Vars from leaves, once per unroll.

    Besides softplus variances and squared means this caches the fused
    matrix W_s + W_m^2, which multiplies the input variance in the affine
    variance rule; fusing it halves the variance-channel matmuls.
    """
    v: dict[str, Var] = {}
    for g in list(GATES) + ["out"]:
        mats = ("U", "W") if g != "out" else ("V",)
        for base in mats:
            m = leaves[f"{g}.{base}_m"]
            s = ad.softplus(leaves[f"{g}.{base}_rho"])
            m2 = ad.square(m)
            v[f"{g}.{base}_m"] = m
            v[f"{g}.{base}_s"] = s
            v[f"{g}.{base}_m2"] = m2
            v[f"{g}.{base}_sm2"] = s + m2
        v[f"{g}.b_m"] = leaves[f"{g}.b_m"]
        v[f"{g}.b_s"] = ad.softplus(leaves[f"{g}.b_rho"])
    return BoundCell(v, leaves, cfg.constants(), cfg)


def bind(params: SpGruParams, cfg: NetworkConfig, tape=None) -> BoundCell:
    """Wrap parameters as Vars; precompute variances and squared means once."""
    leaves = {}
    for name in param_names():
        arr = params.arrays[name]
        leaves[name] = tape.leaf(arr) if tape is not None else Var(arr)
    return bind_leaves(leaves, cfg)


def zero_weight_variances(bc: BoundCell) -> BoundCell:
    """Collapse every weight/bias distribution to its mean, exactly.

    Softplus cannot reach 0, so degenerate-consistency checks override the
    bound variance Vars (and the fused sums) in place. Only valid on an
    unrecorded BoundCell (inference mode).
    """
    for g in list(GATES) + ["out"]:
        mats = ("U", "W") if g != "out" else ("V",)
        for base in mats:
            zero = Var(np.zeros_like(bc.vars[f"{g}.{base}_s"].value))
            bc.vars[f"{g}.{base}_s"] = zero
            bc.vars[f"{g}.{base}_sm2"] = bc.vars[f"{g}.{base}_m2"]
        bc.vars[f"{g}.b_s"] = Var(np.zeros_like(bc.vars[f"{g}.b_s"].value))
    return bc


def _clamp0(raw: Var, bc: BoundCell) -> Var:
    bc.stats.add(np.count_nonzero(raw.value < 0))
    return ad.clamp(raw, lo=0.0)


def _preact(bc: BoundCell, g: str, x_m, x_s, x_m2, rec_m, rec_s, rec_m2):
    v = bc.vars
    o_m = ad.matmul_nt(rec_m, v[f"{g}.W_m"])
    if x_m is not None:
        o_m = o_m + ad.matmul_nt(x_m, v[f"{g}.U_m"])
    o_m = o_m + v[f"{g}.b_m"]

    o_s = ad.matmul_nt(rec_s, v[f"{g}.W_sm2"]) + ad.matmul_nt(rec_m2, v[f"{g}.W_s"])
    if x_s is not None:
        o_s = o_s + ad.matmul_nt(x_s, v[f"{g}.U_sm2"])
    if x_m2 is not None:
        o_s = o_s + ad.matmul_nt(x_m2, v[f"{g}.U_s"])
    o_s = o_s + v[f"{g}.b_s"]
    return o_m, o_s


def cell_step_vars(bc: BoundCell, x_m: Var | None, x_s: Var | None,
                   h_m: Var, h_s: Var) -> tuple[Var, Var]:
    """One recurrent step over Vars; x_s=None means deterministic input."""
    c = bc.constants
    x_m2 = ad.square(x_m) if x_m is not None else None
    h_m2 = ad.square(h_m)

    o_rm, o_rs = _preact(bc, "r", x_m, x_s, x_m2, h_m, h_s, h_m2)
    r_m = ad.sigmoid_mm_mean(o_rm, o_rs, c)
    r_s = _clamp0(ad.sigmoid_mm_var(o_rm, o_rs, c), bc)

    o_zm, o_zs = _preact(bc, "z", x_m, x_s, x_m2, h_m, h_s, h_m2)
    z_m = ad.sigmoid_mm_mean(o_zm, o_zs, c)
    z_s = _clamp0(ad.sigmoid_mm_var(o_zm, o_zs, c), bc)

    rh_m = r_m * h_m
    if bc.cfg.gate_product_rule == "full_independent":
        rh_s = r_s * h_s + r_s * h_m2 + ad.square(r_m) * h_s
    else:
        rh_s = ad.square(r_m) * h_s
    rh_m2 = ad.square(rh_m)

    o_cm, o_cs = _preact(bc, "hc", x_m, x_s, x_m2, rh_m, rh_s, rh_m2)
    c_m = ad.tanh_mm_mean(o_cm, o_cs, c)
    c_s = _clamp0(ad.tanh_mm_var(o_cm, o_cs, c), bc)

    one_minus_z = 1.0 - z_m
    new_m = one_minus_z * c_m + z_m * h_m
    if bc.cfg.cell_variance_rule == "corrected":
        new_s = ad.square(one_minus_z) * c_s + ad.square(z_m) * h_s
    else:  # table1_literal: printed formula, mixes c_m into the variance
        new_s = ad.clamp(ad.square(1.0 - z_s) * c_m + ad.square(z_s) * h_s, lo=0.0)
    return new_m, new_s


def output_layer_vars(bc: BoundCell, h_m: Var, h_s: Var) -> tuple[Var, Var]:
    """Affine map plus sigmoid moment matching; keeps pixel means in (0,1)."""
    v, c = bc.vars, bc.constants
    o_m = ad.matmul_nt(h_m, v["out.V_m"]) + v["out.b_m"]
    o_s = ad.matmul_nt(h_s, v["out.V_sm2"])
    o_s = o_s + ad.matmul_nt(ad.square(h_m), v["out.V_s"]) + v["out.b_s"]
    y_m = ad.sigmoid_mm_mean(o_m, o_s, c)
    y_s = _clamp0(ad.sigmoid_mm_var(o_m, o_s, c), bc)
    return y_m, y_s


def unroll_vars(bc: BoundCell, frames: np.ndarray, tape=None):
    """Encode the observed frames, then emit outputs per the network mode.

    frames: (batch, time, dim) with time >= input_len; observed frames are
    deterministic (zero input variance).  Returns a list of (y_m, y_s) Var
    pairs of length cfg.n_outputs().
    """
    cfg = bc.cfg
    B, T, D = frames.shape
    if T < cfg.input_len:
        raise ShapeError(f"need at least {cfg.input_len} frames, got {T}")
    H = cfg.hidden

    def mk(arr):
        return tape.leaf(arr) if tape is not None else Var(arr)

    h_m = mk(np.zeros((B, H)))
    h_s = mk(np.zeros((B, H)))
    for t in range(cfg.input_len):
        x_m = mk(np.ascontiguousarray(frames[:, t, :]))
        h_m, h_s = cell_step_vars(bc, x_m, None, h_m, h_s)

    outputs = []
    for _ in range(cfg.n_outputs()):
        h_m, h_s = cell_step_vars(bc, None, None, h_m, h_s)
        outputs.append(output_layer_vars(bc, h_m, h_s))
    return outputs


def targets_for(frames: np.ndarray, cfg: NetworkConfig) -> np.ndarray:
    """Per-mode supervision: reversed inputs, future frames, or both."""
    T_in, T_out = cfg.input_len, cfg.output_len
    recon = frames[:, :T_in][:, ::-1]
    if cfg.mode == "autoencoder":
        return recon
    if frames.shape[1] < T_in + T_out and cfg.mode in ("predictor", "composite"):
        raise ShapeError(
            f"need {T_in + T_out} frames for mode {cfg.mode!r}, got {frames.shape[1]}"
        )
    future = frames[:, T_in:T_in + T_out]
    if cfg.mode == "predictor":
        return future
    return np.concatenate([recon, future], axis=1)


# ---------------------------------------------------------------------------
# functional surface over plain arrays

def cell_step(x: MomentTensor, prev: CellState, p: SpGruParams,
              cfg: NetworkConfig | None = None) -> CellState:
    """Single step over plain arrays (no recording). x, prev may be batched."""
    cfg = cfg or NetworkConfig(hidden=p.hidden)
    x_m, x_s = np.atleast_2d(x.m), np.atleast_2d(x.s)
    h_m, h_s = np.atleast_2d(prev.h_m), np.atleast_2d(prev.h_s)
    if x_m.shape[1] != p.input_dim or h_m.shape[1] != p.hidden:
        raise ShapeError(
            f"x dim {x_m.shape[1]} / state dim {h_m.shape[1]} do not match "
            f"cell ({p.input_dim}, {p.hidden})"
        )
    x_s_var = Var(x_s) if x_s.any() else None
    bc = bind(p, cfg)
    m, s = cell_step_vars(bc, Var(x_m), x_s_var, Var(h_m), Var(h_s))
    return CellState(m.value.reshape(prev.h_m.shape),
                     s.value.reshape(prev.h_s.shape))


def unroll(frames, cfg: NetworkConfig, p: SpGruParams,
           clamp_stats: ClampStats | None = None) -> MomentTensor:
    """Forward pass; returns (B, T_out, D) moments.

    frames: a (batch, time, dim) array or a data.SequenceBatch (flattened
    automatically). Observed frames are deterministic.
    """
    if hasattr(frames, "frames"):  # a data.SequenceBatch
        frames = frames.flat
    cfg.validate()
    bc = bind(p, cfg)
    outputs = unroll_vars(bc, np.asarray(frames, dtype=np.float64))
    if clamp_stats is not None:
        clamp_stats.add(bc.stats.clamped)
    y_m = np.stack([m.value for m, _ in outputs], axis=1)
    y_s = np.stack([s.value for _, s in outputs], axis=1)
    return MomentTensor(y_m, y_s)


# ---------------------------------------------------------------------------
# deterministic reference network (independent oracle and benchmark baseline)

def deterministic_gru_step(x: np.ndarray | None, h: np.ndarray,
                           w: dict[str, np.ndarray]) -> np.ndarray:
    def pre(g, rec):
        o = rec @ w[f"{g}.W_m"].T
        if x is not None:
            o = o + x @ w[f"{g}.U_m"].T
        return o + w[f"{g}.b_m"]

    r = _expit(pre("r", h))
    z = _expit(pre("z", h))
    c = np.tanh(pre("hc", r * h))
    return (1.0 - z) * c + z * h


def deterministic_gru_unroll(frames: np.ndarray, w: dict[str, np.ndarray],
                             cfg: NetworkConfig) -> np.ndarray:
    """Plain GRU with the mean weights; mirrors unroll()'s mode semantics."""
    B, T, D = frames.shape
    H = w["r.W_m"].shape[0]
    h = np.zeros((B, H))
    for t in range(cfg.input_len):
        h = deterministic_gru_step(np.ascontiguousarray(frames[:, t, :]), h, w)
    outs = []
    for _ in range(cfg.n_outputs()):
        h = deterministic_gru_step(None, h, w)
        outs.append(_expit(h @ w["out.V_m"].T + w["out.b_m"]))
    return np.stack(outs, axis=1)
