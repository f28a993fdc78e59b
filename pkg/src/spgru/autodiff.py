"""Reverse-mode differentiation over a recorded tape of numpy primitives.

A :class:`Tape` records array-valued operations; :func:`Tape.backward` walks
the records in reverse and accumulates vector-Jacobian products.  Passing
``tape=None`` to :func:`leaf` (or building Vars whose tape is None) runs the
same operations eagerly with no recording, which is the inference path.

The closed-form moment-matching nonlinearities are registered as single
primitives with hand-derived derivatives rather than traced elementwise.
Clamp kinks use subgradient 0 at the boundary; every clamp records its
pass-through mask so :func:`grad_check` can exclude coordinates whose
perturbation crosses a kink.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from . import moments
from .errors import NonFiniteError, NonScalarLossError, ShapeError


@dataclass
class _Node:
    inputs: tuple
    vjp: Callable | None  # vjp(grad_out) -> per-input grads; None for leaves


class Tape:
    """Ordered record of primitive ops; one tape per training step."""

    def __init__(self, check_finite: bool = False):
        self.nodes: list[_Node] = []
        self.adjoints: dict[int, np.ndarray] = {}
        self.clamp_masks: list[np.ndarray] = []
        self.clamped_total: int = 0
        self.check_finite = check_finite

    def leaf(self, value) -> "Var":
        value = np.asarray(value, dtype=np.float64)
        self.nodes.append(_Node((), None))
        return Var(value, self, len(self.nodes) - 1)

    def backward(self, loss: "Var") -> dict[int, np.ndarray]:
        """Fill adjoints for every node reachable from the scalar loss."""
        if loss.tape is not self:
            raise ValueError("loss was recorded on a different tape")
        if loss.value.size != 1:
            raise NonScalarLossError(f"loss has shape {loss.value.shape}")
        adj: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.value)}
        for nid in range(loss.node, -1, -1):
            g = adj.get(nid)
            if g is None:
                continue
            node = self.nodes[nid]
            if node.vjp is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None:
                    continue
                if inp in adj:
                    adj[inp] = adj[inp] + gi
                else:
                    adj[inp] = gi
        self.adjoints = adj
        return adj

    def grad(self, var: "Var") -> np.ndarray:
        g = self.adjoints.get(var.node)
        return np.zeros_like(var.value) if g is None else g


class Var:
    """Array value tied to a tape node (or free-floating when tape is None)."""

    __slots__ = ("value", "tape", "node")

    def __init__(self, value, tape: Tape | None = None, node: int | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        if self.tape is None:
            return np.zeros_like(self.value)
        return self.tape.grad(self)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub_from_const(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _tape_of(*vars_) -> Tape | None:
    tapes = {v.tape for v in vars_ if isinstance(v, Var) and v.tape is not None}
    if len(tapes) > 1:
        raise ValueError("operands recorded on different tapes")
    for v in vars_:
        if isinstance(v, Var) and v.tape is None and tapes:
            raise ValueError("mixing recorded and unrecorded Vars")
    return tapes.pop() if tapes else None


def _record(tape: Tape | None, value: np.ndarray, inputs: tuple, make_vjp) -> Var:
    if tape is None:
        return Var(value)
    if tape.check_finite and not np.isfinite(value).all():
        raise NonFiniteError("non-finite value produced at record time")
    tape.nodes.append(_Node(tuple(v.node for v in inputs), make_vjp()))
    return Var(value, tape, len(tape.nodes) - 1)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] > 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic primitives

def add(a: Var, b) -> Var:
    if not isinstance(b, Var):
        c = np.asarray(b, dtype=np.float64)
        return _record(a.tape, a.value + c, (a,), lambda: lambda g: (_unbroadcast(g, a.shape),))
    tape = _tape_of(a, b)
    ash, bsh = a.shape, b.shape
    return _record(
        tape, a.value + b.value, (a, b),
        lambda: lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh)),
    )


def sub(a: Var, b) -> Var:
    if not isinstance(b, Var):
        c = np.asarray(b, dtype=np.float64)
        return _record(a.tape, a.value - c, (a,), lambda: lambda g: (_unbroadcast(g, a.shape),))
    tape = _tape_of(a, b)
    ash, bsh = a.shape, b.shape
    return _record(
        tape, a.value - b.value, (a, b),
        lambda: lambda g: (_unbroadcast(g, ash), -_unbroadcast(g, bsh)),
    )


def sub_from_const(c, a: Var) -> Var:
    c = np.asarray(c, dtype=np.float64)
    return _record(a.tape, c - a.value, (a,), lambda: lambda g: (-_unbroadcast(g, a.shape),))


def neg(a: Var) -> Var:
    return _record(a.tape, -a.value, (a,), lambda: lambda g: (-g,))


def mul(a: Var, b) -> Var:
    if not isinstance(b, Var):
        c = np.asarray(b, dtype=np.float64)
        return _record(a.tape, a.value * c, (a,), lambda: lambda g: (_unbroadcast(g * c, a.shape),))
    tape = _tape_of(a, b)
    av, bv = a.value, b.value
    return _record(
        tape, av * bv, (a, b),
        lambda: lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def matmul(a: Var, b: Var) -> Var:
    tape = _tape_of(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} x {b.shape}")
    av, bv = a.value, b.value
    return _record(
        tape, av @ bv, (a, b),
        lambda: lambda g: (g @ bv.T, av.T @ g),
    )


def matmul_nt(a: Var, w: Var) -> Var:
    """a @ w.T for a (batch, in) and w (out, in); fused transpose."""
    tape = _tape_of(a, w)
    if a.value.ndim != 2 or w.value.ndim != 2 or a.shape[1] != w.shape[1]:
        raise ShapeError(f"matmul_nt shapes {a.shape} x {w.shape}^T")
    av, wv = a.value, w.value
    return _record(
        tape, av @ wv.T, (a, w),
        lambda: lambda g: (g @ wv, g.T @ av),
    )


def square(a: Var) -> Var:
    av = a.value
    return _record(a.tape, av * av, (a,), lambda: lambda g: (2.0 * av * g,))


def sqrt_(a: Var) -> Var:
    out = np.sqrt(a.value)
    return _record(a.tape, out, (a,), lambda: lambda g: (0.5 * g / out,))


def exp_(a: Var) -> Var:
    out = np.exp(a.value)
    return _record(a.tape, out, (a,), lambda: lambda g: (g * out,))


def log_(a: Var) -> Var:
    av = a.value
    return _record(a.tape, np.log(av), (a,), lambda: lambda g: (g / av,))


def sigmoid_(a: Var) -> Var:
    out = expit(a.value)
    return _record(a.tape, out, (a,), lambda: lambda g: (g * out * (1.0 - out),))


def softplus(a: Var) -> Var:
    """log(1 + exp(x)), the positivity reparametrization of variances."""
    av = a.value
    out = np.logaddexp(0.0, av)
    return _record(a.tape, out, (a,), lambda: lambda g: (g * expit(av),))


def clamp(a: Var, lo: float | None = None, hi: float | None = None) -> Var:
    """Elementwise clip; gradient 1 strictly inside, 0 in the clamped region."""
    av = a.value
    mask = np.ones(av.shape, dtype=bool)
    if lo is not None:
        mask &= av > lo
    if hi is not None:
        mask &= av < hi
    out = np.clip(av, lo, hi)
    if a.tape is not None:
        a.tape.clamp_masks.append(mask)
        a.tape.clamped_total += int(av.size - np.count_nonzero(mask))
    return _record(a.tape, out, (a,), lambda: lambda g: (g * mask,))


def vsum(a: Var) -> Var:
    ash = a.shape
    return _record(
        a.tape, np.asarray(a.value.sum()), (a,),
        lambda: lambda g: (np.broadcast_to(g, ash).copy() if ash else g,),
    )


def vmean(a: Var) -> Var:
    n = a.value.size
    ash = a.shape
    return _record(
        a.tape, np.asarray(a.value.mean()), (a,),
        lambda: lambda g: (np.broadcast_to(g / n, ash).copy() if ash else g / n,),
    )


# ---------------------------------------------------------------------------
# moment-matching composites (single primitives, analytic derivatives)

def sigmoid_mm_mean(m: Var, s: Var, c: moments.NmmConstants = moments.DEFAULT_CONSTANTS) -> Var:
    tape = _tape_of(m, s)
    den2 = 1.0 + c.zeta**2 * s.value
    den = np.sqrt(den2)
    u = m.value / den
    y = expit(u)

    def make():
        def vjp(g):
            dy = y * (1.0 - y)
            gm = g * dy / den
            gs = g * dy * (-0.5 * c.zeta**2) * u / den2
            return gm, gs

        return vjp

    return _record(tape, y, (m, s), make)


def sigmoid_mm_var(m: Var, s: Var, c: moments.NmmConstants = moments.DEFAULT_CONSTANTS) -> Var:
    tape = _tape_of(m, s)
    zn2 = (c.zeta * c.nu_sig) ** 2
    denu2 = 1.0 + c.zeta**2 * s.value
    denu = np.sqrt(denu2)
    denv2 = 1.0 + zn2 * s.value
    denv = np.sqrt(denv2)
    u = m.value / denu
    v = c.nu_sig * (m.value + c.omega_sig) / denv
    su, sv = expit(u), expit(v)
    out = np.where(s.value == 0.0, 0.0, sv - su * su)

    def make():
        def vjp(g):
            dsv = sv * (1.0 - sv)
            dsu = su * (1.0 - su)
            gm = g * (dsv * c.nu_sig / denv - 2.0 * su * dsu / denu)
            gs = g * (dsv * (-0.5 * zn2) * v / denv2 - 2.0 * su * dsu * (-0.5 * c.zeta**2) * u / denu2)
            return gm, gs

        return vjp

    return _record(tape, out, (m, s), make)


def tanh_mm_mean(m: Var, s: Var, c: moments.NmmConstants = moments.DEFAULT_CONSTANTS) -> Var:
    tape = _tape_of(m, s)
    den2 = 0.25 + c.zeta**2 * s.value
    den = np.sqrt(den2)
    p = m.value / den
    sp = expit(p)
    out = 2.0 * sp - 1.0

    def make():
        def vjp(g):
            dsp = sp * (1.0 - sp)
            gm = g * 2.0 * dsp / den
            gs = g * 2.0 * dsp * (-0.5 * c.zeta**2) * p / den2
            return gm, gs

        return vjp

    return _record(tape, out, (m, s), make)


def tanh_mm_var(m: Var, s: Var, c: moments.NmmConstants = moments.DEFAULT_CONSTANTS) -> Var:
    tape = _tape_of(m, s)
    zn2 = (c.zeta * c.nu_tanh) ** 2
    denp2 = 0.25 + c.zeta**2 * s.value
    denp = np.sqrt(denp2)
    denq2 = 1.0 + zn2 * s.value
    denq = np.sqrt(denq2)
    p = m.value / denp
    q = c.nu_tanh * (m.value + c.omega_tanh) / denq
    sp, sq = expit(p), expit(q)
    out = np.where(s.value == 0.0, 0.0, 4.0 * (sq - sp * sp))

    def make():
        def vjp(g):
            dsq = sq * (1.0 - sq)
            dsp = sp * (1.0 - sp)
            gm = g * 4.0 * (dsq * c.nu_tanh / denq - 2.0 * sp * dsp / denp)
            gs = g * 4.0 * (dsq * (-0.5 * zn2) * q / denq2 - 2.0 * sp * dsp * (-0.5 * c.zeta**2) * p / denp2)
            return gm, gs

        return vjp

    return _record(tape, out, (m, s), make)


# ---------------------------------------------------------------------------
# loss kernels

def bce_sum(p: Var, targets: np.ndarray, scale: float = 1.0) -> Var:
    """scale * sum of -[t log p + (1-t) log(1-p)] over all elements."""
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != p.shape:
        raise ShapeError(f"target shape {t.shape} != prediction shape {p.shape}")
    pv = p.value
    val = np.asarray(-scale * np.sum(t * np.log(pv) + (1.0 - t) * np.log1p(-pv)))

    def make():
        def vjp(g):
            return (g * scale * (pv - t) / (pv * (1.0 - pv)),)

        return vjp

    return _record(p.tape, val, (p,), make)


def gaussian_nll_sum(m: Var, s: Var, targets: np.ndarray, scale: float = 1.0) -> Var:
    """scale * sum of 0.5*[log(2 pi s) + (t - m)^2 / s]."""
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != m.shape:
        raise ShapeError(f"target shape {t.shape} != prediction shape {m.shape}")
    tape = _tape_of(m, s)
    mv, sv = m.value, s.value
    r = t - mv
    val = np.asarray(scale * 0.5 * np.sum(np.log(2.0 * np.pi * sv) + r * r / sv))

    def make():
        def vjp(g):
            gm = g * scale * (mv - t) / sv
            gs = g * scale * 0.5 * (1.0 / sv - r * r / (sv * sv))
            return gm, gs

        return vjp

    return _record(tape, val, (m, s), make)


# ---------------------------------------------------------------------------
# finite-difference verification

@dataclass
class GradCheckEntry:
    name: str
    max_err: float
    n_checked: int
    n_excluded: int
    passed: bool


@dataclass
class GradCheckReport:
    tol: float
    h: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def __str__(self):
        lines = [f"grad check: h={self.h:g} tol={self.tol:g}"]
        for e in self.entries:
            lines.append(
                f"  {e.name:24s} max_err={e.max_err:.3e} "
                f"checked={e.n_checked} excluded={e.n_excluded} "
                f"{'ok' if e.passed else 'FAIL'}"
            )
        return "\n".join(lines)


def _evaluate(f, params: dict[str, np.ndarray]):
    tape = Tape()
    leaves = {k: tape.leaf(v) for k, v in params.items()}
    loss = f(tape, leaves)
    grads = tape.backward(loss)
    analytic = {k: tape.grad(leaves[k]) for k in params}
    masks = [m.copy() for m in tape.clamp_masks]
    return float(loss.value), analytic, masks


def _same_masks(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(
    f,
    params: dict[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-4,
    abs_floor: float = 1e-6,
    lower_bounds: dict[str, float] | None = None,
) -> GradCheckReport:
    """Compare every coordinate's analytic gradient with finite differences.

    f(tape, vars) must build and return the scalar loss Var.  Central
    differences by default; one-sided above a declared per-parameter lower
    bound.  Coordinates whose +/-h evaluations disagree on any clamp mask
    straddle a kink and are reported as excluded.
    """
    lower_bounds = lower_bounds or {}
    base_loss, analytic, base_masks = _evaluate(f, params)
    report = GradCheckReport(tol=tol, h=h)
    for name, arr in params.items():
        a_grad = analytic[name]
        flat = arr.reshape(-1)
        max_err, checked, excluded = 0.0, 0, 0
        lb = lower_bounds.get(name)
        for i in range(flat.size):
            orig = flat[i]
            one_sided = lb is not None and (orig - h) < lb
            flat[i] = orig + h
            lp, _, masks_p = _evaluate(f, params)
            if one_sided:
                fd = (lp - base_loss) / h
                masks_m = base_masks
            else:
                flat[i] = orig - h
                lm, _, masks_m = _evaluate(f, params)
                fd = (lp - lm) / (2.0 * h)
            flat[i] = orig
            if not _same_masks(masks_p, masks_m):
                excluded += 1
                continue
            ad = float(a_grad.reshape(-1)[i])
            err = abs(ad - fd) / max(abs_floor, abs(ad), abs(fd))
            max_err = max(max_err, err)
            checked += 1
        report.entries.append(
            GradCheckEntry(name, max_err, checked, excluded, max_err <= tol)
        )
    return report
