"""Tape-based reverse-mode differentiation over the fixed training graph.

The graph is small and static (extractor -> layer mix -> soft assignment ->
relaxed sampling -> hardening -> embedding -> classifier -> losses), so the
engine is deliberately minimal: eager numpy forward, one closure per
primitive recorded on a tape, reversed replay for gradients.

The straight-through op is the only place forward and backward disagree:
forward emits the hard one-hot rows, backward passes gradients through
unchanged, so they reach the relaxed probabilities. Gradient checking
therefore runs the surrogate (soft) forward; the hard forward is piecewise
constant and its true derivative is zero almost everywhere.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .core_math import pairwise_sq_dists as _pairwise_np

PROB_FLOOR = 1e-30
_GRADCHECK_DENOM_FLOOR = 1e-8


class AutodiffError(RuntimeError):
    pass


class Tape:
    """Ordered record of one forward pass; consumed by a single backward."""

    def __init__(self):
        self._nodes: list = []
        self._consumed = False
        self._param_vars: dict[str, "Var"] = {}
        self._loss: "Var | None" = None

    def record(self, backward_fn) -> None:
        self._nodes.append(backward_fn)


_active_tape: Tape | None = None


@contextmanager
def recording(tape: Tape):
    global _active_tape
    if _active_tape is not None:
        raise AutodiffError("nested recording is not supported")
    _active_tape = tape
    try:
        yield tape
    finally:
        _active_tape = None


class Var:
    """A value slot on the graph: ndarray payload plus accumulated adjoint."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.requires_grad = bool(requires_grad)


def const(x) -> Var:
    return Var(x, requires_grad=False)


def _acc(v: Var, g: np.ndarray) -> None:
    if not v.requires_grad:
        return
    if v.grad is None:
        v.grad = np.array(g, dtype=float, copy=True)
    else:
        v.grad += g


def _out(data: np.ndarray, inputs: tuple[Var, ...], backward_fn) -> Var:
    req = any(v.requires_grad for v in inputs)
    out = Var(data, requires_grad=req)
    if req and _active_tape is not None:
        def node():
            if out.grad is not None:
                backward_fn(out.grad)
        _active_tape.record(node)
    return out


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a: Var, b: Var) -> Var:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        _acc(a, g)
        _acc(b, g)

    return _out(a.data + b.data, (a, b), bwd)


def sub(a: Var, b: Var) -> Var:
    if a.data.shape != b.data.shape:
        raise ValueError(f"sub shape mismatch: {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        _acc(a, g)
        _acc(b, -g)

    return _out(a.data - b.data, (a, b), bwd)


def mul(a: Var, b: Var) -> Var:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        _acc(a, g * bd)
        _acc(b, g * ad)

    return _out(ad * bd, (a, b), bwd)


def scale(a: Var, c: float) -> Var:
    c = float(c)

    def bwd(g):
        _acc(a, g * c)

    return _out(a.data * c, (a,), bwd)


def matmul(a: Var, b: Var) -> Var:
    if a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        _acc(a, g @ bd.T)
        _acc(b, ad.T @ g)

    return _out(ad @ bd, (a, b), bwd)


def add_bias(x: Var, b: Var) -> Var:
    """Row-broadcast bias add: (T,C) + (C,)."""
    if x.data.shape[-1] != b.data.shape[0] or b.data.ndim != 1:
        raise ValueError(f"bias shape mismatch: {x.data.shape} + {b.data.shape}")

    def bwd(g):
        _acc(x, g)
        _acc(b, g.sum(axis=0))

    return _out(x.data + b.data, (x, b), bwd)


def tanh(a: Var) -> Var:
    td = np.tanh(a.data)

    def bwd(g):
        _acc(a, g * (1.0 - td * td))

    return _out(td, (a,), bwd)


def log_floored(a: Var, floor: float = PROB_FLOOR) -> Var:
    """log(max(a, floor)); zero gradient where the floor binds."""
    clipped = np.maximum(a.data, floor)
    mask = (a.data >= floor).astype(float)

    def bwd(g):
        _acc(a, g * mask / clipped)

    return _out(np.log(clipped), (a,), bwd)


def sum_squares(a: Var) -> Var:
    ad = a.data

    def bwd(g):
        _acc(a, 2.0 * float(g) * ad)

    return _out(np.sum(ad * ad), (a,), bwd)


def total_sum(a: Var) -> Var:
    shape = a.data.shape

    def bwd(g):
        _acc(a, np.full(shape, float(g)))

    return _out(np.sum(a.data), (a,), bwd)


def softmax_rows(z: Var, tau: float) -> Var:
    """Temperature softmax along the last axis (1-D or 2-D input)."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    zd = z.data / tau
    zd = zd - np.max(zd, axis=-1, keepdims=True)
    p = np.exp(zd)
    p /= np.sum(p, axis=-1, keepdims=True)

    def bwd(g):
        dot = np.sum(g * p, axis=-1, keepdims=True)
        _acc(z, p * (g - dot) / tau)

    return _out(p, (z,), bwd)


def pairwise_sq_dists(x: Var, m: Var) -> Var:
    """d[i,j] = ||x_i - m_j||^2 for x (T,D) and m (k,D)."""
    xd, md = x.data, m.data
    d = _pairwise_np(xd, md)

    def bwd(g):
        _acc(x, 2.0 * (xd * g.sum(axis=1, keepdims=True) - g @ md))
        _acc(m, 2.0 * (md * g.sum(axis=0)[:, None] - g.T @ xd))

    return _out(d, (x, m), bwd)


def straight_through(h: Var) -> Var:
    """Harden rows to one-hot at the row argmax; backward is the identity.

    np.argmax picks the first maximum, which implements the documented
    smallest-index tie-break.
    """
    ids = np.argmax(h.data, axis=1)
    onehot = np.zeros_like(h.data)
    onehot[np.arange(h.data.shape[0]), ids] = 1.0

    def bwd(g):
        _acc(h, g)

    return _out(onehot, (h,), bwd)


def cross_entropy_mean(logits: Var, labels: np.ndarray) -> Var:
    """Mean over rows of -log softmax(logits)[label]."""
    labels = np.asarray(labels)
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match {n} rows")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("label id out of range")
    z = logits.data - np.max(logits.data, axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = float(-np.mean(np.log(np.maximum(p[rows, labels], PROB_FLOOR))))

    def bwd(g):
        grad = p.copy()
        grad[rows, labels] -= 1.0
        _acc(logits, float(g) * grad / n)

    return _out(loss, (logits,), bwd)


def weighted_layers(stack: list[Var], w: Var) -> Var:
    """sum_l w[l] * stack[l] for a list of equally shaped layers."""
    if len(stack) != w.data.shape[0]:
        raise ValueError(f"{len(stack)} layers vs {w.data.shape[0]} weights")
    wd = w.data
    out_data = sum(wd[l] * stack[l].data for l in range(len(stack)))

    def bwd(g):
        gw = np.array([np.sum(g * stack[l].data) for l in range(len(stack))])
        _acc(w, gw)
        for l, layer in enumerate(stack):
            _acc(layer, wd[l] * g)

    return _out(out_data, tuple(stack) + (w,), bwd)


# ---------------------------------------------------------------------------
# parameter sets and driver
# ---------------------------------------------------------------------------

@dataclass
class ParamSet:
    """Named learnable arrays with per-name trainable flags."""

    values: dict[str, np.ndarray] = field(default_factory=dict)
    trainable: dict[str, bool] = field(default_factory=dict)

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> None:
        if name in self.values:
            raise ValueError(f"duplicate parameter name {name!r}")
        self.values[name] = np.asarray(value, dtype=float)
        self.trainable[name] = bool(trainable)

    def names(self) -> list[str]:
        return list(self.values)

    def trainable_names(self) -> list[str]:
        return [n for n in self.values if self.trainable[n]]

    def set_trainable(self, names) -> None:
        names = set(names)
        unknown = names - set(self.values)
        if unknown:
            raise KeyError(f"unknown parameters: {sorted(unknown)}")
        for n in self.values:
            self.trainable[n] = n in names

    def copy(self) -> "ParamSet":
        return ParamSet(
            values={n: v.copy() for n, v in self.values.items()},
            trainable=dict(self.trainable),
        )


def forward_record(graph_fn, params: ParamSet, inputs) -> tuple[float, Tape]:
    """Run graph_fn under a fresh tape; returns the scalar loss and the tape.

    graph_fn receives (param_vars: dict[str, Var], inputs) and must return a
    Var composed only of the primitives in this module.
    """
    tape = Tape()
    param_vars = {
        name: Var(val, requires_grad=params.trainable[name])
        for name, val in params.values.items()
    }
    with recording(tape):
        out = graph_fn(param_vars, inputs)
    if not isinstance(out, Var):
        raise AutodiffError("graph_fn must return a Var")
    if np.asarray(out.data).size != 1:
        raise AutodiffError(f"loss must be scalar, got shape {np.shape(out.data)}")
    tape._param_vars = param_vars
    tape._loss = out
    return float(out.data), tape


def backward(tape: Tape) -> dict[str, np.ndarray]:
    """Reverse the tape once; returns gradients keyed by parameter name.

    Frozen parameters (and trainable ones the loss does not touch) come back
    zero-filled.
    """
    if tape._consumed:
        raise AutodiffError("tape already consumed; re-record before backward")
    if tape._loss is None:
        raise AutodiffError("tape holds no recorded loss")
    tape._consumed = True
    tape._loss.grad = np.ones_like(tape._loss.data)
    for node in reversed(tape._nodes):
        node()
    grads = {}
    for name, var in tape._param_vars.items():
        if var.requires_grad and var.grad is not None:
            grads[name] = var.grad
        else:
            grads[name] = np.zeros_like(var.data)
    return grads


def numeric_grad(f, params: ParamSet, name: str, eps: float) -> np.ndarray:
    """Central finite differences of scalar f() in the named parameter."""
    base = params.values[name]
    g = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def gradcheck(graph_fn, params: ParamSet, inputs, eps: float = 1e-5) -> dict:
    """Compare backward() against central differences, coordinate by coordinate.

    Returns {name: {"max_rel_err", "argmax_coordinate"}}. Raises if graph_fn
    is not deterministic under repeated evaluation.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps must be in [1e-7, 1e-3], got {eps}")

    def evaluate() -> float:
        param_vars = {
            n: Var(v, requires_grad=False) for n, v in params.values.items()
        }
        out = graph_fn(param_vars, inputs)
        return float(out.data)

    if evaluate() != evaluate():
        raise AutodiffError("graph_fn is not deterministic; fix its noise first")

    _, tape = forward_record(graph_fn, params, inputs)
    analytic = backward(tape)

    report: dict[str, dict] = {}
    for name in params.names():
        if not params.trainable[name]:
            report[name] = {"max_rel_err": 0.0, "argmax_coordinate": None}
            continue
        numeric = numeric_grad(evaluate, params, name, eps)
        a = analytic[name].reshape(-1)
        n = numeric.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), _GRADCHECK_DENOM_FLOOR)
        rel = np.abs(a - n) / denom
        idx = int(np.argmax(rel)) if rel.size else 0
        coord = ([int(c) for c in np.unravel_index(idx, analytic[name].shape)]
                 if rel.size else None)
        report[name] = {
            "max_rel_err": float(rel[idx]) if rel.size else 0.0,
            "argmax_coordinate": coord,
        }
    return report
