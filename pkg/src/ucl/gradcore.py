"""Tape-based reverse-mode differentiation over numpy arrays.

Only the handful of primitives needed by the small feed-forward models in
this package are supported. Every primitive appends one node to the
:class:`Tape` that owns its inputs; :meth:`Tape.backward` walks the nodes in
reverse creation order, so each recorded op is visited exactly once.

Plain numpy arrays and Python scalars mixed into an expression are treated
as constants: they carry no gradient. That is also how sample weights are
detached from the graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .exceptions import ConfigurationError, UsageError

__all__ = [
    "Var",
    "Tape",
    "DenseLayerParams",
    "forward_mlp",
    "backward",
    "finite_diff_check",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "affine",
    "relu",
    "identity",
    "sigmoid",
    "exp",
    "log",
    "square",
    "clip",
    "sum",
    "mean",
    "softmax",
    "log_softmax",
    "concat",
    "gather",
    "reshape",
]


class Var:
    """A node on a :class:`Tape`: a float64 array plus how to route gradients."""

    __slots__ = ("value", "tape", "parents", "backward_fn", "name", "index")

    def __init__(self, value, tape, parents=(), backward_fn=None, name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name
        self.index = -1

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Var(shape={self.value.shape}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _getitem(self, key)


class Tape:
    """Ordered record of primitive ops with their cached intermediates."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.params: dict[str, Var] = {}

    def __len__(self):
        return len(self.nodes)

    def _record(self, value, parents, backward_fn, name=None):
        var = Var(np.asarray(value, dtype=np.float64), self, parents, backward_fn, name)
        var.index = len(self.nodes)
        self.nodes.append(var)
        return var

    def param(self, name: str, value) -> Var:
        """Register a trainable leaf. Names must be unique per tape."""
        if name in self.params:
            raise UsageError(f"parameter {name!r} already registered on this tape")
        var = self._record(np.array(value, dtype=np.float64), (), None, name)
        self.params[name] = var
        return var

    def constant(self, value) -> Var:
        return self._record(np.array(value, dtype=np.float64), (), None)

    def backward(self, root: Var, seed: float = 1.0) -> dict[str, np.ndarray]:
        """Gradient of the scalar ``root`` w.r.t. every registered parameter.

        Gradients are accumulated into a fresh map on every call, so replaying
        a tape is side-effect free. Parameters that do not influence ``root``
        get an all-zero gradient.
        """
        if not isinstance(root, Var) or root.tape is not self:
            raise UsageError("root does not belong to this tape")
        if root.value.size != 1:
            raise UsageError(f"backward needs a scalar root, got shape {root.value.shape}")
        grads: dict[int, np.ndarray] = {
            root.index: np.full(root.value.shape, float(seed), dtype=np.float64)
        }
        for node in reversed(self.nodes[: root.index + 1]):
            if node.backward_fn is None:
                continue
            g = grads.pop(node.index, None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not isinstance(parent, Var):
                    continue
                if parent.index in grads:
                    grads[parent.index] = grads[parent.index] + pg
                else:
                    grads[parent.index] = pg
        out = {}
        for name, var in self.params.items():
            g = grads.get(var.index)
            out[name] = np.zeros_like(var.value) if g is None else np.array(g, dtype=np.float64)
        return out


def backward(tape: Tape, root: Var, seed: float = 1.0) -> dict[str, np.ndarray]:
    """Functional alias for :meth:`Tape.backward`."""
    return tape.backward(root, seed)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _tape_of(*operands) -> Tape:
    tape = None
    for op in operands:
        if isinstance(op, Var):
            if tape is None:
                tape = op.tape
            elif op.tape is not tape:
                raise UsageError("operands recorded on different tapes")
    if tape is None:
        raise UsageError("at least one operand must be a Var")
    return tape


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def add(a, b) -> Var:
    av, bv = _val(a), _val(b)

    def fn(g):
        return _unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)

    return _tape_of(a, b)._record(av + bv, (a, b), fn)


def sub(a, b) -> Var:
    av, bv = _val(a), _val(b)

    def fn(g):
        return _unbroadcast(g, av.shape), -_unbroadcast(g, bv.shape)

    return _tape_of(a, b)._record(av - bv, (a, b), fn)


def mul(a, b) -> Var:
    av, bv = _val(a), _val(b)

    def fn(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _tape_of(a, b)._record(av * bv, (a, b), fn)


def neg(a: Var) -> Var:
    return a.tape._record(-a.value, (a,), lambda g: (-g,))


def matmul(a, b) -> Var:
    """Matrix product of 1-D or 2-D operands."""
    av, bv = _val(a), _val(b)

    def fn(g):
        a2 = av if av.ndim == 2 else av[None, :]
        b2 = bv if bv.ndim == 2 else bv[:, None]
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        ga = (g2 @ b2.T).reshape(av.shape)
        gb = (a2.T @ g2).reshape(bv.shape)
        return ga, gb

    return _tape_of(a, b)._record(av @ bv, (a, b), fn)


def affine(x, weight, bias) -> Var:
    """``x @ weight.T + bias`` for a vector or a row-batch ``x``."""
    xv, wv, bv = _val(x), _val(weight), _val(bias)
    if xv.shape[-1] != wv.shape[1] or bv.shape != (wv.shape[0],):
        raise ConfigurationError(
            f"affine shape mismatch: x {xv.shape}, weight {wv.shape}, bias {bv.shape}"
        )

    def fn(g):
        x2 = xv if xv.ndim == 2 else xv[None, :]
        g2 = g if g.ndim == 2 else g[None, :]
        gx = (g2 @ wv).reshape(xv.shape)
        return gx, g2.T @ x2, g2.sum(axis=0)

    return _tape_of(x, weight, bias)._record(xv @ wv.T + bv, (x, weight, bias), fn)


def relu(a: Var) -> Var:
    mask = a.value > 0
    return a.tape._record(np.maximum(a.value, 0.0), (a,), lambda g: (g * mask,))


def identity(a: Var) -> Var:
    return a


def sigmoid(a: Var) -> Var:
    out = _sigmoid(a.value)
    return a.tape._record(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return a.tape._record(out, (a,), lambda g: (g * out,))


def log(a: Var) -> Var:
    av = a.value
    return a.tape._record(np.log(av), (a,), lambda g: (g / av,))


def square(a: Var) -> Var:
    av = a.value
    return a.tape._record(av * av, (a,), lambda g: (2.0 * av * g,))


def clip(a: Var, lo: float, hi: float) -> Var:
    """Clamp to ``[lo, hi]``; the gradient is zero where clamping is active."""
    inside = (a.value >= lo) & (a.value <= hi)
    return a.tape._record(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,))


def sum(a: Var, axis=None) -> Var:  # noqa: A001 - mirrors numpy
    shape = a.value.shape

    def fn(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return a.tape._record(a.value.sum(axis=axis), (a,), fn)


def mean(a: Var, axis=None) -> Var:
    shape = a.value.shape
    count = a.value.size if axis is None else shape[axis]

    def fn(g):
        if axis is None:
            return (np.broadcast_to(g / count, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g / count, axis), shape).copy(),)

    return a.tape._record(a.value.mean(axis=axis), (a,), fn)


def softmax(a: Var) -> Var:
    """Softmax along the last axis."""
    z = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return a.tape._record(out, (a,), fn)


def log_softmax(a: Var) -> Var:
    """Log-softmax along the last axis, computed stably."""
    z = a.value - a.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    probs = np.exp(out)

    def fn(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return a.tape._record(out, (a,), fn)


def concat(parts: Sequence[Var], axis: int = -1) -> Var:
    values = [_val(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _tape_of(*parts)._record(out, tuple(parts), fn)


def _getitem(a: Var, key) -> Var:
    shape = a.value.shape

    def fn(g):
        full = np.zeros(shape, dtype=np.float64)
        np.add.at(full, key, g)
        return (full,)

    return a.tape._record(a.value[key], (a,), fn)


def gather(a: Var, index) -> Var:
    """Pick ``a[..., index]`` per row: ``a`` has shape (..., C), ``index`` shape (...,)."""
    index = np.asarray(index, dtype=np.intp)
    shape = a.value.shape
    picked = np.take_along_axis(a.value, index[..., None], axis=-1)[..., 0]

    def fn(g):
        full = np.zeros(shape, dtype=np.float64)
        np.put_along_axis(full, index[..., None], g[..., None], axis=-1)
        return (full,)

    return a.tape._record(picked, (a,), fn)


def reshape(a: Var, shape) -> Var:
    old = a.value.shape
    return a.tape._record(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


_ACTIVATIONS: dict[str, Callable[[Var], Var]] = {"relu": relu, "identity": identity}


@dataclass
class DenseLayerParams:
    """Weight (out_dim x in_dim) and bias (out_dim) of one affine layer."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64)
        self.bias = np.array(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ConfigurationError(
                f"inconsistent layer shapes: weight {self.weight.shape}, bias {self.bias.shape}"
            )
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ConfigurationError("layer parameters must be finite")

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]


def forward_mlp(
    layers,
    x,
    activation: str = "relu",
    tape: Tape | None = None,
    prefix: str = "mlp",
) -> Var:
    """Evaluate ``h_i = act(W_i h_{i-1} + b_i)`` for every layer, recording on ``tape``.

    ``layers`` holds :class:`DenseLayerParams` (registered on the tape as
    ``{prefix}.{i}.weight`` / ``{prefix}.{i}.bias``) or ``(weight, bias)``
    pairs of already-registered :class:`Var`.
    """
    if activation not in _ACTIVATIONS:
        raise ConfigurationError(f"unknown activation {activation!r}")
    act = _ACTIVATIONS[activation]
    if tape is None:
        tape = x.tape if isinstance(x, Var) else Tape()
    h = x if isinstance(x, Var) else tape.constant(x)
    if not np.all(np.isfinite(h.value)):
        raise ConfigurationError("input to forward_mlp must be finite")
    for i, layer in enumerate(layers):
        if isinstance(layer, DenseLayerParams):
            w = tape.param(f"{prefix}.{i}.weight", layer.weight)
            b = tape.param(f"{prefix}.{i}.bias", layer.bias)
        else:
            w, b = layer
        h = act(affine(h, w, b))
    return h


def finite_diff_check(
    loss_fn: Callable[[Mapping[str, np.ndarray], Tape], Var],
    params: Mapping[str, np.ndarray],
    h: float = 1e-4,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``loss_fn(params, tape)`` must register the arrays of ``params`` on
    ``tape`` (under the same names) and return a scalar :class:`Var`. It has
    to be deterministic, so any sampling inside it needs a fixed seed.
    """
    if h <= 0:
        raise ConfigurationError("finite-difference step must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tape = Tape()
    root = loss_fn(base, tape)
    analytic = tape.backward(root)
    if float(loss_fn(base, Tape()).value) != float(root.value):
        raise UsageError("loss_fn is not deterministic; fix its random seeds")

    worst = 0.0
    for name, value in base.items():
        g_an = analytic.get(name, np.zeros_like(value))
        flat = value.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            f_plus = float(loss_fn(base, Tape()).value)
            flat[j] = orig - h
            f_minus = float(loss_fn(base, Tape()).value)
            flat[j] = orig
            g_fd = (f_plus - f_minus) / (2.0 * h)
            ga = float(g_an.reshape(-1)[j])
            denom = max(abs(ga), abs(g_fd), 1e-8)
            worst = max(worst, abs(ga - g_fd) / denom)
    return worst
