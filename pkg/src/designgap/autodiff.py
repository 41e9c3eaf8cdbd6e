"""Small reverse-mode automatic differentiation over dense float64 arrays.

Graphs are built eagerly: every operation computes its forward value at call
time and records a closure that propagates adjoints to its parents. Calling
:func:`backward` on a scalar node fills ``.grad`` on every node reachable
from it.

Only the operations the choice model needs are provided. Numerically
delicate composites (softmax cross-entropy, Bernoulli log-likelihood from
logits, the Gaussian negative log-likelihood with a variance floor) are
primitives with hand-written adjoints rather than compositions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

VARIANCE_FLOOR = 1e-4
LOG_2PI = math.log(2.0 * math.pi)

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]


class Tensor:
    """A node in the computation graph.

    Parameters
    ----------
    value : array_like
        Forward value, stored as a float64 array.
    parents : tuple of Tensor
        Nodes this one was computed from.
    op : str
        Name of the producing operation (``"leaf"`` for inputs and parameters).
    name : str, optional
        Label used in gradient-check reports.
    """

    __slots__ = ("value", "grad", "parents", "op", "name", "_backward")
    __array_priority__ = 100.0

    def __init__(self, value: ArrayLike, parents: tuple = (), op: str = "leaf",
                 name: Optional[str] = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.parents = parents
        self.op = op
        self.name = name
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _node(value, parents, op, backward) -> Tensor:
    out = Tensor(value, parents, op)
    out._backward = backward
    return out


def _acc(t: Tensor, g: np.ndarray) -> None:
    t.grad += _unbroadcast(g, t.value.shape)


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _acc(a, g)
        _acc(b, g)
    return _node(a.value + b.value, (a, b), "add", bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _acc(a, g)
        _acc(b, -g)
    return _node(a.value - b.value, (a, b), "sub", bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.value, (a,), "neg", lambda g: _acc(a, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _acc(a, g * b.value)
        _acc(b, g * a.value)
    return _node(a.value * b.value, (a, b), "mul", bw)


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.value ** 2, (a,), "square", lambda g: _acc(a, 2.0 * a.value * g))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _acc(a, g @ b.value.T)
        _acc(b, a.value.T @ g)
    return _node(a.value @ b.value, (a, b), "matmul", bw)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.value.T, (a,), "transpose", lambda g: _acc(a, g.T))


def rows(a, index) -> Tensor:
    """Select rows ``a[index]``; repeated indices accumulate in the adjoint."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)

    def bw(g):
        full = np.zeros_like(a.value)
        np.add.at(full, index, g)
        a.grad += full
    return _node(a.value[index], (a,), "rows", bw)


def reduce_sum(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        a.grad += np.broadcast_to(g, a.value.shape)
    return _node(a.value.sum(axis=axis), (a,), "reduce_sum", bw)


# -- nonlinearities -------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.value)
    return _node(y, (a,), "tanh", lambda g: _acc(a, g * (1.0 - y * y)))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    return _node(a.value * mask, (a,), "relu", lambda g: _acc(a, g * mask))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.value)
    return _node(y, (a,), "sigmoid", lambda g: _acc(a, g * y * (1.0 - y)))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return _node(_softplus(a.value), (a,), "softplus",
                 lambda g: _acc(a, g * _sigmoid(a.value)))


def clamped_softplus(a, floor: float) -> Tensor:
    """``max(softplus(a), floor)``; the adjoint is zero where the floor binds."""
    a = as_tensor(a)
    sp = _softplus(a.value)
    active = sp > floor
    return _node(np.where(active, sp, floor), (a,), "clamped_softplus",
                 lambda g: _acc(a, g * _sigmoid(a.value) * active))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.value)
    return _node(y, (a,), "exp", lambda g: _acc(a, g * y))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore"):
        y = np.log(a.value)
    return _node(y, (a,), "log", lambda g: _acc(a, g / a.value))


# -- fused likelihood primitives ------------------------------------------------

def log_softmax_np(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax_np(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.exp(log_softmax_np(logits, axis))


def softmax_cross_entropy(logits, targets) -> Tensor:
    """Summed ``-log softmax(logits)[row, target]`` over rows of a 2-D logit matrix."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.intp)
    n = logits.value.shape[0]
    logp = log_softmax_np(logits.value)
    loss = -logp[np.arange(n), targets].sum()

    def bw(g):
        d = np.exp(logp)
        d[np.arange(n), targets] -= 1.0
        logits.grad += g * d
    return _node(loss, (logits,), "softmax_cross_entropy", bw)


def bernoulli_nll(logits, targets) -> Tensor:
    """Summed Bernoulli negative log-likelihood of 0/1 ``targets`` given logits."""
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.float64)
    loss = (_softplus(logits.value) - t * logits.value).sum()
    return _node(loss, (logits,), "bernoulli_nll",
                 lambda g: _acc(logits, g * (_sigmoid(logits.value) - t)))


def gaussian_nll(x, mean, var_raw, floor: float = VARIANCE_FLOOR) -> Tensor:
    """Summed Gaussian negative log-density of ``x``.

    The variance is ``max(softplus(var_raw), floor)``; ``var_raw`` broadcasts
    against ``mean`` (a single column gives an isotropic variance per row).
    ``x`` is treated as data and receives no adjoint.
    """
    mean, var_raw = as_tensor(mean), as_tensor(var_raw)
    x = np.asarray(x.value if isinstance(x, Tensor) else x, dtype=np.float64)
    sp = _softplus(var_raw.value)
    active = sp > floor
    var = np.where(active, sp, floor)
    resid = x - mean.value
    loss = 0.5 * (LOG_2PI + np.log(var) + resid ** 2 / var)
    loss = np.broadcast_to(loss, np.broadcast(resid, var).shape).sum()

    def bw(g):
        _acc(mean, g * np.broadcast_to(-resid / var, np.broadcast(resid, var).shape))
        dvar = 0.5 / var - 0.5 * resid ** 2 / var ** 2
        dvar = np.broadcast_to(dvar, np.broadcast(resid, var).shape)
        _acc(var_raw, g * dvar * _sigmoid(var_raw.value) * active)
    return _node(loss, (mean, var_raw), "gaussian_nll", bw)


# -- graph traversal --------------------------------------------------------------

def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every node reachable from the scalar ``loss``.

    Adjoints are reset first, so calling this twice on one graph is harmless.
    """
    if loss.value.size != 1:
        raise ValueError("backward() needs a scalar loss")
    order = _topological(loss)
    for node in order:
        node.grad = np.zeros_like(node.value)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


# -- gradient checking -------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: Dict[str, float]
    tol: float
    abs_floor: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def __str__(self) -> str:
        lines = [f"{k:>24s}  {v:.3e}" for k, v in self.max_rel_error.items()]
        lines.append(f"{'worst':>24s}  {self.worst:.3e}  "
                     f"({'PASS' if self.passed else 'FAIL'} at tol={self.tol:g})")
        return "\n".join(lines)


def relative_error(a: np.ndarray, b: np.ndarray, abs_floor: float = 1e-6) -> np.ndarray:
    """``|a - b| / max(|a|, |b|, abs_floor)`` elementwise."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), abs_floor)


def grad_check(fn: Callable[[Mapping[str, Tensor]], Tensor],
               params: Mapping[str, np.ndarray], h: float = 1e-5,
               tol: float = 1e-4, abs_floor: float = 1e-6) -> GradCheckReport:
    """Compare reverse-mode gradients of ``fn`` against central differences.

    ``fn`` receives a dict of leaf tensors keyed like ``params`` and must
    return a scalar tensor. Every parameter entry is perturbed by ``±h``.
    """
    leaves = {k: Tensor(np.array(v, dtype=np.float64), name=k) for k, v in params.items()}
    backward(fn(leaves))
    analytic = {k: t.grad.copy() for k, t in leaves.items()}

    errors = {}
    for k, v in params.items():
        base = np.array(v, dtype=np.float64)
        numeric = np.zeros_like(base)
        for i in np.ndindex(base.shape):
            vals = []
            for step in (h, -h):
                bumped = base.copy()
                bumped[i] += step
                trial = {n: Tensor(bumped if n == k else params[n]) for n in params}
                vals.append(fn(trial).item())
            numeric[i] = (vals[0] - vals[1]) / (2.0 * h)
        err = relative_error(analytic[k], numeric, abs_floor)
        errors[k] = float(err.max()) if err.size else 0.0
    return GradCheckReport(errors, tol, abs_floor)


# -- optimizers ----------------------------------------------------------------------

@dataclass
class OptimizerState:
    """First-order optimizer state.

    ``lr`` is either one rate for all parameters or a callable mapping a
    parameter name to its rate, which is how per-group rates are expressed.
    """

    kind: str = "adam"
    lr: Union[float, Callable[[str], float]] = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")

    def rate(self, name: str) -> float:
        return self.lr(name) if callable(self.lr) else self.lr


def opt_step(state: OptimizerState, params: Dict[str, np.ndarray],
             grads: Mapping[str, np.ndarray], frozen: Iterable[str] = ()) -> Dict[str, np.ndarray]:
    """Apply one update in place and return ``params``.

    Names in ``frozen`` are skipped entirely (no moment updates either).
    """
    frozen = set(frozen)
    state.step += 1
    t = state.step
    for name, p in params.items():
        if name in frozen or name not in grads:
            continue
        g = grads[name]
        lr = state.rate(name)
        if state.kind == "sgd":
            p -= lr * g
            continue
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params
