"""Dense float64 tensors with reverse-mode differentiation.

Every model in the package is assembled from the primitives in this module
(plus the fused sequence kernels in :mod:`mtensemble.layers`).  A primitive
computes its forward value with numpy and records a closure that maps the
output gradient to gradients of its inputs.  ``Tensor.backward`` walks the
recorded graph in reverse topological order.

The module also holds the losses, the Adam optimizer and the central
finite-difference gradient checker used to verify every primitive.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import DimensionError, ParameterError, UsageError

DTYPE = np.float64


class Tensor:
    """A float64 array that may carry a gradient buffer.

    ``data`` is a C-contiguous numpy array (row-major), ``grad`` is ``None``
    until a backward pass reaches the tensor.  Leaf tensors accumulate
    gradients across backward calls; call :meth:`zero_grad` between steps.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=DTYPE, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @classmethod
    def _op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.ascontiguousarray(data, dtype=DTYPE)
        out.grad = None
        out.name = None
        live = tuple(parents)
        out.requires_grad = any(p.requires_grad for p in live)
        if out.requires_grad:
            out._parents = live
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- autodiff --------------------------------------------------------
    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Back-propagate from this tensor.

        With ``grad=None`` the tensor must hold a single value; its seed
        gradient is 1.
        """
        if grad is None:
            if self.data.size != 1:
                raise UsageError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and structural primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._op(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return Tensor._op(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._op(out, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Matrix product ``a @ b``.

    ``a`` may carry leading batch axes (``[..., m, k]``); ``b`` is a
    ``[k, n]`` matrix.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return Tensor._op(out, (a, b), backward)


def tsum(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return Tensor._op(np.asarray(out), (a,), backward)


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return Tensor._op(np.asarray(a.data.mean()), (a,), lambda g: (np.full(a.shape, g / n),))


def reshape(a: Tensor, shape) -> Tensor:
    return Tensor._op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def take(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._op(np.array(out), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._op(out, tensors, backward)


# ---------------------------------------------------------------------------
# activations and regularisation
# ---------------------------------------------------------------------------

ACTIVATIONS = ("relu", "sigmoid", "tanh", "softmax", "linear")


# Switch patterns of piecewise-linear ops, collected only while a kink-aware
# gradient check is probing (see ``gradient_check_detail``).
_switch_trace: list[bytes] | None = None


def record_switch(pattern: np.ndarray) -> None:
    if _switch_trace is not None:
        _switch_trace.append(np.ascontiguousarray(pattern).tobytes())


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    record_switch(mask)
    return Tensor._op(x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return Tensor._op(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return Tensor._op(t, (x,), lambda g: (g * (1.0 - t * t),))


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis, computed after max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return Tensor._op(p, (x,), backward)


def activation(x: Tensor, kind: str) -> Tensor:
    """Apply ``relu``, ``sigmoid``, ``tanh``, row-wise ``softmax`` or ``linear``."""
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind in ("softmax", "softmax-rows"):
        if x.ndim != 2:
            raise DimensionError(f"softmax-rows expects a 2-D tensor, got shape {x.shape}")
        return softmax(x)
    if kind == "linear":
        return x
    raise ParameterError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-rate)`` at train time."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise UsageError("training-mode dropout needs a seeded generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return Tensor._op(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

class LossKind(enum.Enum):
    CATEGORICAL_CROSS_ENTROPY = "cce"
    MEAN_SQUARED_ERROR = "mse"


_CE_EPS = 1e-12


def cross_entropy(pred: Tensor, gold) -> Tensor:
    """Batch mean of ``-sum(gold * ln(pred + 1e-12))``."""
    gold = np.asarray(gold.data if isinstance(gold, Tensor) else gold, dtype=DTYPE)
    if pred.shape != gold.shape:
        raise DimensionError(f"cross-entropy shape mismatch: pred {pred.shape} vs gold {gold.shape}")
    batch = pred.shape[0] if pred.ndim > 1 else 1
    value = -(gold * np.log(pred.data + _CE_EPS)).sum() / batch

    def backward(g):
        return (-g * gold / (pred.data + _CE_EPS) / batch,)

    return Tensor._op(np.asarray(value), (pred,), backward)


def mse(pred: Tensor, gold) -> Tensor:
    gold = np.asarray(gold.data if isinstance(gold, Tensor) else gold, dtype=DTYPE)
    if pred.shape != gold.shape:
        raise DimensionError(f"MSE shape mismatch: pred {pred.shape} vs gold {gold.shape}")
    diff = pred.data - gold
    n = diff.size

    def backward(g):
        return (g * 2.0 * diff / n,)

    return Tensor._op(np.asarray((diff * diff).mean()), (pred,), backward)


def loss(pred: Tensor, gold, kind: LossKind) -> Tensor:
    if kind is LossKind.CATEGORICAL_CROSS_ENTROPY:
        return cross_entropy(pred, gold)
    if kind is LossKind.MEAN_SQUARED_ERROR:
        return mse(pred, gold)
    raise ParameterError(f"unknown loss kind {kind!r}")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Moment buffers for one parameter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: Tensor, **hyper) -> "AdamState":
        return cls(np.zeros_like(param.data), np.zeros_like(param.data), **hyper)


def adam_step(param: Tensor, state: AdamState) -> tuple[Tensor, AdamState]:
    """One bias-corrected Adam update, in place on ``param.data``."""
    if param.grad is None:
        raise UsageError(f"adam_step on parameter {param.name or param.shape} without a gradient")
    if state.m.shape != param.shape:
        raise DimensionError(f"Adam state shape {state.m.shape} does not match parameter {param.shape}")
    g = param.grad
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    param.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return param, state


@dataclass
class Adam:
    """Adam over a named parameter dict with the customary default hyperparameters."""

    params: dict[str, Tensor]
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict[str, AdamState] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.states[name] = AdamState.for_param(
                p, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps
            )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        for name, p in self.params.items():
            adam_step(p, self.states[name])


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------

def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=DTYPE)
    numeric = np.asarray(numeric, dtype=DTYPE)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numerical_gradient(f: Callable[[], float], array: np.ndarray, h: float = 1e-4,
                       coords: np.ndarray | None = None,
                       signature: Callable[[], bytes] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Central differences of the scalar ``f()`` w.r.t. ``array`` (perturbed in place).

    Only the flat positions in ``coords`` are evaluated when given; the
    rest of the result is left at zero.  Returns ``(grad, kinked)``.  When
    ``signature`` is supplied it must return the switch pattern recorded by
    the last ``f()`` call; positions where the pattern at ``x+h`` or ``x-h``
    differs from the pattern at ``x`` are flagged in ``kinked``.
    """
    grad = np.zeros_like(array)
    kinked = np.zeros(array.shape, dtype=bool)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    kflat = kinked.reshape(-1)
    base = None
    if signature is not None:
        f()
        base = signature()
    for i in range(flat.size) if coords is None else coords:
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        sp = signature() if signature else None
        flat[i] = orig - h
        fm = f()
        sm = signature() if signature else None
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
        if signature is not None:
            kflat[i] = sp != base or sm != base
    return grad, kinked


@dataclass
class GradCheckResult:
    max_error: float
    n_checked: int
    n_skipped: int


def gradient_check_detail(
    op: Callable[[Tensor], Tensor],
    x,
    params: Iterable[Tensor] = (),
    h: float = 1e-4,
    sample: int | None = None,
    seed: int = 0,
    skip_kinks: bool = False,
) -> GradCheckResult:
    """:func:`gradient_check` plus the number of coordinates checked and skipped."""
    global _switch_trace
    x = Tensor(x.data if isinstance(x, Tensor) else x, requires_grad=True)
    params = list(params)
    for p in params:
        p.grad = None
    op(x).sum().backward()
    analytic = [x.grad if x.grad is not None else np.zeros_like(x.data)]
    analytic += [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    last: list[bytes] = []

    def f() -> float:
        global _switch_trace
        if not skip_kinks:
            return float(op(Tensor(x.data)).data.sum())
        _switch_trace = []
        try:
            value = float(op(Tensor(x.data)).data.sum())
            last[:] = [b"|".join(_switch_trace)]
        finally:
            _switch_trace = None
        return value

    signature = (lambda: last[0]) if skip_kinks else None
    rng = np.random.default_rng(seed)
    worst, checked, skipped = 0.0, 0, 0
    for target, a in zip([x, *params], analytic):
        coords = np.arange(target.size)
        if sample is not None and target.size > sample:
            coords = np.sort(rng.choice(target.size, size=sample, replace=False))
        num, kinked = numerical_gradient(f, target.data, h, coords, signature)
        keep = coords[~kinked.reshape(-1)[coords]]
        skipped += len(coords) - len(keep)
        checked += len(keep)
        worst = max(worst, relative_error(a.reshape(-1)[keep], num.reshape(-1)[keep]))
    for p in params:
        p.grad = None
    return GradCheckResult(worst, checked, skipped)


def gradient_check(
    op: Callable[[Tensor], Tensor],
    x,
    params: Iterable[Tensor] = (),
    h: float = 1e-4,
    sample: int | None = None,
    seed: int = 0,
    skip_kinks: bool = False,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The scalar under test is ``op(x).sum()``.  Gradients are compared for
    ``x`` and for every tensor in ``params``; the relative error of an entry
    uses the denominator ``max(|analytic|, |numeric|, 1e-8)``.  With
    ``sample=k`` only ``k`` seeded random coordinates per tensor are
    differenced (for layers too wide to check exhaustively).  Piecewise-linear
    ops (relu, max pooling) are not differentiable where the perturbation
    crosses a switch point; ``skip_kinks=True`` leaves out the coordinates
    whose +-h perturbation changes a relu mask or pooling argmax.
    """
    return gradient_check_detail(op, x, params, h, sample, seed, skip_kinks).max_error
