"""Dense float64 tensors with define-by-run reverse-mode autodiff.

Every operation computes its value eagerly and records a closure that maps
the output adjoint to input adjoints, so the graph is rebuilt on each forward
pass. `backward` walks the graph once in reverse topological order and adds
the pass's adjoints into `.grad`; clearing grads between passes is the
caller's job (or `SGD.step`, which zeroes after applying).

A tensor and the graph reachable from it belong to one thread; independent
graphs may run on independent threads.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, ContractError, ShapeError

Scalar = Union[int, float]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_check(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


class Tensor:
    """A dense float64 array with an optional autodiff graph handle."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data: np.ndarray = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], tuple]] = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _item_error(self)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """A graph-free view onto the same value buffer."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- backward pass ------------------------------------------------------

    def _topo_order(self) -> list["Tensor"]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into .grad for every reachable node.

        Requires a scalar value. Each graph node is visited exactly once;
        adjoints from multiple consumers are summed before propagating.
        """
        if not self.requires_grad:
            raise ContractError("backward target was not produced by recorded operations")
        if self.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.data.shape}")
        order = self._topo_order()
        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            gout = pending.pop(id(node), None)
            if gout is None:
                continue
            node.grad = gout if node.grad is None else node.grad + gout
            if node._backward is None:
                continue
            for parent, g in zip(node._parents, node._backward(gout)):
                if g is None or not parent.requires_grad:
                    continue
                held = pending.get(id(parent))
                pending[id(parent)] = g if held is None else held + g

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = _lift(other)
        _broadcast_check(self.data, other.data, "add")
        a_shape, b_shape = self.data.shape, other.data.shape
        return _node(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = _lift(other)
        _broadcast_check(self.data, other.data, "sub")
        a_shape, b_shape = self.data.shape, other.data.shape
        return _node(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)),
        )

    def __rsub__(self, other) -> "Tensor":
        return _lift(other).__sub__(self)

    def __mul__(self, other) -> "Tensor":
        other = _lift(other)
        _broadcast_check(self.data, other.data, "mul")
        a, b = self.data, other.data
        return _node(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = _lift(other)
        _broadcast_check(self.data, other.data, "div")
        a, b = self.data, other.data
        return _node(
            a / b,
            (self, other),
            lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)),
        )

    def __rtruediv__(self, other) -> "Tensor":
        return _lift(other).__truediv__(self)

    def __neg__(self) -> "Tensor":
        return _node(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, exponent: Scalar) -> "Tensor":
        p = float(exponent)
        x = self.data
        return _node(x ** p, (self,), lambda g: (g * p * x ** (p - 1.0),))

    # -- elementwise functions ----------------------------------------------

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return _node(out, (self,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        x = self.data
        return _node(np.log(x), (self,), lambda g: (g / x,))

    def sqrt(self) -> "Tensor":
        out = np.sqrt(self.data)
        return _node(out, (self,), lambda g: (g * (0.5 / out),))

    # -- reductions and shape -----------------------------------------------

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        x_shape = self.data.shape
        if axis is None:
            out = self.data.sum()

            def backward(g, _shape=x_shape):
                return (np.broadcast_to(g, _shape).copy(),)

            return _node(out, (self,), backward)
        ax = axis % self.data.ndim
        out = self.data.sum(axis=ax, keepdims=keepdims)

        def backward(g, _shape=x_shape, _ax=ax, _keep=keepdims):
            if not _keep:
                g = np.expand_dims(g, _ax)
            return (np.broadcast_to(g, _shape).copy(),)

        return _node(out, (self,), backward)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else self.data.shape[axis % self.data.ndim]
        return self.sum(axis=axis, keepdims=keepdims) / float(count)

    def reshape(self, shape: Sequence[int] | tuple) -> "Tensor":
        x_shape = self.data.shape
        try:
            out = self.data.reshape(shape)
        except ValueError:
            raise ShapeError(f"reshape: cannot view shape {x_shape} as {tuple(shape)}") from None
        return _node(out, (self,), lambda g: (np.asarray(g).reshape(x_shape),))

    @property
    def T(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ShapeError(f"transpose expects a 2-D tensor, got shape {self.data.shape}")
        return _node(self.data.T.copy(), (self,), lambda g: (g.T,))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        other = _lift(other)
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
        return _node(a @ b, (self, other), lambda g: (g @ b.T, a.T @ g))


def _item_error(t: Tensor) -> float:
    raise ContractError(f"item() requires a single-element tensor, got shape {t.data.shape}")


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# -- free functions ----------------------------------------------------------


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; at exact ties the subgradient routes to `a`."""
    a, b = _lift(a), _lift(b)
    _broadcast_check(a.data, b.data, "maximum")
    take_a = a.data >= b.data
    out = np.where(take_a, a.data, b.data)

    def backward(g, _mask=take_a, _as=a.data.shape, _bs=b.data.shape):
        return (
            _unbroadcast(np.where(_mask, g, 0.0), _as),
            _unbroadcast(np.where(_mask, 0.0, g), _bs),
        )

    return _node(out, (a, b), backward)


def logaddexp(a: Tensor, b: Tensor) -> Tensor:
    """ln(e^a + e^b), stabilized by max subtraction (numpy's logaddexp)."""
    a, b = _lift(a), _lift(b)
    _broadcast_check(a.data, b.data, "logaddexp")
    out = np.logaddexp(a.data, b.data)
    wa = np.exp(a.data - out)
    wb = np.exp(b.data - out)

    def backward(g, _as=a.data.shape, _bs=b.data.shape):
        return (_unbroadcast(g * wa, _as), _unbroadcast(g * wb, _bs))

    return _node(out, (a, b), backward)


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    """max(x, slope*x) with the subgradient at exactly 0 set to `slope`."""
    if not 0.0 < slope < 1.0:
        raise ConfigError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    x = _lift(x)
    positive = x.data > 0.0
    out = np.where(positive, x.data, slope * x.data)
    factor = np.where(positive, 1.0, slope)
    return _node(out, (x,), lambda g: (g * factor,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient passes only where unmodified."""
    x = _lift(x)
    inside = (x.data >= lo) & (x.data <= hi)
    out = np.clip(x.data, lo, hi)
    return _node(out, (x,), lambda g: (np.where(inside, g, 0.0),))


def linear_forward(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine layer out[i, j] = sum_k x[i, k] * weight[j, k] + bias[j]."""
    x, weight, bias = _lift(x), _lift(weight), _lift(bias)
    xs, ws, bs = x.data.shape, weight.data.shape, bias.data.shape
    if len(xs) != 2 or len(ws) != 2 or xs[1] != ws[1]:
        raise ShapeError(f"linear_forward: input shape {xs} does not match weight shape {ws}")
    if len(bs) != 1 or bs[0] != ws[0]:
        raise ShapeError(f"linear_forward: bias shape {bs} does not match weight shape {ws}")
    out = x.data @ weight.data.T + bias.data

    def backward(g, _x=x.data, _w=weight.data):
        return (g @ _w, g.T @ _x, g.sum(axis=0))

    return _node(out, (x, weight, bias), backward)


class SGD:
    """SGD with momentum and additive weight decay.

    step applies, per parameter:
        v     <- momentum * v + grad + weight_decay * param
        param <- param - lr * v
    and then zeroes the gradient. `lr` may be reassigned between steps
    (used for the learning-rate drop schedule).
    """

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        momentum: float = 0.0,
        weight_decay: float = 0.0,
    ):
        if lr <= 0.0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {momentum}")
        if weight_decay < 0.0:
            raise ConfigError(f"weight decay must be nonnegative, got {weight_decay}")
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocities):
            if p.grad is None:
                raise ContractError("sgd step with a missing gradient; run backward first")
            v *= self.momentum
            v += p.grad
            if self.weight_decay != 0.0:
                v += self.weight_decay * p.data
            p.data = p.data - self.lr * v
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
