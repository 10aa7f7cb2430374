"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation produces a new :class:`Tensor`. When at least one operand
has ``requires_grad`` set, the result remembers its operands and a closure
mapping the upstream gradient to one gradient per operand; :func:`backward`
walks that record in reverse topological order.

Broadcasting is deliberately narrow. Binary elementwise operations accept
either equal shapes, or a 2-D operand of shape ``(B, n)`` paired with a 1-D
operand of shape ``(n,)``; the vector is repeated over the leading (batch)
axis. Anything else raises :class:`DimensionError`. Python numbers act as
constants and never need broadcasting.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, DomainError, NumericError

__all__ = [
    "Tensor",
    "tensor",
    "add",
    "sub",
    "mul",
    "div",
    "elementwise",
    "matmul",
    "linear",
    "mlp_tanh",
    "make_node",
    "activation",
    "sigmoid",
    "tanh",
    "softplus",
    "exp",
    "log",
    "square",
    "clamp_min",
    "softmax",
    "concat",
    "reshape",
    "tsum",
    "backward",
    "finite_diff_check",
]


class Tensor:
    """A float64 array that may participate in a differentiable computation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # Arithmetic sugar. Scalars are treated as constants.
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: int | None = None) -> "Tensor":
        return tsum(self, axis)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def make_node(data: np.ndarray, parents: Sequence[Tensor], fn: Callable, op: str) -> Tensor:
    """Create the result of a custom differentiable operation.

    ``fn`` maps the upstream gradient to a tuple with one gradient per
    parent, each shaped like that parent. The graph is recorded only if
    some parent requires a gradient.
    """
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, _parents=tuple(parents), _backward=fn, op=op)
    return Tensor(data, op=op)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if np.ndim(x) != 0:
        raise ContractError("only Python/NumPy scalars are promoted to constants; wrap arrays in Tensor")
    return Tensor(float(x))


def _check_pair(a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    if len(sa) == 2 and len(sb) == 1 and sa[1] == sb[0]:
        return
    if len(sb) == 2 and len(sa) == 1 and sb[1] == sa[0]:
        return
    raise DimensionError(f"cannot combine shapes {sa} and {sb}: shapes must match or a vector must span the last axis")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    return g.sum(axis=0)


# ---------------------------------------------------------------------------
# elementwise binary
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair(a, b)
    sa, sb = a.shape, b.shape

    def fn(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_node(a.data + b.data, (a, b), fn, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair(a, b)
    sa, sb = a.shape, b.shape

    def fn(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make_node(a.data - b.data, (a, b), fn, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair(a, b)
    ad, bd = a.data, b.data

    def fn(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return make_node(ad * bd, (a, b), fn, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair(a, b)
    ad, bd = a.data, b.data
    if np.any(bd == 0.0):
        raise DomainError(f"division by zero at index {_first_index(bd == 0.0)}")
    out = ad / bd

    def fn(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return make_node(out, (a, b), fn, "div")


_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(kind: str, a, b) -> Tensor:
    try:
        return _BINARY[kind](a, b)
    except KeyError:
        raise ContractError(f"unknown elementwise kind {kind!r}") from None


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul needs (m,k) x (k,n); got {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def fn(g):
        return g @ bd.T, ad.T @ g

    return make_node(ad @ bd, (a, b), fn, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused ``x @ w + b`` for ``x`` (B, k), ``w`` (k, n), ``b`` (n,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(f"linear needs (B,k), (k,n), (n,); got {x.shape}, {w.shape}, {b.shape}")
    xd, wd = x.data, w.data

    def fn(g):
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return make_node(xd @ wd + b.data, (x, w, b), fn, "linear")


def mlp_tanh(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Fused ``tanh(x @ w1 + b1) @ w2 + b2``."""
    if x.ndim != 2 or x.shape[1] != w1.shape[0] or w1.shape[1] != w2.shape[0]:
        raise DimensionError(f"mlp_tanh shapes x {x.shape}, w1 {w1.shape}, w2 {w2.shape}")
    xd, w1d, w2d = x.data, w1.data, w2.data
    hid = np.tanh(xd @ w1d + b1.data)

    def fn(g):
        da = (g @ w2d.T) * (1.0 - hid * hid)
        return da @ w1d.T, xd.T @ da, da.sum(axis=0), hid.T @ g, g.sum(axis=0)

    return make_node(hid @ w2d + b2.data, (x, w1, b1, w2, b2), fn, "mlp_tanh")


# ---------------------------------------------------------------------------
# pointwise unary
# ---------------------------------------------------------------------------


def _first_index(mask: np.ndarray):
    idx = np.argwhere(mask)[0]
    return tuple(int(i) for i in idx) if mask.ndim else ()


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.data)
    return make_node(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return make_node(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def softplus(a: Tensor, floor: float | None = None) -> Tensor:
    """``log(1 + exp(a))`` without overflow; optionally clamped below at ``floor``."""
    # logaddexp(0, x) == max(x, 0) + log1p(exp(-|x|))
    x = a.data
    out = np.logaddexp(0.0, x)
    if floor is None:
        return make_node(out, (a,), lambda g: (g * expit(x),), "softplus")
    keep = out >= floor
    return make_node(np.where(keep, out, floor), (a,), lambda g: (g * expit(x) * keep,), "softplus")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"exp overflow at index {_first_index(~np.isfinite(out))}")
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    bad = ~(x > 0.0)
    if np.any(bad):
        raise DomainError(f"log of non-positive value at index {_first_index(bad)}")
    return make_node(np.log(x), (a,), lambda g: (g / x,), "log")


def square(a: Tensor) -> Tensor:
    x = a.data
    return make_node(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """``max(a, floor)``; gradient passes only where ``a`` was not clamped."""
    x = a.data
    keep = x >= floor
    return make_node(np.where(keep, x, floor), (a,), lambda g: (g * keep,), "clamp_min")


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "softplus": softplus, "exp": exp, "log": log}


def activation(kind: str, a: Tensor) -> Tensor:
    try:
        return _UNARY[kind](a)
    except KeyError:
        raise ContractError(f"unknown activation {kind!r}") from None


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, shifted by the max for stability."""
    x = a.data
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax needs a non-empty last axis, got shape {x.shape}")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return make_node(s, (a,), fn, "softmax")


# ---------------------------------------------------------------------------
# structural
# ---------------------------------------------------------------------------


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = list(parts)
    if not parts:
        raise DimensionError("concat of zero tensors")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat shapes {[p.shape for p in parts]}: {exc}") from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_node(out, parts, fn, "concat")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {old} to {shape}") from None
    return make_node(out, (a,), lambda g: (g.reshape(old),), "reshape")


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    x = a.data
    if axis is None:

        def fn(g):
            return (np.broadcast_to(g, x.shape).copy(),)

        return make_node(np.asarray(x.sum()), (a,), fn, "sum")

    def fn_axis(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return make_node(x.sum(axis=axis), (a,), fn_axis, "sum")


# ---------------------------------------------------------------------------
# reverse accumulation
# ---------------------------------------------------------------------------


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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Returns a mapping from each leaf that requires a gradient to its gradient.
    Leaf gradients are overwritten, not summed with a previous call.
    """
    if root.shape != ():
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return {}
    order = _topological(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones(())}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g
            leaves[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return leaves


def finite_diff_check(f: Callable[..., Tensor], params: Tensor | Iterable[Tensor], step: float = 1e-5) -> float:
    """Worst relative error between ``backward`` and central differences.

    ``f`` is called as ``f(*params)`` and must return a scalar tensor. The
    parameter arrays are perturbed in place and restored afterwards. Relative
    error uses ``max(|analytic|, |numeric|, 1e-8)`` as its denominator.
    """
    if step <= 0:
        raise ContractError("step must be positive")
    plist = [params] if isinstance(params, Tensor) else list(params)
    for p in plist:
        p.requires_grad = True
        p.grad = None
    root = f(*plist)
    _check_finite_scalar(root)
    backward(root)
    worst = 0.0
    for p in plist:
        analytic = np.zeros_like(p.data) if p.grad is None else np.array(p.grad, copy=True)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = _check_finite_scalar(f(*plist))
            flat[i] = orig - step
            down = _check_finite_scalar(f(*plist))
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def _check_finite_scalar(t: Tensor) -> float:
    v = float(t.data)
    if not np.isfinite(v):
        raise NumericError(f"objective evaluated to {v}")
    return v
