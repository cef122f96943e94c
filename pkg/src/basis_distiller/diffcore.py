"""Dense reverse-mode differentiation engine.

Every tensor records the operation that produced it and a vector-Jacobian
rule written in terms of other tensor operations. Because the rules are
themselves recorded, gradients can be taken with ``create_graph=True`` and
differentiated again, which is what unrolled inner-loop training needs.

Tensors are float64 and at most rank 2.
"""

import itertools
from contextlib import contextmanager
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, DimensionError, DomainError

_node_ids = itertools.count()
_grad_enabled = True

VjpRule = Callable[["Tensor"], Tuple[Optional["Tensor"], ...]]


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording of operations inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


@contextmanager
def _recording(enabled: bool) -> Iterator[None]:
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = enabled
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A node of the computation record.

    Attributes:
        data: float64 array of rank 0, 1 or 2
        op: tag of the operation that produced this tensor ("leaf" for inputs)
        inputs: parent tensors, empty for leaves and constants
        grad: gradient array filled by :func:`backward`
        requires_grad: whether gradients flow into this tensor
    """

    __slots__ = ("data", "op", "inputs", "grad", "requires_grad", "_vjp", "_id")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str = "leaf"):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 2:
            raise DimensionError(f"tensors are at most rank 2, got shape {arr.shape}")
        self.data = arr
        self.op = name
        self.inputs: Tuple["Tensor", ...] = ()
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._vjp: Optional[VjpRule] = None
        self._id = next(_node_ids)

    @classmethod
    def _from_op(
        cls,
        data: np.ndarray,
        op: str,
        inputs: Sequence["Tensor"],
        vjp: VjpRule,
    ) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.op = op
        out.grad = None
        out._id = next(_node_ids)
        out.requires_grad = _grad_enabled and any(t.requires_grad for t in inputs)
        if out.requires_grad:
            out.inputs = tuple(inputs)
            out._vjp = vjp
        else:
            out.inputs = ()
            out._vjp = None
        return out

    # Introspection

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # Operators

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        count = self.size if axis is None else self.shape[axis]
        return tsum(self, axis=axis, keepdims=keepdims) * (1.0 / max(count, 1))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def log(self) -> "Tensor":
        return log(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def square(self) -> "Tensor":
        return square(self)

    def sqrt(self) -> "Tensor":
        return sqrt(self)


def as_tensor(value) -> Tensor:
    """Wrap a number or array as a constant tensor; tensors pass through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def parameter(value) -> Tensor:
    """Create a leaf tensor that receives gradients."""
    return Tensor(value, requires_grad=True)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape))


def ones(*shape: int) -> Tensor:
    return Tensor(np.ones(shape))


def eye(n: int) -> Tensor:
    return Tensor(np.eye(n))


# Broadcasting helpers


def _sum_to(g: Tensor, shape: Tuple[int, ...]) -> Tensor:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = tsum(g, axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = tsum(g, axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# Elementwise binary ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def vjp(g: Tensor):
        return _sum_to(g, a.shape), _sum_to(g, b.shape)

    return Tensor._from_op(a.data + b.data, "add", (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def vjp(g: Tensor):
        return _sum_to(g, a.shape), _sum_to(neg(g), b.shape)

    return Tensor._from_op(a.data - b.data, "sub", (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def vjp(g: Tensor):
        ga = _sum_to(mul(g, b), a.shape) if a.requires_grad else None
        gb = _sum_to(mul(g, a), b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data * b.data, "mul", (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("division by zero")

    def vjp(g: Tensor):
        ga = _sum_to(div(g, b), a.shape) if a.requires_grad else None
        gb = _sum_to(neg(div(mul(g, a), mul(b, b))), b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data / b.data, "div", (a, b), vjp)


# Elementwise unary ops


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(-a.data, "neg", (a,), lambda g: (neg(g),))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out: Tensor

    def vjp(g: Tensor):
        return (mul(g, mul(out, sub(1.0, out))),)

    out = Tensor._from_op(_stable_sigmoid(a.data), "sigmoid", (a,), vjp)
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = Tensor((a.data > 0).astype(np.float64))
    return Tensor._from_op(np.maximum(a.data, 0.0), "relu", (a,), lambda g: (mul(g, mask),))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive entry")
    return Tensor._from_op(np.log(a.data), "log", (a,), lambda g: (div(g, a),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out: Tensor

    def vjp(g: Tensor):
        return (mul(g, out),)

    out = Tensor._from_op(np.exp(a.data), "exp", (a,), vjp)
    return out


def square(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(a.data * a.data, "square", (a,), lambda g: (mul(mul(g, a), 2.0),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt of negative entry")
    out: Tensor

    def vjp(g: Tensor):
        return (div(mul(g, 0.5), out),)

    out = Tensor._from_op(np.sqrt(a.data), "sqrt", (a,), vjp)
    return out


def rsqrt_safe(a) -> Tensor:
    """Elementwise ``x ** -0.5`` for positive entries, 0 where ``x <= 0``."""
    a = as_tensor(a)
    positive = a.data > 0
    data = np.zeros_like(a.data)
    data[positive] = 1.0 / np.sqrt(a.data[positive])
    out: Tensor

    def vjp(g: Tensor):
        # d/dx x^-1/2 = -1/2 x^-3/2 = -1/2 out^3 (zero where clamped)
        return (mul(mul(g, mul(out, mul(out, out))), -0.5),)

    out = Tensor._from_op(data, "rsqrt_safe", (a,), vjp)
    return out


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "sigmoid": sigmoid,
    "relu": relu,
    "log": log,
    "square": square,
}


def elementwise(tag: str, *operands) -> Tensor:
    """Dispatch an elementwise op by tag."""
    try:
        fn = ELEMENTWISE[tag]
    except KeyError:
        raise ContractError(f"unknown elementwise op {tag!r}") from None
    return fn(*operands)


# Shape ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def vjp(g: Tensor):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data @ b.data, "matmul", (a, b), vjp)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(a.data.T.copy(), "transpose", (a,), lambda g: (transpose(g),))


def reshape(a, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    in_shape = a.shape
    data = a.data.reshape(shape)
    if data.ndim > 2:
        raise DimensionError(f"tensors are at most rank 2, got shape {data.shape}")
    return Tensor._from_op(data, "reshape", (a,), lambda g: (reshape(g, in_shape),))


def tsum(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    in_shape = a.shape
    data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def vjp(g: Tensor):
        if axis is not None and not keepdims:
            kept = list(in_shape)
            kept[axis] = 1
            g = reshape(g, tuple(kept))
        elif axis is None and not keepdims:
            g = reshape(g, (1,) * len(in_shape))
        return (broadcast_to(g, in_shape),)

    return Tensor._from_op(np.asarray(data, dtype=np.float64), "sum", (a,), vjp)


def broadcast_to(a, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    in_shape = a.shape
    data = np.broadcast_to(a.data, shape).copy()
    return Tensor._from_op(data, "broadcast", (a,), lambda g: (_sum_to(g, in_shape),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    in_shape = a.shape
    data = np.array(a.data[index], dtype=np.float64)
    return Tensor._from_op(data, "getitem", (a,), lambda g: (_scatter(g, index, in_shape),))


def _scatter(g: Tensor, index, shape: Tuple[int, ...]) -> Tensor:
    data = np.zeros(shape)
    np.add.at(data, index, g.data)
    return Tensor._from_op(data, "scatter", (g,), lambda h: (getitem(h, index),))


def block_diag(blocks: Sequence[Tensor]) -> Tensor:
    """Place square or rectangular rank-2 blocks along the diagonal."""
    blocks = [as_tensor(b) for b in blocks]
    if any(b.ndim != 2 for b in blocks):
        raise DimensionError("block_diag needs rank-2 blocks")
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    data = np.zeros((rows, cols))
    spans = []
    r = c = 0
    for b in blocks:
        h, w = b.shape
        data[r : r + h, c : c + w] = b.data
        spans.append((slice(r, r + h), slice(c, c + w)))
        r += h
        c += w

    def vjp(g: Tensor):
        return tuple(getitem(g, span) for span in spans)

    return Tensor._from_op(data, "block_diag", blocks, vjp)


def vstack(parts: Sequence[Tensor]) -> Tensor:
    """Stack rank-2 tensors with equal column counts on top of each other."""
    parts = [as_tensor(p) for p in parts]
    if any(p.ndim != 2 for p in parts) or len({p.shape[1] for p in parts}) > 1:
        raise DimensionError("vstack needs rank-2 parts with equal column counts")
    spans = []
    r = 0
    for p in parts:
        spans.append((slice(r, r + p.shape[0]), slice(None)))
        r += p.shape[0]
    data = np.vstack([p.data for p in parts])

    def vjp(g: Tensor):
        return tuple(getitem(g, span) for span in spans)

    return Tensor._from_op(data, "vstack", parts, vjp)


def trace_pow3(a) -> Tensor:
    """Tr(a^3); the gradient is 3 (a^2)^T."""
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"trace_pow3 needs a square matrix, got {a.shape}")
    a2 = a.data @ a.data

    def vjp(g: Tensor):
        return (mul(mul(g, 3.0), transpose(matmul(a, a))),)

    return Tensor._from_op(np.asarray(np.trace(a2 @ a.data)), "trace_pow3", (a,), vjp)


# Differentiation


def _topological_order(root: Tensor) -> List[Tensor]:
    """Nodes reachable from ``root`` that require grad, newest first.

    Creation order is a valid topological order because inputs always exist
    before the tensors computed from them.
    """
    seen: Dict[int, Tensor] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node._id in seen or not node.requires_grad:
            continue
        seen[node._id] = node
        stack.extend(node.inputs)
    return [seen[k] for k in sorted(seen, reverse=True)]


def grad(
    root: Tensor,
    wrt: Sequence[Tensor],
    create_graph: bool = False,
) -> List[Tensor]:
    """Gradients of a scalar ``root`` with respect to each tensor in ``wrt``.

    Tensors that ``root`` does not depend on get a zero gradient. With
    ``create_graph`` the returned gradients are themselves differentiable.
    """
    if root.size != 1:
        raise ContractError(f"gradient root must be a scalar, got shape {root.shape}")
    order = _topological_order(root)
    grads: Dict[int, Tensor] = {}
    if root.requires_grad:
        grads[root._id] = Tensor(np.ones(root.shape))

    with _recording(create_graph):
        for node in order:
            g = grads.get(node._id)
            if g is None or node._vjp is None:
                continue
            for parent, g_parent in zip(node.inputs, node._vjp(g)):
                if g_parent is None or not parent.requires_grad:
                    continue
                previous = grads.get(parent._id)
                grads[parent._id] = g_parent if previous is None else add(previous, g_parent)

    results = []
    for w in wrt:
        g = grads.get(w._id)
        results.append(g if g is not None else Tensor(np.zeros(w.shape)))
    return results


def backward(root: Tensor) -> Dict[Tensor, np.ndarray]:
    """Fill ``grad`` of every reachable leaf with d(root)/d(leaf).

    Gradients are reset on each call, so running backward twice from the
    same root gives identical results.

    Returns:
        Mapping of leaf tensor to its gradient array
    """
    if root.size != 1:
        raise ContractError(f"backward root must be a scalar, got shape {root.shape}")
    leaves = [n for n in _topological_order(root) if not n.inputs]
    leaves.sort(key=lambda n: n._id)
    values = grad(root, leaves)
    result: Dict[Tensor, np.ndarray] = {}
    for leaf, g in zip(leaves, values):
        leaf.grad = np.array(g.data)
        result[leaf] = leaf.grad
    return result


def numerical_gradient(
    fn: Callable[[], float],
    arrays: Iterable[np.ndarray],
    step: float = 1e-5,
) -> List[np.ndarray]:
    """Central finite differences of ``fn`` w.r.t. arrays it reads in place."""
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            plus = fn()
            arr[idx] = orig - step
            minus = fn()
            arr[idx] = orig
            g[idx] = (plus - minus) / (2 * step)
        out.append(g)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a|| + ||n||, 1e-12)."""
    diff = np.linalg.norm(np.asarray(analytic) - np.asarray(numeric))
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    return float(diff / max(scale, 1e-12))
