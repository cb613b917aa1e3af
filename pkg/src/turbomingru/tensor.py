"""Dense float tensors with reverse-mode automatic differentiation.

Every op builds an output :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to one gradient per parent.  The graph
is only recorded when at least one input requires a gradient, so inference
under :func:`no_grad` (or on constant inputs) costs nothing extra.

Layout conventions: sequences are ``[B, T, C]``, linear weights are
``[Din, Dout]`` and conv kernels are ``[K, Cin, Cout]``.
"""
from __future__ import annotations

import contextlib
from collections import OrderedDict
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32

_grad_enabled = True


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """Raised for invalid layer or op configuration (e.g. an even kernel)."""


class ContractError(RuntimeError):
    """Raised when an API precondition is violated at runtime."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf is found where finite values are required."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    if dtype is not None:
        return np.asarray(data, dtype=dtype)
    arr = np.asarray(data)
    if arr.dtype.kind == "f":
        return arr
    return arr.astype(DEFAULT_DTYPE)


class Tensor:
    """A float array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def requires_grad_(self, flag: bool = True) -> "Tensor":
        self.requires_grad = flag
        if flag and (self.grad is None or self.grad.shape != self.data.shape):
            self.grad = np.zeros_like(self.data)
        if not flag:
            self.grad = None
        return self

    def check_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            bad = int(np.size(self.data) - np.count_nonzero(np.isfinite(self.data)))
            raise NonFiniteError(f"{what} contains {bad} non-finite value(s)")
        return self

    # -- graph ------------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf.

        Only scalar tensors may start backpropagation.  Leaf gradients add up
        across calls until :meth:`zero_grad` is used.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() on a tensor that does not require grad")
        seed = np.ones_like(self.data) if grad is None else _as_array(grad, self.dtype)

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): seed}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
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

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)


def _topological_order(root: Tensor) -> list[Tensor]:
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def record(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``data`` as the output of an op.

    ``backward(g)`` must return one gradient (or ``None``) per parent.  The
    closure is dropped when no parent needs a gradient.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out._parents = tuple(parents) if needs else ()
    out._backward = backward if needs else None
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _check_broadcast(a: tuple, b: tuple) -> None:
    # same shape, scalar, or trailing-dimension bias only
    if a == b:
        return
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    if all(d == 1 for d in small):
        return
    if big[len(big) - len(small):] == small:
        return
    raise DimensionError(f"cannot broadcast shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    _check_broadcast(a.shape, b.shape)
    return a, b


# -- elementwise arithmetic ---------------------------------------------
def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record(out, (a, b), backward)


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return record(out, (x,), lambda g: (g * 0.5 / out,))


def clamp(x: Tensor, low: float, high: float) -> Tensor:
    """Clip to ``[low, high]``; gradient passes only where unclipped."""
    inside = (x.data >= low) & (x.data <= high)
    out = np.clip(x.data, low, high)
    return record(out, (x,), lambda g: (g * inside,))


def tensor_sum(x: Tensor) -> Tensor:
    return record(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                  lambda g: (np.broadcast_to(g, x.shape).copy(),))


def tensor_mean(x: Tensor) -> Tensor:
    n = x.data.size
    return record(np.asarray(x.data.mean(), dtype=x.dtype), (x,),
                  lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


# -- structural ops -------------------------------------------------------
def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return record(np.ascontiguousarray(out), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return record(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return record(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


def take(x: Tensor, index: np.ndarray, axis: int = 1) -> Tensor:
    """Gather ``x`` along ``axis`` with a permutation ``index``."""
    index = np.asarray(index)
    if index.ndim != 1 or x.shape[axis] != len(index):
        raise DimensionError(
            f"index of length {len(index)} does not match axis {axis} of shape {x.shape}")
    inverse = np.empty_like(index)
    inverse[index] = np.arange(len(index))
    is_perm = np.array_equal(np.sort(index), np.arange(len(index)))

    def backward(g):
        if is_perm:
            return (np.take(g, inverse, axis=axis),)
        full = np.zeros_like(x.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, index, np.moveaxis(g, axis, 0))
        return (full,)

    return record(np.take(x.data, index, axis=axis), (x,), backward)


# -- layers ------------------------------------------------------------------
def linear_forward(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x`` (any leading dims)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input shape {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias shape {b.shape} does not match weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    out = x2 @ w.data
    if b is not None:
        out += b.data
    out = out.reshape(*lead, w.shape[1])
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return record(out, parents, backward)


def matmul(x: Tensor, w: Tensor) -> Tensor:
    return linear_forward(x, w, None)


def _im2col(xpad: np.ndarray, k: int, t: int) -> np.ndarray:
    # [B, T+K-1, C] -> [B*T, K*C], tap-major
    b, _, c = xpad.shape
    cols = sliding_window_view(xpad, k, axis=1)  # [B, T, C, K]
    return cols.transpose(0, 1, 3, 2).reshape(b * t, k * c)


def conv1d_same(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """1-D convolution over time with symmetric zero padding.

    ``out[b, t, o] = sum_j sum_c xpad[b, t + j, c] * kernel[j, c, o] + bias[o]``
    where ``xpad`` carries ``(K-1)/2`` zeros at both ends, so ``T`` is kept.
    """
    if kernel.ndim != 3:
        raise DimensionError(f"conv1d: kernel must be [K, Cin, Cout], got {kernel.shape}")
    k, cin, cout = kernel.shape
    if k % 2 == 0:
        raise ConfigurationError(f"conv1d_same needs an odd kernel size, got K={k}")
    if x.ndim != 3 or x.shape[2] != cin:
        raise DimensionError(f"conv1d: input shape {x.shape} incompatible with kernel {kernel.shape}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv1d: bias shape {bias.shape} does not match Cout={cout}")
    bsz, t, _ = x.shape
    pad = (k - 1) // 2
    wmat = kernel.data.reshape(k * cin, cout)

    def padded() -> np.ndarray:
        return np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))

    out = _im2col(padded(), k, t) @ wmat
    if bias is not None:
        out += bias.data
    out = out.reshape(bsz, t, cout)
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        g2 = g.reshape(bsz * t, cout)
        gx = gk = None
        if kernel.requires_grad:
            # columns are recomputed rather than kept alive between passes
            gk = (_im2col(padded(), k, t).T @ g2).reshape(k, cin, cout)
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(bsz, t, k, cin)
            gpad = np.zeros((bsz, t + 2 * pad, cin), dtype=g.dtype)
            for j in range(k):
                gpad[:, j:j + t, :] += gcols[:, :, j, :]
            gx = gpad[:, pad:pad + t, :]
        if bias is None:
            return gx, gk
        return gx, gk, g2.sum(axis=0)

    return record(out, parents, backward)


# -- activations ---------------------------------------------------------
def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return record(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return record(t, (x,), lambda g: (g * (1.0 - t * t),))


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    z = x.data

    def backward(g):
        return (g * (s * (1.0 + z * (1.0 - s))),)

    return record(z * s, (x,), backward)


def elu(x: Tensor) -> Tensor:
    z = x.data
    out = np.exp(np.minimum(z, 0))
    out -= 1
    np.maximum(out, z, out=out)  # z > exp(z) - 1 exactly when z > 0

    def backward(g):
        # derivative is 1 on the positive side and out + 1 on the negative side
        d = np.minimum(out, 0)
        d += 1
        d *= g
        return (d,)

    return record(out, (x,), backward)


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "silu": silu, "elu": elu}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown activation {kind!r}; choose from {sorted(_ACTIVATIONS)}")
    return fn(x)


# -- parameters ----------------------------------------------------------
class ParameterStore:
    """Insertion-ordered mapping of unique names to trainable tensors."""

    def __init__(self, items: Iterable[tuple[str, Tensor]] = ()):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        for name, t in items:
            self.add(name, t)

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        if not tensor.requires_grad:
            tensor.requires_grad_(True)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def set_trainable(self, flag: bool) -> None:
        for t in self._params.values():
            t.requires_grad_(flag)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, t in self._params.items():
            arr = np.asarray(arrays[name])
            if arr.shape != t.shape:
                raise DimensionError(f"{name}: stored shape {arr.shape} != model shape {t.shape}")
            t.data = arr.astype(t.dtype, copy=True)
