"""Dense tensors with tape-based reverse-mode differentiation.

Every learnable block in the package is written against this module. A
``GradientTape`` records primitive operations while it is the active tape;
outside any tape the same code runs as plain numpy inference.

Operations always return fresh buffers; nothing in the public contract
aliases another tensor's storage.
"""

from __future__ import annotations

import contextvars
import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InputError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
Vjp = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_DEFAULT_DTYPE: np.dtype = np.dtype(np.float64)
_ACTIVE_TAPE: contextvars.ContextVar[Optional["GradientTape"]] = contextvars.ContextVar(
    "dualmem_active_tape", default=None
)

_GELU_C = math.sqrt(2.0 / math.pi)


def set_default_dtype(dtype: Union[str, np.dtype, type]) -> None:
    """Switch the floating point type used for new tensors (float64 or float32)."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise InputError(f"unsupported dtype {dt}; use float64 or float32")
    _DEFAULT_DTYPE = dt


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


class Tensor:
    """n-dimensional real array with optional gradient participation.

    ``node`` is ``(tape, index)`` for tensors produced while a tape was
    recording and ``None`` for leaves.
    """

    __slots__ = ("data", "requires_grad", "node", "name", "__weakref__")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Optional[Union[str, np.dtype, type]] = None,
        name: Optional[str] = None,
    ) -> None:
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.node: Optional[Tuple[GradientTape, int]] = None
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = False
        out.node = None
        out.name = None
        return out

    # ---- introspection -------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Constant copy that blocks gradient flow."""
        return Tensor._wrap(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # ---- operators -----------------------------------------------------

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, key) -> "Tensor":
        return getitem(self, key)

    # ---- method aliases ------------------------------------------------

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def gelu(self) -> "Tensor":
        return gelu(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def sqrt(self) -> "Tensor":
        return sqrt(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def softmax(self, axis: int = -1) -> "Tensor":
        return softmax(self, axis)


class Parameter(Tensor):
    """Leaf tensor that always participates in gradients."""

    def __init__(self, data: ArrayLike, name: Optional[str] = None) -> None:
        super().__init__(data, requires_grad=True, name=name)


def as_tensor(x: ArrayLike) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=_DEFAULT_DTYPE))


# ----------------------------
# Tape
# ----------------------------

@dataclass(frozen=True)
class _Op:
    name: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    vjp: Vjp


class Gradients(dict):
    """Mapping tensor -> gradient buffer (same shape as the tensor)."""

    def of(self, t: Tensor) -> np.ndarray:
        g = self.get(t)
        return np.zeros_like(t.data) if g is None else g


class GradientTape:
    """Ordered record of primitive operations.

    Use as a context manager; operations executed inside the ``with`` block
    on tensors that require gradients are recorded. A non-persistent tape is
    cleared by ``backward`` and only leaf gradients are returned; a
    persistent tape keeps its record and also returns intermediate buffers.
    """

    def __init__(self, persistent: bool = False) -> None:
        self.persistent = persistent
        self.ops: list[_Op] = []
        self._tokens: list[contextvars.Token] = []

    def __enter__(self) -> "GradientTape":
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.ops)

    def _record(self, name: str, inputs: Tuple[Tensor, ...], output: Tensor, vjp: Vjp) -> None:
        output.requires_grad = True
        output.node = (self, len(self.ops))
        self.ops.append(_Op(name, inputs, output, vjp))

    def backward(self, root: Tensor) -> Gradients:
        if root.size != 1:
            raise InputError(f"backward root must be a scalar, got shape {root.shape}")
        if root.node is None or root.node[0] is not self:
            raise InputError("backward root was not recorded on this tape")

        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        owners: dict[int, Tensor] = {id(root): root}

        for op in reversed(self.ops[: root.node[1] + 1]):
            g = grads.get(id(op.output))
            if g is None:
                continue
            for t, gi in zip(op.inputs, op.vjp(g)):
                if gi is None or not t.requires_grad:
                    continue
                gi = unbroadcast(gi, t.data.shape)
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    owners[key] = t

        out = Gradients()
        for op in self.ops:
            for t in op.inputs:
                if t.requires_grad and t.node is None and t not in out:
                    g = grads.get(id(t))
                    out[t] = np.zeros_like(t.data) if g is None else np.array(g, dtype=t.data.dtype)
        if self.persistent:
            for key, t in owners.items():
                if t not in out:
                    out[t] = grads[key]
        else:
            self.ops.clear()
        return out


def active_tape() -> Optional[GradientTape]:
    return _ACTIVE_TAPE.get()


def backward(root: Tensor) -> Gradients:
    """Reverse sweep from a scalar ``root`` on the tape that recorded it."""
    if root.size != 1:
        raise InputError(f"backward root must be a scalar, got shape {root.shape}")
    if root.node is None:
        raise InputError("backward root has no recorded history (no active tape?)")
    return root.node[0].backward(root)


def unbroadcast(grad: np.ndarray, to_shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast dimensions so that ``grad`` matches ``to_shape``."""
    if grad.shape == tuple(to_shape):
        return grad
    while grad.ndim > len(to_shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(to_shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(to_shape)


def _emit(name: str, data: np.ndarray, inputs: Tuple[Tensor, ...], vjp: Vjp) -> Tensor:
    out = Tensor._wrap(data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape._record(name, inputs, out, vjp)
    return out


def _broadcast_shape(a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a.shape, b.shape))
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# ----------------------------
# Elementwise
# ----------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    return _emit("div", ad / bd, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)))


def scale(a: ArrayLike, k: float) -> Tensor:
    a = as_tensor(a)
    k = float(k)
    return _emit("scale", a.data * k, (a,), lambda g: (g * k,))


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _emit("log", np.log(ad), (a,), lambda g: (g / ad,))


def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _emit("relu", np.where(mask, a.data, 0.0).astype(a.dtype), (a,), lambda g: (g * mask,))


def gelu(a: ArrayLike) -> Tensor:
    """tanh approximation of GELU (smooth everywhere)."""
    a = as_tensor(a)
    x = a.data
    u = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)

    def vjp(g: np.ndarray):
        du = _GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _emit("gelu", out, (a,), vjp)


def sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _emit("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def tan(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.tan(a.data)
    return _emit("tan", out, (a,), lambda g: (g * (1.0 + out * out),))


def sqrt(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _emit("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def power(a: ArrayLike, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    ad = a.data
    return _emit("pow", ad**p, (a,), lambda g: (g * p * ad ** (p - 1.0),))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "scale": scale,
    "exp": lambda a, _b=None: exp(a),
    "log": lambda a, _b=None: log(a),
    "relu": lambda a, _b=None: relu(a),
    "gelu": lambda a, _b=None: gelu(a),
}


def elementwise(kind: str, a: ArrayLike, b: ArrayLike | None = None) -> Tensor:
    """Dispatch by op-kind: add, sub, mul, div, scale, exp, log, relu, gelu."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError as exc:
        raise InputError(f"unknown elementwise op {kind!r}") from exc
    return fn(a, b)


# ----------------------------
# Reductions
# ----------------------------

def _norm_axes(axis, ndim: int) -> Optional[Tuple[int, ...]]:
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(int(a) % ndim for a in axis))


def tsum(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape

    def vjp(g: np.ndarray):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _emit("sum", np.sum(a.data, axis=axes, keepdims=keepdims), (a,), vjp)


def mean(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = a.size if axes is None else int(np.prod([a.shape[i] for i in axes]))
    return scale(tsum(a, axis=axes, keepdims=keepdims), 1.0 / max(count, 1))


def norm(a: ArrayLike, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at a zero vector is zero."""
    a = as_tensor(a)
    ax = int(axis) % a.ndim
    ad = a.data
    n = np.sqrt(np.sum(ad * ad, axis=ax, keepdims=True))

    def vjp(g: np.ndarray):
        if not keepdims:
            g = np.expand_dims(g, ax)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, g * ad / safe, 0.0),)

    out = n if keepdims else np.squeeze(n, axis=ax)
    return _emit("norm", out, (a,), vjp)


def softmax(a: ArrayLike, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    a = as_tensor(a)
    if a.ndim == 0:
        raise ShapeError("softmax needs at least one axis")
    ax = int(axis) % a.ndim
    shifted = a.data - np.max(a.data, axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=ax, keepdims=True)

    def vjp(g: np.ndarray):
        return (out * (g - np.sum(g * out, axis=ax, keepdims=True)),)

    return _emit("softmax", out, (a,), vjp)


def layer_norm(x: ArrayLike, gain: ArrayLike, bias: ArrayLike, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply per-channel gain and bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm params {gain.shape}/{bias.shape} vs channels {x.shape[-1]}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    gd = gain.data

    def vjp(g: np.ndarray):
        dxhat = g * gd
        dx = rstd * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, g * xhat, g

    return _emit("layer_norm", xhat * gd + bias.data, (x, gain, bias), vjp)


# ----------------------------
# Contraction
# ----------------------------

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul batch extents differ: {a.shape} @ {b.shape}") from exc
    ad, bd = a.data, b.data

    def vjp(g: np.ndarray):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _emit("matmul", ad @ bd, (a, b), vjp)


# ----------------------------
# Shape manipulation
# ----------------------------

def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(tuple(shape)).copy()
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {src} into {tuple(shape)}") from exc
    return _emit("reshape", out, (a,), lambda g: (g.reshape(src),))


def transpose(a: ArrayLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    perm = tuple(reversed(range(a.ndim))) if axes is None else tuple(int(x) % a.ndim for x in axes)
    inv = tuple(np.argsort(perm))
    return _emit("transpose", np.ascontiguousarray(a.data.transpose(perm)), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a: ArrayLike, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    perm = list(range(a.ndim))
    perm[ax1], perm[ax2] = perm[ax2], perm[ax1]
    return transpose(a, perm)


def getitem(a: ArrayLike, key) -> Tensor:
    a = as_tensor(a)
    shape, dtype = a.shape, a.dtype
    out = np.array(a.data[key], dtype=dtype, copy=True)

    def vjp(g: np.ndarray):
        z = np.zeros(shape, dtype=dtype)
        np.add.at(z, key, g)
        return (z,)

    return _emit("getitem", out, (a,), vjp)


def take(a: ArrayLike, indices: Sequence[int] | np.ndarray, axis: int = 0) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    ax = int(axis) % a.ndim
    shape, dtype = a.shape, a.dtype

    def vjp(g: np.ndarray):
        z = np.zeros(shape, dtype=dtype)
        np.add.at(np.moveaxis(z, ax, 0), idx, np.moveaxis(g, ax, 0))
        return (z,)

    return _emit("take", np.take(a.data, idx, axis=ax), (a,), vjp)


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("concat of an empty sequence")
    ax = int(axis) % ts[0].ndim
    try:
        out = np.concatenate([t.data for t in ts], axis=ax)
    except ValueError as exc:
        raise ShapeError(f"concat extents differ: {[t.shape for t in ts]}") from exc
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _emit("concat", out, ts, lambda g: tuple(np.split(g, bounds, axis=ax)))


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("stack of an empty sequence")
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"stack extents differ: {[t.shape for t in ts]}") from exc
    ax = int(axis) % out.ndim
    return _emit("stack", out, ts, lambda g: tuple(np.moveaxis(g, ax, 0)))


def _fold_edge(g: np.ndarray, axis: int, before: int, after: int, n: int) -> np.ndarray:
    g = np.moveaxis(g, axis, 0)
    core = g[before : before + n].copy()
    if before:
        core[0] += g[:before].sum(axis=0)
    if after:
        core[-1] += g[before + n :].sum(axis=0)
    return np.moveaxis(core, 0, axis)


def pad_edge(a: ArrayLike, pad_width: Sequence[Tuple[int, int]]) -> Tensor:
    """Edge-replicate padding; ``pad_width`` has one (before, after) per axis."""
    a = as_tensor(a)
    pw = [(int(b), int(e)) for b, e in pad_width]
    if len(pw) != a.ndim or any(b < 0 or e < 0 for b, e in pw):
        raise ShapeError(f"pad_width {pad_width} invalid for shape {a.shape}")
    if all(b == 0 and e == 0 for b, e in pw):
        return _emit("pad_edge", a.data.copy(), (a,), lambda g: (g,))
    shape = a.shape

    def vjp(g: np.ndarray):
        for axis, (b, e) in enumerate(pw):
            if b or e:
                g = _fold_edge(g, axis, b, e, shape[axis])
        return (g,)

    return _emit("pad_edge", np.pad(a.data, pw, mode="edge"), (a,), vjp)


def pool2d(x: ArrayLike, factor: int, mode: str = "average") -> Tensor:
    """Average-pool the last two axes by ``factor``; edges are replicated to a multiple."""
    if mode != "average":
        raise InputError(f"unsupported pooling mode {mode!r}")
    if int(factor) < 1:
        raise InputError(f"pooling factor must be >= 1, got {factor}")
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"pool2d needs at least 2 axes, got {x.shape}")
    f = int(factor)
    if f == 1:
        return pad_edge(x, [(0, 0)] * x.ndim)
    h, w = x.shape[-2:]
    ph, pw = (-h) % f, (-w) % f
    lead = x.shape[:-2]
    x = pad_edge(x, [(0, 0)] * len(lead) + [(0, ph), (0, pw)])
    ho, wo = (h + ph) // f, (w + pw) // f
    x = reshape(x, lead + (ho, f, wo, f))
    n = x.ndim
    return mean(x, axis=(n - 3, n - 1))


def window_partition(x: ArrayLike, window: Sequence[int]) -> Tuple[Tensor, Tuple[int, ...]]:
    """Edge-pad the leading ``len(window)`` axes of ``x[..., C]`` to multiples of
    ``window`` and gather every non-overlapping window into one row.

    Returns ``(rows[prod(out_extents), prod(window) * C], out_extents)``.
    """
    x = as_tensor(x)
    k = len(window)
    if x.ndim != k + 1:
        raise ShapeError(f"expected rank {k + 1} input for window {tuple(window)}, got {x.shape}")
    extents = x.shape[:k]
    pads = [(0, (-e) % w) for e, w in zip(extents, window)]
    x = pad_edge(x, pads + [(0, 0)])
    out = tuple((e + p[1]) // w for e, p, w in zip(extents, pads, window))
    c = x.shape[-1]
    split: list[int] = []
    for o, w in zip(out, window):
        split.extend((o, w))
    x = reshape(x, tuple(split) + (c,))
    perm = [2 * i for i in range(k)] + [2 * i + 1 for i in range(k)] + [2 * k]
    x = transpose(x, perm)
    rows = int(np.prod(out))
    return reshape(x, (rows, int(np.prod(window)) * c)), out


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor._wrap(np.zeros(tuple(shape), dtype=_DEFAULT_DTYPE))


def ones(shape: Sequence[int]) -> Tensor:
    return Tensor._wrap(np.ones(tuple(shape), dtype=_DEFAULT_DTYPE))


def all_finite(tensors: Iterable[Tensor]) -> bool:
    return all(bool(np.all(np.isfinite(t.data))) for t in tensors)
