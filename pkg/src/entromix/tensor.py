"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a contiguous float32 or float64 numpy array. Every
differentiable operation records a backward closure on a thread-local tape;
``Tensor.backward()`` replays the tape in exact reverse execution order,
accumulating gradients into every ``requires_grad`` leaf reachable from the
loss, then clears the tape. Tapes and their tensors are confined to the
thread that built them.

Training runs in float32; wrap model construction and the forward pass in
``use_dtype(np.float64)`` for gradient-checking precision.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from . import _kernels as K
from .errors import ContractError, DomainError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)

_DEFAULT_DTYPE = np.float32

_tls = threading.local()


def _ensure_tls():
    if not hasattr(_tls, "tape"):
        _tls.tape = []
        _tls.grad_enabled = True
    return _tls


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in _FLOAT_DTYPES:
        raise ValueError(f"default dtype must be float32 or float64, got {dtype}")
    _DEFAULT_DTYPE = dtype


@contextmanager
def use_dtype(dtype):
    """Temporarily change the dtype new tensors are created with."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def grad_enabled() -> bool:
    return _ensure_tls().grad_enabled


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, data prep)."""
    state = _ensure_tls()
    previous = state.grad_enabled
    state.grad_enabled = False
    try:
        yield
    finally:
        state.grad_enabled = previous


def tape_length() -> int:
    return len(_ensure_tls().tape)


def clear_tape() -> None:
    _ensure_tls().tape.clear()


def _record(backward_fn) -> None:
    _ensure_tls().tape.append(backward_fn)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("cannot wrap a Tensor in a Tensor; use .copy() or .detach()")
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype.type not in _FLOAT_DTYPES:
                arr = arr.astype(_DEFAULT_DTYPE)
        else:
            arr = np.asarray(data, dtype=dtype)
            if arr.dtype.type not in _FLOAT_DTYPES:
                raise ValueError(f"tensors hold float32/float64 data, got {arr.dtype}")
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    # -- introspection ------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def detach(self) -> "Tensor":
        """A non-differentiable view of the same values (data is shared)."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        # the stored grad is never mutated in place, so aliasing g is safe
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    # -- backward -----------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar; consumes and clears the tape."""
        if self.data.size != 1:
            raise ContractError(f"backward() requires a scalar loss, got shape {self.shape}")
        state = _ensure_tls()
        if not state.tape:
            raise ContractError("backward() called with an empty tape")
        self.grad = np.ones_like(self.data)
        try:
            for fn in reversed(state.tape):
                fn()
        finally:
            state.tape.clear()

    # -- operator sugar -----------------------------------------------------

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=_DEFAULT_DTYPE))


def _as_pair(a, b) -> tuple[Tensor, Tensor]:
    """Coerce binary-op operands; a non-Tensor side adopts the Tensor
    side's dtype so scalar constants never degrade a float64 graph."""
    if isinstance(a, Tensor):
        if isinstance(b, Tensor):
            return a, b
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


# -- helpers ----------------------------------------------------------------


def _should_record(*tensors: Tensor) -> bool:
    return _ensure_tls().grad_enabled and any(t.requires_grad for t in tensors)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad


def _check_broadcast(a_shape: tuple, b_shape: tuple, op: str) -> None:
    try:
        np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a_shape} and {b_shape} do not broadcast") from None


# -- elementwise ops --------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_pair(a, b)
    _check_broadcast(a.shape, b.shape, "add")
    out = Tensor(a.data + b.data)
    if _should_record(a, b):
        out.requires_grad = True

        def backward():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))

        _record(backward)
    return out


def sub(a, b) -> Tensor:
    a, b = _as_pair(a, b)
    _check_broadcast(a.shape, b.shape, "sub")
    out = Tensor(a.data - b.data)
    if _should_record(a, b):
        out.requires_grad = True

        def backward():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g, b.data.shape))

        _record(backward)
    return out


def mul(a, b) -> Tensor:
    a, b = _as_pair(a, b)
    _check_broadcast(a.shape, b.shape, "mul")
    out = Tensor(a.data * b.data)
    if _should_record(a, b):
        out.requires_grad = True

        def backward():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        _record(backward)
    return out


def div(a, b) -> Tensor:
    a, b = _as_pair(a, b)
    _check_broadcast(a.shape, b.shape, "div")
    out = Tensor(a.data / b.data)
    if _should_record(a, b):
        out.requires_grad = True

        def backward():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        _record(backward)
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)
    if _should_record(a):
        out.requires_grad = True

        def backward():
            g = out.grad
            if g is None:
                return
            a._accumulate(-g)

        _record(backward)
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))
    if _should_record(a):
        out.requires_grad = True

        def backward():
            g = out.grad
            if g is None:
                return
            a._accumulate(g * out.data)

        _record(backward)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        worst = float(a.data.min())
        raise DomainError(f"log requires strictly positive inputs, got min {worst}")
    out = Tensor(np.log(a.data))
    if _should_record(a):
        out.requires_grad = True

        def backward():
            g = out.grad
            if g is None:
                return
            a._accumulate(g / a.data)

        _record(backward)
    return out


def gelu(a) -> Tensor:
    """GELU activation, tanh approximation (cubic constant 0.044715)."""
    a = as_tensor(a)
    out = Tensor(K.gelu_forward(a.data))
    if _should_record(a):
        out.requires_grad = True

        def backward():
            g = out.grad
            if g is None:
                return
            a._accumulate(K.gelu_backward(a.data, g))

        _record(backward)
    return out


def clamp_min(a, minimum: float) -> Tensor:
    """Elementwise max(x, minimum); gradient passes where x >= minimum."""
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, a.data.dtype.type(minimum)))
    if _should_record(a):
        out.requires_grad = True
        mask = a.data >= minimum

        def backward():
            g = out.grad
            if g is None:
                return
            a._accumulate(g * mask)

        _record(backward)
    return out


# -- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    _check_broadcast(a.shape[:-2], b.shape[:-2], "matmul (batch dims)")
    out = Tensor(np.matmul(a.data, b.data))
    if _should_record(a, b):
        out.requires_grad = True

        def backward():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                ga = np.matmul(g, b.data.swapaxes(-1, -2))
                a._accumulate(_unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                gb = np.matmul(a.data.swapaxes(-1, -2), g)
                b._accumulate(_unbroadcast(gb, b.data.shape))

        _record(backward)
    return out


# -- shape ops --------------------------------------------------------------


def reshape(a, *shape) -> Tensor:
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = Tensor(a.data.reshape(shape))
    if _should_record(a):
        out.requires_grad = True
        original = a.data.shape

        def backward():
            g = out.grad
            if g is None:
                return
            a._accumulate(g.reshape(original))

        _record(backward)
    return out


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)))
    if _should_record(a):
        out.requires_grad = True
        inverse = tuple(np.argsort(axes))

        def backward():
            g = out.grad
            if g is None:
                return
            a._accumulate(np.ascontiguousarray(g.transpose(inverse)))

        _record(backward)
    return out


def swapaxes(a, axis_a: int, axis_b: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[axis_a], axes[axis_b] = axes[axis_b], axes[axis_a]
    return transpose(a, axes)


# -- reductions -------------------------------------------------------------


def _normalize_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axis = _normalize_axis(axis, a.ndim)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    if _should_record(a):
        out.requires_grad = True
        in_shape = a.data.shape

        def backward():
            g = out.grad
            if g is None:
                return
            if axis is None:
                expanded = np.broadcast_to(g.reshape((1,) * len(in_shape)), in_shape)
            elif keepdims:
                expanded = np.broadcast_to(g, in_shape)
            else:
                shape = list(in_shape)
                for ax in axis:
                    shape[ax] = 1
                expanded = np.broadcast_to(g.reshape(shape), in_shape)
            a._accumulate(np.ascontiguousarray(expanded))

        _record(backward)
    return out


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axis_n = _normalize_axis(axis, a.ndim)
    if axis_n is None:
        count = a.size
    else:
        count = int(np.prod([a.shape[ax] for ax in axis_n]))
    total = tensor_sum(a, axis=axis, keepdims=keepdims)
    return mul(total, 1.0 / count)


# -- fused primitives backed by kernels --------------------------------------


def _move_lastdim(data: np.ndarray, axis: int):
    axis = axis % data.ndim
    if axis == data.ndim - 1:
        return data, None
    moved = np.ascontiguousarray(np.moveaxis(data, axis, -1))
    return moved, axis


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtraction)."""
    a = as_tensor(a)
    data, moved_from = _move_lastdim(a.data, axis)
    y = K.softmax_lastdim(data)
    out_data = y if moved_from is None else np.ascontiguousarray(np.moveaxis(y, -1, moved_from))
    out = Tensor(out_data)
    if _should_record(a):
        out.requires_grad = True

        def backward():
            g = out.grad
            if g is None:
                return
            if moved_from is None:
                a._accumulate(K.softmax_backward(y, g))
            else:
                gm = np.ascontiguousarray(np.moveaxis(g, moved_from, -1))
                back = K.softmax_backward(y, gm)
                a._accumulate(np.ascontiguousarray(np.moveaxis(back, -1, moved_from)))

        _record(backward)
    return out


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    data, moved_from = _move_lastdim(a.data, axis)
    y = K.log_softmax_lastdim(data)
    out_data = y if moved_from is None else np.ascontiguousarray(np.moveaxis(y, -1, moved_from))
    out = Tensor(out_data)
    if _should_record(a):
        out.requires_grad = True

        def backward():
            g = out.grad
            if g is None:
                return
            if moved_from is None:
                a._accumulate(K.log_softmax_backward(y, g))
            else:
                gm = np.ascontiguousarray(np.moveaxis(g, moved_from, -1))
                back = K.log_softmax_backward(y, gm)
                a._accumulate(np.ascontiguousarray(np.moveaxis(back, -1, moved_from)))

        _record(backward)
    return out


def normalize(a, eps: float = 1e-5) -> Tensor:
    """Zero-mean / unit-variance over the last axis (pre-affine norm core)."""
    a = as_tensor(a)
    cols = a.shape[-1]
    x2d = a.data.reshape(-1, cols)
    xhat, inv_std = K.rownorm_forward(x2d, eps)
    out = Tensor(xhat.reshape(a.shape))
    if _should_record(a):
        out.requires_grad = True
        in_shape = a.data.shape

        def backward():
            g = out.grad
            if g is None:
                return
            gin = K.rownorm_backward(xhat, inv_std, g.reshape(-1, cols))
            a._accumulate(gin.reshape(in_shape))

        _record(backward)
    return out


def avg_pool1d(a, kernel: int, stride: int | None = None) -> Tensor:
    """Mean-pool the last axis with non-overlapping windows (stride == kernel).

    Output length is floor((T - k) / k) + 1; trailing remainder samples are
    dropped. The gradient distributes 1/k to each window element.
    """
    a = as_tensor(a)
    if stride is None:
        stride = kernel
    if stride != kernel:
        raise ShapeError(f"only non-overlapping pooling is supported (stride {stride} != kernel {kernel})")
    if kernel < 1:
        raise ShapeError(f"pooling kernel must be >= 1, got {kernel}")
    t_in = a.shape[-1]
    if kernel > t_in:
        raise ShapeError(f"pooling kernel {kernel} exceeds time length {t_in}")
    lead = a.shape[:-1]
    x2d = a.data.reshape(-1, t_in)
    y2d = K.avgpool_forward(x2d, kernel)
    out = Tensor(y2d.reshape(lead + (y2d.shape[-1],)))
    if _should_record(a):
        out.requires_grad = True
        in_shape = a.data.shape

        def backward():
            g = out.grad
            if g is None:
                return
            gin = K.avgpool_backward(g.reshape(-1, g.shape[-1]), kernel, t_in)
            a._accumulate(gin.reshape(in_shape))

        _record(backward)
    return out


def take_along_last(a, index: np.ndarray) -> Tensor:
    """Pick one entry per row of a 2D tensor: out[i] = a[i, index[i]]."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"take_along_last expects a 2-d tensor, got {a.shape}")
    idx = np.asarray(index)
    if idx.ndim != 1 or idx.shape[0] != a.shape[0]:
        raise ShapeError(f"index shape {idx.shape} does not match rows of {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise DomainError(f"index values outside [0, {a.shape[1]})")
    rows = np.arange(a.shape[0])
    out = Tensor(a.data[rows, idx].copy())
    if _should_record(a):
        out.requires_grad = True

        def backward():
            g = out.grad
            if g is None:
                return
            gin = np.zeros_like(a.data)
            gin[rows, idx] = g
            a._accumulate(gin)

        _record(backward)
    return out
