"""Minimal dense tensors with reverse-mode automatic differentiation.

Only the operations the DM-GAN networks need are provided. Every op records
a closure that maps the output gradient to the input gradients; ``backward``
walks the recorded graph once in reverse topological order.

Training runs in float32. Gradient checking switches the default dtype to
float64 with :func:`precision` and rebuilds the graph.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class DomainError(ValueError):
    """An op was applied outside its mathematical domain."""


class ContractError(ValueError):
    """A caller violated an op's precondition."""


class _Settings:
    dtype = np.float32
    grad_enabled = True


def get_default_dtype():
    return _Settings.dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype new tensors are created with."""
    old = _Settings.dtype
    _Settings.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _Settings.dtype = old


@contextlib.contextmanager
def no_grad():
    old = _Settings.grad_enabled
    _Settings.grad_enabled = False
    try:
        yield
    finally:
        _Settings.grad_enabled = old


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or _Settings.dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.data.shape[0]

    # -- operators -----------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    # -- reverse mode --------------------------------------------------
    def backward(self):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _topological_order(root: Tensor) -> list:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _Settings.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _operands(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"cannot combine shapes {a.shape} and {b.shape}") from exc
    return a, b


# -- elementwise binary ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _operands(a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _operands(a, b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _operands(a, b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _operands(a, b)
    out = a.data / b.data
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


# -- linear algebra --------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` may carry leading batch axes; ``b`` is either a plain matrix shared
    across the batch or has the same batch axes as ``a``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch {a.shape} x {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul batch mismatch {a.shape} x {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward)


def conv3x3(x, kernel, bias=None, stride: int = 1) -> Tensor:
    """3×3 cross-correlation with zero padding 1.

    ``x`` is C×H×W or B×C×H×W. With stride 1 the spatial size is preserved;
    stride 2 halves it (rounding up). Internally a batched im2col product:
    per image, a (9·C_in)×(H_out·W_out) column matrix, kept for backward.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if kernel.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise DimensionError(f"kernel must be C_out×C_in×3×3, got {kernel.shape}")
    if xd.ndim != 4 or xd.shape[1] != kernel.shape[1]:
        raise DimensionError(f"input channels {x.shape} do not match kernel {kernel.shape}")
    B, C, H, W = xd.shape
    C_out = kernel.shape[0]
    Ho, Wo = (H - 1) // stride + 1, (W - 1) // stride + 1
    xp = np.zeros((B, C, H + 2, W + 2), dtype=xd.dtype)
    xp[:, :, 1:H + 1, 1:W + 1] = xd
    offsets = [(di, dj) for di in range(3) for dj in range(3)]
    # column rows are (offset, c_in), matching the kernel flattened as (c_out, kh, kw, c_in)
    cols = np.empty((B, 9, C, Ho, Wo), dtype=xd.dtype)
    for n, (di, dj) in enumerate(offsets):
        cols[:, n] = xp[:, :, di:di + stride * Ho:stride, dj:dj + stride * Wo:stride]
    cols = cols.reshape(B, 9 * C, Ho * Wo)
    kmat = np.ascontiguousarray(kernel.data.transpose(0, 2, 3, 1).reshape(C_out, 9 * C))
    out = np.matmul(kmat, cols)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (C_out,):
            raise DimensionError(f"bias shape {bias.shape} != ({C_out},)")
        out += bias.data[:, None]
        parents.append(bias)
    out = out.reshape(B, C_out, Ho, Wo)

    def backward(g):
        g3 = (g[None] if unbatched else g).reshape(B, C_out, Ho * Wo)
        gk = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0)
        gk = gk.reshape(C_out, 3, 3, C).transpose(0, 3, 1, 2)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(kmat.T, g3).reshape(B, 9, C, Ho, Wo)
            gxp = np.zeros_like(xp)
            for n, (di, dj) in enumerate(offsets):
                gxp[:, :, di:di + stride * Ho:stride, dj:dj + stride * Wo:stride] += gcols[:, n]
            gx = gxp[:, :, 1:H + 1, 1:W + 1]
            if unbatched:
                gx = gx[0]
        grads = [gx, np.ascontiguousarray(gk)]
        if bias is not None:
            grads.append(g3.sum(axis=(0, 2)))
        return grads

    return _result(out[0] if unbatched else out, parents, backward)


def nearest_upsample(x) -> Tensor:
    """Replicate every pixel into a 2×2 block (last two axes)."""
    x = as_tensor(x)
    out = x.data.repeat(2, axis=-2).repeat(2, axis=-1)

    def backward(g):
        s = g.shape
        return (g.reshape(*s[:-2], s[-2] // 2, 2, s[-1] // 2, 2).sum(axis=(-3, -1)),)

    return _result(out, (x,), backward)


def avg_pool2x2(x) -> Tensor:
    """Average non-overlapping 2×2 blocks of the last two axes (even extents)."""
    x = as_tensor(x)
    s = x.shape
    if s[-1] % 2 or s[-2] % 2:
        raise DimensionError(f"avg_pool2x2 needs even spatial extents, got {s}")
    out = x.data.reshape(*s[:-2], s[-2] // 2, 2, s[-1] // 2, 2).mean(axis=(-3, -1))

    def backward(g):
        return (0.25 * g.repeat(2, axis=-2).repeat(2, axis=-1),)

    return _result(out, (x,), backward)


# -- normalisation ---------------------------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), backward)


# -- pointwise -------------------------------------------------------------

def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so neither branch overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return _result(x.data * scale, (x,), lambda g: (g * scale,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt of negative value")
    out = np.sqrt(x.data)
    return _result(out, (x,), lambda g: (g * 0.5 / out,))


def log(x, floor: Optional[float] = None) -> Tensor:
    """Natural log. With ``floor`` set, inputs are clamped from below and the
    clamped entries receive zero gradient; without it, non-positive input raises."""
    x = as_tensor(x)
    if floor is None:
        if np.any(x.data <= 0):
            raise DomainError("log of non-positive value")
        safe = x.data
        mask = None
    else:
        mask = x.data > floor
        safe = np.where(mask, x.data, floor).astype(x.dtype)

    def backward(g):
        gx = g / safe
        return (gx if mask is None else gx * mask,)

    return _result(np.log(safe), (x,), backward)


POINTWISE = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "log": log,
    "exp": exp,
    "sqrt": sqrt,
}


def pointwise(x, f: str) -> Tensor:
    return POINTWISE[f](x)


# -- reductions and shape --------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(a % ndim for a in axes)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(out, dtype=x.dtype), (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axes, keepdims), 1.0 / n)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat shapes disagree off axis {axis}: {ref} vs {t.shape}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _result(out, tensors, lambda g: tuple(np.split(g, bounds, axis=ax)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % (tensors[0].ndim + 1)
    return concat([reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in tensors], axis=ax)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return _result(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _result(x.data[idx], (x,), backward)


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    out = np.broadcast_to(x.data, shape).copy()
    return _result(out, (x,), lambda g: (_unbroadcast(g, x.shape),))


# -- finite differences -----------------------------------------------------

def numerical_grad(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``fn()`` wrt ``t.data`` (mutated in place)."""
    g = np.zeros_like(t.data, dtype=np.float64)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Norm-wise relative error ``‖a−n‖ / max(‖a‖, ‖n‖, floor)``.

    The floor keeps gradients that are exactly zero in theory (a bias that a
    softmax cancels, say) from scoring finite-difference noise as error 1.
    """
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Largest relative error between backprop and central differences over ``inputs``.

    ``fn`` must rebuild the graph from the current contents of ``inputs`` on
    every call. Run inside ``precision(np.float64)``.
    """
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    fn().backward()
    worst = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        worst = max(worst, relative_error(analytic, numerical_grad(fn, t, h)))
    return worst
