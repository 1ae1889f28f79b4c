"""Dense tensor kernels with a tape-based reverse mode.

Only the handful of kernels the flow needs are provided: "same" 2-D
cross-correlation (shared and per-item weights), pointwise nonlinearities,
elementwise arithmetic, channel gathers/concats and reductions.  Every
kernel works on plain float arrays; when a :class:`GradientTape` is active
the kernel also records a vector-Jacobian product so :func:`backward` can
replay the computation in reverse.

Kernels preserve the floating dtype of their inputs.  Models are float32 by
default; gradient and Jacobian oracles run the same code in float64.
"""

from __future__ import annotations

import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ConfigurationError, UsageError

__all__ = [
    "Tensor",
    "GradientTape",
    "backward",
    "conv2d",
    "grouped_conv2d",
    "relu",
    "exp",
    "arctan",
    "square",
    "add",
    "sub",
    "mul",
    "tensor_sum",
    "concat",
    "narrow",
    "take",
    "mix",
    "unary",
    "finite_difference_grad",
]


class Tensor:
    """A float array, optionally tracked for gradients.

    Parameters are created with ``requires_grad=True``.  Results of kernels
    executed under an active tape inherit tracking from their inputs.
    """

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        data = np.asarray(data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float32)
        self.data = data
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a constant")
        return mul(self, 1.0 / other)


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------

_local = threading.local()


def _active_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class GradientTape:
    """Records executed kernels for reverse-mode differentiation.

    A tape belongs to the thread that entered it::

        with GradientTape() as tape:
            loss = model_loss(...)
        grads = backward(tape, loss)
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def __len__(self):
        return len(self.records)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _emit(data, inputs, vjp):
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append((out, inputs, vjp))
    return out


def backward(tape, loss, params=None):
    """Return ``{parameter: d loss / d parameter}``.

    ``params`` restricts (and orders) the result; parameters that did not
    influence ``loss`` get zero gradients.  Without ``params`` every tracked
    leaf reached during the replay is returned.
    """
    if not tape.records:
        raise UsageError("backward called on an empty tape")
    if loss.data.size != 1:
        raise UsageError(f"loss must be a scalar, got shape {loss.shape}")
    produced = {id(rec[0]) for rec in tape.records}
    if id(loss) not in produced:
        raise UsageError("loss was not recorded on this tape")

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for out, inputs, vjp in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for x, gx in zip(inputs, vjp(g)):
            if gx is None or not x.requires_grad:
                continue
            key = id(x)
            if key in grads:
                grads[key] = grads[key] + gx
            else:
                grads[key] = gx
                if key not in produced:
                    leaves[key] = x

    if params is None:
        return {x: grads[k] for k, x in leaves.items()}
    return {p: grads.get(id(p), np.zeros_like(p.data)) for p in params}


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------


def add(a, b):
    a = _as_tensor(a, getattr(b, "data", None))
    b = _as_tensor(b, a.data)
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a = _as_tensor(a, getattr(b, "data", None))
    b = _as_tensor(b, a.data)
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        a, c = _as_tensor(a), b
        return _emit(a.data * c, (a,), lambda g: (g * c,))
    a = _as_tensor(a, getattr(b, "data", None))
    b = _as_tensor(b, a.data)
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape),
                            _unbroadcast(g * ad, bd.shape)))


def unary(x, value, derivative):
    """Custom elementwise kernel from precomputed ``value`` and ``derivative``."""
    x = _as_tensor(x)
    return _emit(value, (x,), lambda g: (g * derivative,))


def relu(x):
    """Elementwise max(0, x); the subgradient at 0 is 0."""
    x = _as_tensor(x)
    pos = x.data > 0
    return _emit(np.where(pos, x.data, 0).astype(x.dtype, copy=False), (x,),
                 lambda g: (g * pos,))


def exp(x):
    x = _as_tensor(x)
    out = np.exp(x.data)
    return _emit(out, (x,), lambda g: (g * out,))


def arctan(x):
    x = _as_tensor(x)
    xd = x.data
    return _emit(np.arctan(xd), (x,), lambda g: (g / (1 + xd * xd),))


def square(x):
    x = _as_tensor(x)
    xd = x.data
    return _emit(xd * xd, (x,), lambda g: (2 * g * xd,))


# --------------------------------------------------------------------------
# reductions and layout
# --------------------------------------------------------------------------


def tensor_sum(x, axis=None):
    x = _as_tensor(x)
    shape = x.shape
    out = x.data.sum(axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(np.asarray(out, dtype=x.dtype), (x,), vjp)


def concat(tensors, axis=1):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _emit(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors),
                 lambda g: tuple(np.split(g, sizes, axis=axis)))


def narrow(x, axis, start, stop):
    """Contiguous slice ``[start, stop)`` along ``axis``."""
    x = _as_tensor(x)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def vjp(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _emit(x.data[index], (x,), vjp)


def take(x, indices, axis):
    """Gather along ``axis``; repeated indices accumulate in the backward."""
    x = _as_tensor(x)
    indices = np.asarray(indices, dtype=np.intp)

    n = x.shape[axis]

    def vjp(g):
        onehot = np.zeros((n, indices.size), dtype=g.dtype)
        onehot[indices, np.arange(indices.size)] = 1
        moved = np.moveaxis(g, axis, 0)
        back = (onehot @ moved.reshape(indices.size, -1)).reshape((n,) + moved.shape[1:])
        return (np.moveaxis(back, 0, axis),)

    return _emit(np.take(x.data, indices, axis=axis), (x,), vjp)


def mix(x, weights):
    """Linear combination along axis 0 with a constant matrix.

    ``out[i] = sum_e weights[i, e] * x[e]``.
    """
    x = _as_tensor(x)
    w = np.asarray(weights, dtype=x.dtype)
    if w.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ConfigurationError(
            f"mix weights {w.shape} incompatible with input {x.shape}")
    flat = x.data.reshape(x.shape[0], -1)
    out = (w @ flat).reshape((w.shape[0],) + x.shape[1:])
    return _emit(out, (x,),
                 lambda g: ((w.T @ g.reshape(w.shape[0], -1)).reshape(x.shape),))


# --------------------------------------------------------------------------
# convolution
# --------------------------------------------------------------------------


def _im2col(x, k):
    b, c, h, w = x.shape
    if k == 1:
        return x.reshape(b, c, h * w)
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * k * k, h * w)


def _col2im(cols, shape, k):
    b, c, h, w = shape
    if k == 1:
        return cols.reshape(shape)
    p = k // 2
    cols = cols.reshape(b, c, k, k, h, w)
    xp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + h, j:j + w] += cols[:, :, i, j]
    return xp[:, :, p:p + h, p:p + w]


def _check_conv(x_shape, w_shape, b_shape, grouped):
    kh, kw = w_shape[-2:]
    if kh != kw or kh % 2 == 0:
        raise ConfigurationError(
            f"kernel must be square with odd size, got {kh}x{kw}")
    cin = w_shape[-3]
    cout = w_shape[-4]
    if len(x_shape) != 4 or x_shape[1] != cin:
        raise ConfigurationError(
            f"conv2d shape mismatch: input {tuple(x_shape)} vs kernel {tuple(w_shape)}")
    if grouped and x_shape[0] != w_shape[0]:
        raise ConfigurationError(
            f"grouped conv2d needs one kernel per item: input {tuple(x_shape)} "
            f"vs kernel {tuple(w_shape)}")
    if b_shape is not None and tuple(b_shape) != tuple(w_shape[:-3]):
        raise ConfigurationError(
            f"bias shape {tuple(b_shape)} does not match kernel {tuple(w_shape)}")
    return kh, cout


def conv2d(x, weight, bias=None):
    """Zero-padded "same" cross-correlation.

    x: (B, Cin, H, W); weight: (Cout, Cin, k, k); bias: (Cout,).
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    bias = None if bias is None else _as_tensor(bias)
    k, cout = _check_conv(x.shape, weight.shape,
                          None if bias is None else bias.shape, grouped=False)
    b, _, h, w = x.shape
    cols = _im2col(x.data, k)
    wm = weight.data.reshape(cout, -1)
    out = np.matmul(wm, cols)
    if bias is not None:
        out += bias.data[:, None]
    xshape, wshape = x.shape, weight.shape

    def vjp(g):
        g = g.reshape(b, cout, h * w)
        gflat = g.transpose(1, 0, 2).reshape(cout, -1)
        cflat = cols.transpose(1, 0, 2).reshape(cols.shape[1], -1)
        gw = (gflat @ cflat.T).reshape(wshape)
        gx = _col2im(np.matmul(wm.T, g), xshape, k)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit(out.reshape(b, cout, h, w), inputs, vjp)


def grouped_conv2d(x, weight, bias=None):
    """Per-item "same" cross-correlation.

    Item ``e`` of x (E, Cin, H, W) is correlated with its own kernel
    weight[e] (E, Cout, Cin, k, k) and offset by bias[e] (E, Cout).
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    bias = None if bias is None else _as_tensor(bias)
    k, cout = _check_conv(x.shape, weight.shape,
                          None if bias is None else bias.shape, grouped=True)
    e, _, h, w = x.shape
    cols = _im2col(x.data, k)
    wm = weight.data.reshape(e, cout, -1)
    out = np.matmul(wm, cols)
    if bias is not None:
        out += bias.data[:, :, None]
    xshape, wshape = x.shape, weight.shape

    def vjp(g):
        g = g.reshape(e, cout, h * w)
        gw = np.matmul(g, cols.transpose(0, 2, 1)).reshape(wshape)
        gx = _col2im(np.matmul(wm.transpose(0, 2, 1), g), xshape, k)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=2)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit(out.reshape(e, cout, h, w), inputs, vjp)


# --------------------------------------------------------------------------
# numerical oracle
# --------------------------------------------------------------------------


def finite_difference_grad(fn, array, h=1e-3):
    """Central-difference gradient of scalar ``fn()`` w.r.t. ``array``.

    ``array`` is perturbed in place and restored afterwards.
    """
    grad = np.zeros(array.shape, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(fn())
        flat[i] = orig - h
        down = float(fn())
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad
