"""Differentiable operations used by the networks and losses."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor

BCE_EPS = 1e-7


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, name: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise ----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor.from_op(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def back(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(a.data * b.data, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def back(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(out, (a, b), back, "div")


def neg(a: Tensor) -> Tensor:
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    x = a.data

    def back(g):
        return (g * exponent * x ** (exponent - 1),)

    return Tensor.from_op(x**exponent, (a,), back, "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    return Tensor.from_op(np.log(x), (a,), lambda g: (g / x,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def back(g):
        # d sqrt(x) at x = 0 is taken as 0 so coincident points stay finite
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g * 0.5 / safe, 0.0),)

    return Tensor.from_op(out, (a,), back, "sqrt")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return Tensor.from_op(np.clip(x, lo, hi), (a,), lambda g: (g * inside,), "clamp")


def relu(a: Tensor) -> Tensor:
    x = a.data
    active = x > 0
    return Tensor.from_op(np.where(active, x, 0.0), (a,), lambda g: (g * active,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor.from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# -- reductions and shape -------------------------------------------------

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor.from_op(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), back, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([shape[i] for i in axes]))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return Tensor.from_op(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), back, "mean")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor.from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor) -> Tensor:
    """Swap the two axes of a matrix."""
    if a.ndim != 2:
        raise ValueError(f"transpose: expected a matrix, got shape {a.shape}")
    return Tensor.from_op(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def flatten(a: Tensor) -> Tensor:
    """Collapse all axes after the first."""
    return reshape(a, (a.shape[0], -1))


def index(a: Tensor, idx) -> Tensor:
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor.from_op(a.data[idx], (a,), back, "index")


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)
        ):
            raise ValueError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, back, "concat")


def stack_rows(tensors: list[Tensor]) -> Tensor:
    return concat([reshape(t, (1,) + t.shape) for t in tensors], axis=0)


# -- linear algebra -------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")

    def back(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(a.data @ b.data, (a, b), back, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with weight stored as (in_features, out_features)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = matmul(x, weight)
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ValueError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out = add(out, bias)
    return out


# -- image ops ------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW input and (F, C, kh, kw) kernel."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d: expected 4-d input and kernel, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    f, kc, kh, kw = weight.shape
    if kc != c:
        raise ValueError(f"conv2d: input {x.shape} has {c} channels but kernel {weight.shape} expects {kc}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: invalid stride {stride} or padding {padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError(f"conv2d: kernel {weight.shape} larger than padded input {x.shape}")
    if bias is not None and bias.shape != (f,):
        raise ValueError(f"conv2d: bias {bias.shape} does not match kernel {weight.shape}")
    if stride == 1:
        out, back = _conv2d_shifted(x, weight, bias, padding)
    else:
        out, back = _conv2d_im2col(x, weight, bias, stride, padding)
    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor.from_op(out, parents, back, "conv2d")


def _conv2d_shifted(x, weight, bias, padding):
    # Stride-1 convolution on the padded batch laid out as (C, N*Hp*Wp): every
    # kernel tap becomes a contiguous column slice, so no im2col buffer is
    # materialized. Columns that straddle image borders hold junk and are cropped.
    n, c, h, w = x.shape
    f, _, kh, kw = weight.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    ho, wo = hp - kh + 1, wp - kw + 1
    cols = n * hp * wp
    span = cols - ((kh - 1) * wp + (kw - 1))
    taps = [(i, j, i * wp + j) for i in range(kh) for j in range(kw)]
    xpad = np.zeros((c, n, hp, wp))
    xpad[:, :, padding : padding + h, padding : padding + w] = x.data.transpose(1, 0, 2, 3)
    flat = xpad.reshape(c, cols)
    wstack = weight.data.transpose(2, 3, 0, 1).reshape(kh * kw * f, c)
    proj = (wstack @ flat).reshape(kh * kw, f, cols)
    full = np.zeros((f, cols))
    for t, (_, _, off) in enumerate(taps):
        full[:, :span] += proj[t, :, off : off + span]
    del proj
    out = full.reshape(f, n, hp, wp)[:, :, :ho, :wo].transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def back(g):
        gfull = np.zeros((f, n, hp, wp))
        gfull[:, :, :ho, :wo] = g.transpose(1, 0, 2, 3)
        gfull = gfull.reshape(f, cols)
        gw = gx = gb = None
        if weight.requires_grad:
            gw = np.empty((f, c, kh, kw))
            for i, j, off in taps:
                gw[:, :, i, j] = gfull[:, :span] @ flat[:, off : off + span].T
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            wback = weight.data.transpose(2, 3, 1, 0).reshape(kh * kw * c, f)
            back_proj = (wback @ gfull).reshape(kh * kw, c, cols)
            dflat = np.zeros((c, cols))
            for t, (_, _, off) in enumerate(taps):
                dflat[:, off : off + span] += back_proj[t, :, :span]
            gx = dflat.reshape(c, n, hp, wp)[:, :, padding : padding + h, padding : padding + w]
            gx = np.ascontiguousarray(gx.transpose(1, 0, 2, 3))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    return out, back


def _conv2d_im2col(x, weight, bias, stride, padding):
    n, c, h, w = x.shape
    f, _, kh, kw = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(f, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
            dxp = np.zeros(xp.shape)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            gx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
        return (gx, gw, gb) if bias is not None else (gx, gw)

    return out, back


def max_pool2d(x: Tensor, window: int = 2) -> Tensor:
    """Non-overlapping max pooling; ties route the gradient to the first element in row-major order."""
    if window != 2:
        raise ValueError(f"max_pool2d: only window 2 is supported, got {window}")
    if x.ndim != 4:
        raise ValueError(f"max_pool2d: expected NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"max_pool2d: spatial size {h}x{w} must be even")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        routed = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(routed, arg[..., None], g[..., None], axis=-1)
        return (routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return Tensor.from_op(out, (x,), back, "max_pool2d")


def avg_pool2d(x: Tensor, window: int = 2) -> Tensor:
    n, c, h, w = x.shape
    if h % window or w % window:
        raise ValueError(f"avg_pool2d: spatial size {h}x{w} not divisible by {window}")
    out = x.data.reshape(n, c, h // window, window, w // window, window).mean(axis=(3, 5))

    def back(g):
        return (np.repeat(np.repeat(g, window, axis=2), window, axis=3) / (window * window),)

    return Tensor.from_op(out, (x,), back, "avg_pool2d")


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    if x.ndim != 4:
        raise ValueError(f"upsample_nearest: expected NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def back(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return Tensor.from_op(out, (x,), back, "upsample_nearest")


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    if x.ndim != 4:
        raise ValueError(f"global_avg_pool: expected NCHW input, got {x.shape}")
    return mean(x, axis=(2, 3))


# -- losses and normalizers ----------------------------------------------

def log_softmax(x: Tensor) -> Tensor:
    """Log-softmax over the last axis, stabilized by max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def back(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return Tensor.from_op(out, (x,), back, "log_softmax")


def bce_loss(pred: Tensor, target, eps: float = BCE_EPS) -> Tensor:
    """Mean binary cross-entropy; predictions clamped to [eps, 1 - eps]."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"bce_loss: prediction {pred.shape} and target {target.shape} differ")
    p = np.clip(pred.data, eps, 1.0 - eps)
    y = target.data
    count = p.size
    loss = -np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)) / count
    inside = (pred.data >= eps) & (pred.data <= 1.0 - eps)

    def back(g):
        gp = g * (-y / p + (1.0 - y) / (1.0 - p)) / count * inside
        return gp, None

    return Tensor.from_op(np.asarray(loss), (pred, target), back, "bce_loss")


def nll_loss(log_probs: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row log-probabilities."""
    labels = np.asarray(labels, dtype=np.int64)
    if log_probs.ndim != 2 or labels.shape != (log_probs.shape[0],):
        raise ValueError(f"nll_loss: log-probabilities {log_probs.shape} and labels {labels.shape} differ")
    if labels.size and (labels.min() < 0 or labels.max() >= log_probs.shape[1]):
        raise ValueError(f"nll_loss: label out of range [0, {log_probs.shape[1]})")
    rows = np.arange(labels.size)
    return neg(mean(index(log_probs, (rows, labels))))
