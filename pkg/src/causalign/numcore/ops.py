"""Forward operations with backward rules.

Supported set: add, sub, mul, matmul, conv2d, maxpool2d, relu, flatten,
linear, softmax, log, mean, sum, l2diff (per-row L2 norm of a difference),
cross_entropy_with_softmax, concatenate. Shapes must conform exactly; the
only broadcast is the bias add over the batch dimension inside linear and
conv2d. Every output is checked finite.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractViolation
from .tensor import Tensor, check_finite, record, same_dtype


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _elementwise_check(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ContractViolation(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    same_dtype(op, a, b)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _elementwise_check("add", a, b)
    out = Tensor(check_finite("add", a.data + b.data))
    return record("add", (a, b), out, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _elementwise_check("sub", a, b)
    out = Tensor(check_finite("sub", a.data - b.data))
    return record("sub", (a, b), out, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _elementwise_check("mul", a, b)
    out = Tensor(check_finite("mul", a.data * b.data))
    ad, bd = a.data, b.data
    return record("mul", (a, b), out, lambda g: (g * bd, g * ad))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    same_dtype("matmul", a, b)
    out = Tensor(check_finite("matmul", a.data @ b.data))
    ad, bd = a.data, b.data
    return record("matmul", (a, b), out, lambda g: (g @ bd.T, ad.T @ g))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: x (n,k) @ w (k,m) + b (m,), bias broadcast over the batch."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ContractViolation(f"linear: shape mismatch {x.shape} vs {w.shape}")
    if b.shape != (w.shape[1],):
        raise ContractViolation(f"linear: bias shape {b.shape} vs {(w.shape[1],)}")
    same_dtype("linear", x, w, b)
    out = Tensor(check_finite("linear", x.data @ w.data + b.data))
    xd, wd = x.data, w.data
    return record("linear", (x, w, b), out, lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)))


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution, NHWC layout, weights (kh, kw, c_in, c_out)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ContractViolation(f"conv2d: shape mismatch {x.shape} vs {w.shape}")
    if b.shape != (w.shape[3],):
        raise ContractViolation(f"conv2d: bias shape {b.shape} vs {(w.shape[3],)}")
    same_dtype("conv2d", x, w, b)
    n, h, wd_, c_in = x.shape
    kh, kw, _, c_out = w.shape
    if h + 2 * padding < kh or wd_ + 2 * padding < kw:
        raise ContractViolation(f"conv2d: kernel {w.shape} larger than padded input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    oh, ow = win.shape[1], win.shape[2]
    # (n, oh, ow, c_in, kh, kw) -> columns (n*oh*ow, kh*kw*c_in)
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, kh * kw * c_in)
    wmat = w.data.reshape(kh * kw * c_in, c_out)
    out2 = cols @ wmat + b.data
    out = Tensor(check_finite("conv2d", out2.reshape(n, oh, ow, c_out)))

    xp_shape = xp.shape

    def backward_fn(g):
        g2 = g.reshape(n * oh * ow, c_out)
        dw = (cols.T @ g2).reshape(w.shape)
        db = g2.sum(axis=0)
        dcols = (g2 @ wmat.T).reshape(n, oh, ow, kh, kw, c_in)
        dxp = np.zeros(xp_shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :] += dcols[:, :, :, i, j, :]
        dx = dxp[:, padding : padding + h, padding : padding + wd_, :] if padding else dxp
        return dx, dw, db

    return record("conv2d", (x, w, b), out, backward_fn)


def maxpool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; spatial dims must divide by `size`."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ContractViolation(f"maxpool2d: expected 4-d input, got {x.shape}")
    n, h, w, c = x.shape
    if h % size or w % size:
        raise ContractViolation(f"maxpool2d: dims {x.shape} not divisible by {size}")
    oh, ow = h // size, w // size
    t = x.data.reshape(n, oh, size, ow, size, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, oh, ow, c, size * size)
    out = Tensor(t.max(axis=-1))
    idx = t.argmax(axis=-1)  # first max wins on ties

    def backward_fn(g):
        dt = np.zeros_like(t)
        np.put_along_axis(dt, idx[..., None], g[..., None], axis=-1)
        dx = dt.reshape(n, oh, ow, c, size, size).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)
        return (dx,)

    return record("maxpool2d", (x,), out, backward_fn)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.maximum(x.data, 0))
    mask = x.data > 0
    return record("relu", (x,), out, lambda g: (g * mask,))


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading (batch) dimension."""
    x = _as_tensor(x)
    if x.ndim < 2:
        raise ContractViolation(f"flatten: expected batched input, got {x.shape}")
    shape = x.shape
    out = Tensor(x.data.reshape(shape[0], -1))
    return record("flatten", (x,), out, lambda g: (g.reshape(shape),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(check_finite("softmax", s))

    def backward_fn(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return record("softmax", (x,), out, backward_fn)


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(x.data)
    out = Tensor(check_finite("log", out_data))
    xd = x.data
    return record("log", (x,), out, lambda g: (g / xd,))


def mean(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.asarray(x.data.mean(), dtype=x.dtype))
    size, shape = x.data.size, x.shape
    return record("mean", (x,), out, lambda g: (np.full(shape, g / size, dtype=g.dtype),))


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype))
    shape = x.shape
    return record("sum", (x,), out, lambda g: (np.full(shape, g, dtype=g.dtype),))


def l2diff(a: Tensor, b: Tensor) -> Tensor:
    """Per-row Euclidean norm of (a - b): inputs (n, d) -> output (n, 1)."""
    a, b = _as_tensor(a), _as_tensor(b)
    _elementwise_check("l2diff", a, b)
    if a.ndim != 2:
        raise ContractViolation(f"l2diff: expected (n, d) inputs, got {a.shape}")
    diff = a.data - b.data
    norm = np.sqrt((diff * diff).sum(axis=1, keepdims=True))
    out = Tensor(check_finite("l2diff", norm))

    def backward_fn(g):
        # subgradient 0 at the origin
        direction = diff / np.where(norm > 0, norm, 1)
        ga = g * direction
        return ga, -ga

    return record("l2diff", (a, b), out, backward_fn)


def cross_entropy_with_softmax(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-sample cross entropy fused with log-softmax: (n, c) + labels (n,)
    -> (n, 1). Labels are integer class indices."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ContractViolation(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ContractViolation(f"cross_entropy: label out of range [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = Tensor(check_finite("cross_entropy", lse - z[np.arange(n), labels][:, None]))

    def backward_fn(g):
        p = np.exp(z - lse)
        p[np.arange(n), labels] -= 1
        return (p * g,)

    return record("cross_entropy", (logits,), out, backward_fn)


def concatenate(tensors: list, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractViolation("concatenate: empty input list")
    same_dtype("concatenate", *tensors)
    nd = tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != nd:
            raise ContractViolation(f"concatenate: rank mismatch {tensors[0].shape} vs {t.shape}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, offsets, axis=axis))

    return record("concatenate", tuple(tensors), out, backward_fn)
