"""Differentiable operations over :class:`~emomatch.autodiff.tensor.Tensor`.

Each primitive validates shapes, computes the forward value, and installs a
vector-Jacobian closure. Composite ops (attention, layer stacks) are built
from primitives so their gradients come for free. ``OPS`` is the registry
consumed by ``apply_op`` and the gradient-check suite.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .tensor import NumericError, ShapeError, Tensor, check_finite

OPS: dict[str, Callable] = {}


def _register(name: str):
    def deco(fn):
        OPS[name] = fn
        return fn

    return deco


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def apply_op(kind: str, inputs: Sequence, attrs: dict | None = None) -> Tensor:
    """Dispatch ``kind`` through the op registry."""
    if kind not in OPS:
        raise ShapeError(f"unknown op kind '{kind}'; registered: {sorted(OPS)}")
    return OPS[kind](*inputs, **(attrs or {}))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and structural primitives


@_register("add")
def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes must match, got {a.shape} vs {b.shape}")
    out_data = check_finite(a.data + b.data, "add")
    return Tensor(out_data, parents=(a, b), vjp=lambda g: (g, g), op="add")


@_register("bias_add")
def bias_add(x, b) -> Tensor:
    x, b = _t(x), _t(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias_add: expected bias of shape ({x.shape[-1]},), got {b.shape}")
    out_data = check_finite(x.data + b.data, "bias_add")

    def vjp(g):
        return g, g.reshape(-1, b.shape[0]).sum(axis=0)

    return Tensor(out_data, parents=(x, b), vjp=vjp, op="bias_add")


@_register("negate")
def negate(x) -> Tensor:
    x = _t(x)
    return Tensor(-x.data, parents=(x,), vjp=lambda g: (-g,), op="negate")


@_register("scalar_mul")
def scalar_mul(x, c: float) -> Tensor:
    x = _t(x)
    c = float(c)
    out_data = check_finite(x.data * c, "scalar_mul")
    return Tensor(out_data, parents=(x,), vjp=lambda g: (g * c,), op="scalar_mul")


@_register("scalar_add")
def scalar_add(x, c: float) -> Tensor:
    x = _t(x)
    out_data = check_finite(x.data + float(c), "scalar_add")
    return Tensor(out_data, parents=(x,), vjp=lambda g: (g,), op="scalar_add")


@_register("relu")
def relu(x) -> Tensor:
    x = _t(x)
    out_data = np.maximum(x.data, 0.0)
    mask = x.data > 0.0
    return Tensor(out_data, parents=(x,), vjp=lambda g: (g * mask,), op="relu")


@_register("gelu")
def gelu(x) -> Tensor:
    """Exact (erf-based) GELU."""
    x = _t(x)
    cdf = 0.5 * (1.0 + erf(x.data / math.sqrt(2.0)))
    out_data = check_finite(x.data * cdf, "gelu")
    pdf = np.exp(-0.5 * x.data * x.data) / math.sqrt(2.0 * math.pi)
    local = cdf + x.data * pdf
    return Tensor(out_data, parents=(x,), vjp=lambda g: (g * local,), op="gelu")


@_register("exp")
def exp(x) -> Tensor:
    x = _t(x)
    with np.errstate(over="ignore"):
        out_data = check_finite(np.exp(x.data), "exp")
    return Tensor(out_data, parents=(x,), vjp=lambda g: (g * out_data,), op="exp")


@_register("softmax")
def softmax(x, axis: int = -1) -> Tensor:
    x = _t(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    check_finite(s, "softmax")

    def vjp(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - inner),)

    return Tensor(s, parents=(x,), vjp=vjp, op="softmax")


@_register("reshape")
def reshape(x, shape) -> Tensor:
    x = _t(x)
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    in_shape = x.shape
    return Tensor(
        x.data.reshape(shape),
        parents=(x,),
        vjp=lambda g: (g.reshape(in_shape),),
        op="reshape",
    )


@_register("transpose")
def transpose(x, axes) -> Tensor:
    x = _t(x)
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} is not a permutation of rank {x.ndim}")
    inv = tuple(np.argsort(axes))
    return Tensor(
        np.transpose(x.data, axes),
        parents=(x,),
        vjp=lambda g: (np.transpose(g, inv),),
        op="transpose",
    )


@_register("concat")
def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_t(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: need at least one input")
    ref = list(ts[0].shape)
    for t in ts[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or any(
            i != (axis % len(ref)) and other[i] != ref[i] for i in range(len(ref))
        ):
            raise ShapeError(f"concat: incompatible shapes {ts[0].shape} vs {t.shape} on axis {axis}")
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(np.concatenate([t.data for t in ts], axis=axis), parents=tuple(ts), vjp=vjp, op="concat")


@_register("slice")
def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    x = _t(x)
    axis = axis % x.ndim
    n = x.shape[axis]
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice: [{start}:{stop}] out of bounds for axis {axis} of size {n}")
    key = tuple(slice(start, stop) if i == axis else slice(None) for i in range(x.ndim))
    in_shape = x.shape

    def vjp(g):
        full = np.zeros(in_shape)
        full[key] = g
        return (full,)

    return Tensor(x.data[key], parents=(x,), vjp=vjp, op="slice")


@_register("gather_rows")
def gather_rows(x, indices) -> Tensor:
    """Select rows ``x[indices]`` along axis 0; duplicates accumulate in backward."""
    x = _t(x)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: indices must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {x.shape[0]} rows")
    in_shape = x.shape

    def vjp(g):
        full = np.zeros(in_shape)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor(x.data[idx], parents=(x,), vjp=vjp, op="gather_rows")


@_register("reverse_along_axis")
def reverse_along_axis(x, axis: int) -> Tensor:
    x = _t(x)
    axis = axis % x.ndim
    return Tensor(
        np.flip(x.data, axis=axis),
        parents=(x,),
        vjp=lambda g: (np.flip(g, axis=axis),),
        op="reverse_along_axis",
    )


# ---------------------------------------------------------------------------
# contractions


@_register("matmul")
def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: inputs must be at least 2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, got {a.shape} @ {b.shape}")
    out_data = check_finite(a.data @ b.data, "matmul")

    def vjp(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return Tensor(out_data, parents=(a, b), vjp=vjp, op="matmul")


@_register("squared_euclidean_distance_matrix")
def squared_euclidean_distance_matrix(x, y) -> Tensor:
    """All-pairs squared distances: out[i, j] = ||x_i - y_j||^2."""
    x, y = _t(x), _t(y)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ShapeError(
            f"squared_euclidean_distance_matrix: expected (m,d) and (n,d), got {x.shape} vs {y.shape}"
        )
    sq_x = (x.data * x.data).sum(axis=1)[:, None]
    sq_y = (y.data * y.data).sum(axis=1)[None, :]
    d = np.maximum(sq_x + sq_y - 2.0 * (x.data @ y.data.T), 0.0)
    check_finite(d, "squared_euclidean_distance_matrix")

    def vjp(g):
        row = g.sum(axis=1)[:, None]
        col = g.sum(axis=0)[:, None]
        gx = 2.0 * (x.data * row - g @ y.data)
        gy = 2.0 * (y.data * col - g.T @ x.data)
        return gx, gy

    return Tensor(d, parents=(x, y), vjp=vjp, op="squared_euclidean_distance_matrix")


# ---------------------------------------------------------------------------
# reductions and losses


@_register("sum")
def tensor_sum(x) -> Tensor:
    x = _t(x)
    in_shape = x.shape
    return Tensor(
        x.data.sum(),
        parents=(x,),
        vjp=lambda g: (np.broadcast_to(g, in_shape).copy(),),
        op="sum",
    )


@_register("mean")
def mean(x) -> Tensor:
    x = _t(x)
    n = x.size
    in_shape = x.shape
    return Tensor(
        x.data.mean(),
        parents=(x,),
        vjp=lambda g: (np.broadcast_to(g / n, in_shape).copy(),),
        op="mean",
    )


@_register("mse")
def mse(pred, target) -> Tensor:
    """Mean squared error over all elements."""
    pred, target = _t(pred), _t(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shapes must match, got {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = pred.size
    out_data = check_finite(np.array((diff * diff).sum() / n), "mse")

    def vjp(g):
        scaled = (2.0 / n) * g * diff
        return scaled, -scaled

    return Tensor(out_data, parents=(pred, target), vjp=vjp, op="mse")


@_register("cross_entropy")
def cross_entropy(logits, labels) -> Tensor:
    """Mean cross entropy from logits via the log-sum-exp trick.

    ``labels`` are integer class indices, not a tensor; no gradient flows to them.
    """
    logits = _t(logits)
    y = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: expected (n, k) logits, got {logits.shape}")
    n, k = logits.shape
    if y.shape != (n,):
        raise ShapeError(f"cross_entropy: expected {n} labels, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ShapeError(f"cross_entropy: label out of range [0, {k})")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    losses = lse - z[np.arange(n), y]
    out_data = check_finite(np.array(losses.mean()), "cross_entropy")
    probs = np.exp(z - lse[:, None])

    def vjp(g):
        grad = probs.copy()
        grad[np.arange(n), y] -= 1.0
        return (g * grad / n,)

    return Tensor(out_data, parents=(logits,), vjp=vjp, op="cross_entropy")


# ---------------------------------------------------------------------------
# normalisation


@_register("layer_norm")
def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale-shift."""
    x, gamma, beta = _t(x), _t(gamma), _t(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma/beta must have shape ({d},), got {gamma.shape}/{beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = check_finite(gamma.data * xhat + beta.data, "layer_norm")

    def vjp(g):
        gxhat = g * gamma.data
        term = gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        gx = term * inv
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor(out_data, parents=(x, gamma, beta), vjp=vjp, op="layer_norm")


# ---------------------------------------------------------------------------
# convolutions (NCHW layout)


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d_output_shape(in_hw: tuple[int, int], kernel, stride, padding) -> tuple[int, int]:
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    return (in_hw[0] + 2 * ph - kh) // sh + 1, (in_hw[1] + 2 * pw - kw) // sw + 1


def deconv2d_output_shape(in_hw: tuple[int, int], kernel, stride, padding) -> tuple[int, int]:
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    return (in_hw[0] - 1) * sh + kh - 2 * ph, (in_hw[1] - 1) * sw + kw - 2 * pw


@_register("conv2d")
def conv2d(x, w, b, stride=1, padding=0) -> Tensor:
    """2-D convolution, x: (n, c_in, h, w), w: (c_out, c_in, kh, kw), b: (c_out,)."""
    x, w, b = _t(x), _t(w), _t(b)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape} and {w.shape}")
    n, c_in, h_in, w_in = x.shape
    c_out, c_in_w, kh, kw = w.shape
    if c_in != c_in_w:
        raise ShapeError(f"conv2d: input has {c_in} channels, weight expects {c_in_w}")
    if b.shape != (c_out,):
        raise ShapeError(f"conv2d: bias must have shape ({c_out},), got {b.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    h_out, w_out = conv2d_output_shape((h_in, w_in), (kh, kw), (sh, sw), (ph, pw))
    if h_out <= 0 or w_out <= 0:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} stride {sh}x{sw} too large for input {h_in}x{w_in}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    span = h_out * w_out
    out = np.zeros((n, c_out, span))
    for u in range(kh):
        for v in range(kw):
            patch = xp[:, :, u : u + sh * h_out : sh, v : v + sw * w_out : sw]
            # (c_out, c_in) @ (n, c_in, span) -> (n, c_out, span)
            out += np.matmul(w.data[:, :, u, v], patch.reshape(n, c_in, span))
    out = out.reshape(n, c_out, h_out, w_out) + b.data[None, :, None, None]
    check_finite(out, "conv2d")

    def vjp(g):
        gf = np.ascontiguousarray(g).reshape(n, c_out, span)
        gft = gf.transpose(0, 2, 1)
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w.data)
        for u in range(kh):
            for v in range(kw):
                patch = xp[:, :, u : u + sh * h_out : sh, v : v + sw * w_out : sw]
                dw[:, :, u, v] = np.matmul(patch.reshape(n, c_in, span), gft).sum(axis=0).T
                dpatch = np.matmul(w.data[:, :, u, v].T, gf).reshape(n, c_in, h_out, w_out)
                dxp[:, :, u : u + sh * h_out : sh, v : v + sw * w_out : sw] += dpatch
        dx = dxp[:, :, ph : ph + h_in, pw : pw + w_in]
        return dx, dw, g.sum(axis=(0, 2, 3))

    return Tensor(out, parents=(x, w, b), vjp=vjp, op="conv2d")


@_register("deconv2d")
def deconv2d(x, w, b, stride=1, padding=0) -> Tensor:
    """Transposed 2-D convolution, x: (n, c_in, h, w), w: (c_in, c_out, kh, kw)."""
    x, w, b = _t(x), _t(w), _t(b)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"deconv2d: expected 4-D input and weight, got {x.shape} and {w.shape}")
    n, c_in, h_in, w_in = x.shape
    c_in_w, c_out, kh, kw = w.shape
    if c_in != c_in_w:
        raise ShapeError(f"deconv2d: input has {c_in} channels, weight expects {c_in_w}")
    if b.shape != (c_out,):
        raise ShapeError(f"deconv2d: bias must have shape ({c_out},), got {b.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    h_out, w_out = deconv2d_output_shape((h_in, w_in), (kh, kw), (sh, sw), (ph, pw))
    if h_out <= 0 or w_out <= 0:
        raise ShapeError(f"deconv2d: padding {ph}x{pw} swallows the whole output for input {h_in}x{w_in}")

    h_full = (h_in - 1) * sh + kh
    w_full = (w_in - 1) * sw + kw
    span = h_in * w_in
    xf = x.data.reshape(n, c_in, span)
    full = np.zeros((n, c_out, h_full, w_full))
    for u in range(kh):
        for v in range(kw):
            # (c_out, c_in) @ (n, c_in, span) -> (n, c_out, span)
            contrib = np.matmul(w.data[:, :, u, v].T, xf).reshape(n, c_out, h_in, w_in)
            full[:, :, u : u + sh * h_in : sh, v : v + sw * w_in : sw] += contrib
    out = full[:, :, ph : ph + h_out, pw : pw + w_out] + b.data[None, :, None, None]
    check_finite(out, "deconv2d")

    def vjp(g):
        gfull = np.zeros((n, c_out, h_full, w_full))
        gfull[:, :, ph : ph + h_out, pw : pw + w_out] = g
        dx = np.zeros_like(xf)
        dw = np.zeros_like(w.data)
        xft = xf.transpose(0, 2, 1)
        for u in range(kh):
            for v in range(kw):
                gslice = gfull[:, :, u : u + sh * h_in : sh, v : v + sw * w_in : sw]
                gsf = np.ascontiguousarray(gslice).reshape(n, c_out, span)
                dx += np.matmul(w.data[:, :, u, v], gsf)
                dw[:, :, u, v] = np.matmul(gsf, xft).sum(axis=0).T
        return dx.reshape(x.shape), dw, g.sum(axis=(0, 2, 3))

    return Tensor(out, parents=(x, w, b), vjp=vjp, op="deconv2d")


# ---------------------------------------------------------------------------
# attention (composites over the primitives above)


def _attention_bias(key_mask: np.ndarray | None, n: int, t: int) -> Tensor | None:
    # Additive bias: 0 where attendable, -1e9 at padded key positions.
    if key_mask is None:
        return None
    km = np.asarray(key_mask, dtype=bool)
    if km.shape != (n, t):
        raise ShapeError(f"attention: key mask must have shape ({n}, {t}), got {km.shape}")
    bias = np.where(km, 0.0, -1e9)[:, None, None, :]
    return Tensor(np.broadcast_to(bias, (n, 1, 1, t)).copy())


@_register("scaled_dot_product_attention")
def scaled_dot_product_attention(q, k, v) -> Tensor:
    """softmax(q k^T / sqrt(d_k)) v over the last two axes."""
    q, k, v = _t(q), _t(k), _t(v)
    if q.shape[-1] != k.shape[-1] or k.shape[:-1] != v.shape[:-1]:
        raise ShapeError(
            f"scaled_dot_product_attention: incompatible shapes q={q.shape} k={k.shape} v={v.shape}"
        )
    dk = q.shape[-1]
    kt = transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    scores = scalar_mul(matmul(q, kt), 1.0 / math.sqrt(dk))
    return matmul(softmax(scores, axis=-1), v)


@_register("multi_head_attention")
def multi_head_attention(x, wq, bq, wk, bk, wv, bv, wo, bo, heads: int, key_mask=None) -> Tensor:
    """Batched self-attention over x: (n, t, e).

    Projection width is ``heads * ceil(e / heads)`` so embeddings that do not
    divide evenly by the head count still split cleanly; ``wo`` maps back to e.
    """
    x = _t(x)
    if x.ndim != 3:
        raise ShapeError(f"multi_head_attention: expected (n, t, e) input, got {x.shape}")
    n, t, e = x.shape
    wq = _t(wq)
    proj = wq.shape[1]
    if proj % heads != 0:
        raise ShapeError(f"multi_head_attention: projection width {proj} not divisible by {heads} heads")
    dk = proj // heads

    def split_heads(y: Tensor) -> Tensor:
        y = reshape(y, (n, t, heads, dk))
        return transpose(y, (0, 2, 1, 3))

    q = split_heads(bias_add(matmul(x, wq), bq))
    k = split_heads(bias_add(matmul(x, _t(wk)), bk))
    v = split_heads(bias_add(matmul(x, _t(wv)), bv))

    kt = transpose(k, (0, 1, 3, 2))
    scores = scalar_mul(matmul(q, kt), 1.0 / math.sqrt(dk))
    bias = _attention_bias(key_mask, n, t)
    if bias is not None:
        scores = add(scores, Tensor(np.broadcast_to(bias.data, scores.shape).copy()))
    ctx = matmul(softmax(scores, axis=-1), v)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (n, t, proj))
    return bias_add(matmul(ctx, _t(wo)), bo)


def clamp_min(x, floor: float) -> Tensor:
    """max(x, floor), built from relu so the gradient gates at the floor."""
    return scalar_add(relu(scalar_add(x, -float(floor))), float(floor))


def _install_operator_sugar() -> None:
    Tensor.__add__ = lambda self, other: add(self, other)
    Tensor.__sub__ = lambda self, other: add(self, negate(other))
    Tensor.__neg__ = lambda self: negate(self)
    Tensor.__matmul__ = lambda self, other: matmul(self, other)
    Tensor.__mul__ = lambda self, c: scalar_mul(self, c)
    Tensor.__rmul__ = lambda self, c: scalar_mul(self, c)


_install_operator_sugar()
