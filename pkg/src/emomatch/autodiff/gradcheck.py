"""Central finite-difference verification of the op registry.

``grad_check`` compares analytic gradients against the symmetric difference
quotient; ``PROBES`` holds one small randomized test graph per registered op
so the whole registry can be swept from the CLI or the test suite.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import NumericError, Parameter, ShapeError, Tensor


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    epsilon: float = 1e-5,
) -> float:
    """Max over all parameter entries of |analytic - central difference| / max(1, |cd|).

    ``loss_fn`` must rebuild the scalar loss from the current parameter values
    on every call; parameters are perturbed in place and restored.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    loss = loss_fn()
    if loss.size != 1:
        raise ShapeError(f"grad_check requires a scalar loss, got shape {loss.shape}")
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    max_rel = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = loss_fn().item()
            flat[i] = orig - epsilon
            f_minus = loss_fn().item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError("non-finite loss under finite-difference perturbation")
            fd = (f_plus - f_minus) / (2.0 * epsilon)
            rel = abs(ana_flat[i] - fd) / max(1.0, abs(fd))
            max_rel = max(max_rel, rel)
    return max_rel


def _param(rng: np.random.Generator, name: str, shape, low=-1.0, high=1.0) -> Parameter:
    return Parameter(name, rng.uniform(low, high, size=shape))


def _away_from_zero(rng: np.random.Generator, name: str, shape) -> Parameter:
    # Keeps entries out of (-0.2, 0.2) so kinked ops stay FD-friendly.
    vals = rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return Parameter(name, vals)


ProbeResult = tuple[Callable[[], Tensor], list[Parameter]]
PROBES: dict[str, Callable[[np.random.Generator], ProbeResult]] = {}


def _probe(name: str):
    def deco(fn):
        PROBES[name] = fn
        return fn

    return deco


@_probe("add")
def _probe_add(rng):
    a, b = _param(rng, "a", (3, 4)), _param(rng, "b", (3, 4))
    return lambda: ops.tensor_sum(ops.add(a, b)), [a, b]


@_probe("bias_add")
def _probe_bias_add(rng):
    x, b = _param(rng, "x", (3, 4)), _param(rng, "b", (4,))
    return lambda: ops.tensor_sum(ops.gelu(ops.bias_add(x, b))), [x, b]


@_probe("negate")
def _probe_negate(rng):
    x = _param(rng, "x", (5,))
    return lambda: ops.tensor_sum(ops.exp(ops.negate(x))), [x]


@_probe("scalar_mul")
def _probe_scalar_mul(rng):
    x = _param(rng, "x", (4, 2))
    return lambda: ops.tensor_sum(ops.exp(ops.scalar_mul(x, 0.7))), [x]


@_probe("scalar_add")
def _probe_scalar_add(rng):
    x = _param(rng, "x", (4,))
    return lambda: ops.tensor_sum(ops.exp(ops.scalar_add(x, 0.3))), [x]


@_probe("relu")
def _probe_relu(rng):
    x = _away_from_zero(rng, "x", (4, 5))
    return lambda: ops.tensor_sum(ops.relu(x)), [x]


@_probe("gelu")
def _probe_gelu(rng):
    x = _param(rng, "x", (4, 5), low=-2.0, high=2.0)
    return lambda: ops.tensor_sum(ops.gelu(x)), [x]


@_probe("exp")
def _probe_exp(rng):
    x = _param(rng, "x", (6,))
    return lambda: ops.tensor_sum(ops.exp(x)), [x]


@_probe("softmax")
def _probe_softmax(rng):
    x = _param(rng, "x", (3, 5), low=-2.0, high=2.0)
    w = _param(rng, "w", (3, 5))

    def loss():
        s = ops.softmax(x, axis=-1)
        return ops.tensor_sum(ops.mse(s, w))

    return loss, [x, w]


@_probe("reshape")
def _probe_reshape(rng):
    x = _param(rng, "x", (2, 6))
    return lambda: ops.tensor_sum(ops.exp(ops.reshape(x, (3, 4)))), [x]


@_probe("transpose")
def _probe_transpose(rng):
    x = _param(rng, "x", (2, 3, 4))
    return lambda: ops.tensor_sum(ops.exp(ops.transpose(x, (2, 0, 1)))), [x]


@_probe("concat")
def _probe_concat(rng):
    a, b = _param(rng, "a", (2, 3)), _param(rng, "b", (2, 2))
    return lambda: ops.tensor_sum(ops.exp(ops.concat([a, b], axis=1))), [a, b]


@_probe("slice")
def _probe_slice(rng):
    x = _param(rng, "x", (5, 4))
    return lambda: ops.tensor_sum(ops.exp(ops.slice_axis(x, 0, 1, 4))), [x]


@_probe("gather_rows")
def _probe_gather_rows(rng):
    x = _param(rng, "x", (5, 3))
    idx = rng.permutation(5)[:4]
    idx[0] = idx[1]  # duplicate row: backward must accumulate
    return lambda: ops.tensor_sum(ops.exp(ops.gather_rows(x, idx))), [x]


@_probe("reverse_along_axis")
def _probe_reverse(rng):
    x = _param(rng, "x", (3, 4))
    return lambda: ops.tensor_sum(ops.exp(ops.reverse_along_axis(x, 0))), [x]


@_probe("matmul")
def _probe_matmul(rng):
    a, b = _param(rng, "a", (2, 3, 4)), _param(rng, "b", (4, 5))
    return lambda: ops.tensor_sum(ops.gelu(ops.matmul(a, b))), [a, b]


@_probe("squared_euclidean_distance_matrix")
def _probe_sqdist(rng):
    x, y = _param(rng, "x", (4, 3)), _param(rng, "y", (5, 3))
    return lambda: ops.tensor_sum(ops.exp(ops.negate(ops.squared_euclidean_distance_matrix(x, y)))), [x, y]


@_probe("sum")
def _probe_sum(rng):
    x = _param(rng, "x", (3, 3))
    return lambda: ops.tensor_sum(ops.exp(x)), [x]


@_probe("mean")
def _probe_mean(rng):
    x = _param(rng, "x", (3, 4))
    return lambda: ops.mean(ops.exp(x)), [x]


@_probe("mse")
def _probe_mse(rng):
    p, t = _param(rng, "p", (3, 4)), _param(rng, "t", (3, 4))
    return lambda: ops.mse(p, t), [p, t]


@_probe("cross_entropy")
def _probe_cross_entropy(rng):
    logits = _param(rng, "logits", (5, 4), low=-2.0, high=2.0)
    labels = rng.integers(0, 4, size=5)
    return lambda: ops.cross_entropy(logits, labels), [logits]


@_probe("layer_norm")
def _probe_layer_norm(rng):
    x = _param(rng, "x", (2, 3, 6))
    gamma = _param(rng, "gamma", (6,), low=0.5, high=1.5)
    beta = _param(rng, "beta", (6,))
    return lambda: ops.tensor_sum(ops.gelu(ops.layer_norm(x, gamma, beta))), [x, gamma, beta]


@_probe("conv2d")
def _probe_conv2d(rng):
    x = _param(rng, "x", (2, 2, 5, 6))
    w = _param(rng, "w", (3, 2, 3, 3))
    b = _param(rng, "b", (3,))
    return lambda: ops.tensor_sum(ops.gelu(ops.conv2d(x, w, b, stride=2, padding=1))), [x, w, b]


@_probe("deconv2d")
def _probe_deconv2d(rng):
    x = _param(rng, "x", (2, 3, 3, 4))
    w = _param(rng, "w", (3, 2, 3, 3))
    b = _param(rng, "b", (2,))
    return lambda: ops.tensor_sum(ops.gelu(ops.deconv2d(x, w, b, stride=2, padding=1))), [x, w, b]


@_probe("scaled_dot_product_attention")
def _probe_sdpa(rng):
    q = _param(rng, "q", (2, 4, 3))
    k = _param(rng, "k", (2, 4, 3))
    v = _param(rng, "v", (2, 4, 3))
    return lambda: ops.tensor_sum(ops.gelu(ops.scaled_dot_product_attention(q, k, v))), [q, k, v]


@_probe("multi_head_attention")
def _probe_mha(rng):
    n, t, e, heads = 2, 4, 6, 2
    x = _param(rng, "x", (n, t, e))
    ws = {name: _param(rng, name, (e, e), low=-0.5, high=0.5) for name in ("wq", "wk", "wv", "wo")}
    bs = {name: _param(rng, name, (e,), low=-0.2, high=0.2) for name in ("bq", "bk", "bv", "bo")}
    mask = np.ones((n, t), dtype=bool)
    mask[0, -1] = False

    def loss():
        out = ops.multi_head_attention(
            x, ws["wq"], bs["bq"], ws["wk"], bs["bk"], ws["wv"], bs["bv"], ws["wo"], bs["bo"],
            heads=heads, key_mask=mask,
        )
        return ops.tensor_sum(ops.gelu(out))

    return loss, [x, *ws.values(), *bs.values()]


def run_gradcheck_suite(seeds: Sequence[int], epsilon: float = 1e-5) -> dict[str, float]:
    """Max relative error per registered op across probe seeds."""
    missing = set(ops.OPS) - set(PROBES)
    if missing:
        raise RuntimeError(f"ops without a gradcheck probe: {sorted(missing)}")
    report: dict[str, float] = {}
    for name, probe in sorted(PROBES.items()):
        worst = 0.0
        for seed in seeds:
            loss_fn, params = probe(np.random.default_rng(seed))
            worst = max(worst, grad_check(loss_fn, params, epsilon))
        report[name] = worst
    return report
