"""Small layer library on top of the autodiff core.

Modules collect their parameters recursively; all weights are Xavier-uniform
initialised from an explicit numpy Generator so runs are reproducible.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Parameter, Tensor, ops


class Module:
    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        seen: set[int] = set()
        for value in vars(self).values():
            out.extend(_collect(value, seen))
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in state:
                raise KeyError(f"checkpoint missing parameter '{p.name}'")
            arr = np.asarray(state[p.name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"parameter '{p.name}': checkpoint shape {arr.shape} != model shape {p.data.shape}"
                )
            p.data = arr.copy()


def _collect(value, seen: set[int]) -> list[Parameter]:
    if isinstance(value, Parameter):
        if id(value) in seen:
            return []
        seen.add(id(value))
        return [value]
    if isinstance(value, Module):
        out = []
        for v in vars(value).values():
            out.extend(_collect(v, seen))
        return out
    if isinstance(value, dict):
        value = list(value.values())
    if isinstance(value, (list, tuple)):
        out = []
        for v in value:
            out.extend(_collect(v, seen))
        return out
    return []


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Linear(Module):
    def __init__(self, name: str, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.w = Parameter(f"{name}.w", xavier_uniform(rng, (in_dim, out_dim), in_dim, out_dim))
        self.b = Parameter(f"{name}.b", np.zeros(out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.bias_add(ops.matmul(x, self.w), self.b)


class Conv2d(Module):
    def __init__(self, name: str, c_in: int, c_out: int, kernel: int, stride: int, padding: int,
                 rng: np.random.Generator):
        fan_in = c_in * kernel * kernel
        fan_out = c_out * kernel * kernel
        self.w = Parameter(f"{name}.w", xavier_uniform(rng, (c_out, c_in, kernel, kernel), fan_in, fan_out))
        self.b = Parameter(f"{name}.b", np.zeros(c_out))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class Deconv2d(Module):
    def __init__(self, name: str, c_in: int, c_out: int, kernel: int, stride: int, padding: int,
                 rng: np.random.Generator):
        fan_in = c_in * kernel * kernel
        fan_out = c_out * kernel * kernel
        self.w = Parameter(f"{name}.w", xavier_uniform(rng, (c_in, c_out, kernel, kernel), fan_in, fan_out))
        self.b = Parameter(f"{name}.b", np.zeros(c_out))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.deconv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, name: str, dim: int):
        self.gamma = Parameter(f"{name}.gamma", np.ones(dim))
        self.beta = Parameter(f"{name}.beta", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta)


class MultiHeadSelfAttention(Module):
    """Self-attention whose projection width rounds up to a multiple of the head count."""

    def __init__(self, name: str, embed_dim: int, heads: int, rng: np.random.Generator):
        if heads < 1:
            raise ValueError(f"heads must be >= 1, got {heads}")
        self.heads = heads
        dk = -(-embed_dim // heads)  # ceil division
        proj = heads * dk
        self.wq = Parameter(f"{name}.wq", xavier_uniform(rng, (embed_dim, proj), embed_dim, proj))
        self.bq = Parameter(f"{name}.bq", np.zeros(proj))
        self.wk = Parameter(f"{name}.wk", xavier_uniform(rng, (embed_dim, proj), embed_dim, proj))
        self.bk = Parameter(f"{name}.bk", np.zeros(proj))
        self.wv = Parameter(f"{name}.wv", xavier_uniform(rng, (embed_dim, proj), embed_dim, proj))
        self.bv = Parameter(f"{name}.bv", np.zeros(proj))
        self.wo = Parameter(f"{name}.wo", xavier_uniform(rng, (proj, embed_dim), proj, embed_dim))
        self.bo = Parameter(f"{name}.bo", np.zeros(embed_dim))

    def __call__(self, x: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        return ops.multi_head_attention(
            x, self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo,
            heads=self.heads, key_mask=key_mask,
        )


class TransformerBlock(Module):
    """Post-norm block: LN(x + attn(x)) then LN(x + ffn(x)); GELU feed-forward."""

    def __init__(self, name: str, embed_dim: int, heads: int, rng: np.random.Generator,
                 ffn_mult: int = 4):
        self.attn = MultiHeadSelfAttention(f"{name}.attn", embed_dim, heads, rng)
        self.ln1 = LayerNorm(f"{name}.ln1", embed_dim)
        self.ff1 = Linear(f"{name}.ff1", embed_dim, ffn_mult * embed_dim, rng)
        self.ff2 = Linear(f"{name}.ff2", ffn_mult * embed_dim, embed_dim, rng)
        self.ln2 = LayerNorm(f"{name}.ln2", embed_dim)

    def __call__(self, x: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        x = self.ln1(ops.add(x, self.attn(x, key_mask=key_mask)))
        return self.ln2(ops.add(x, self.ff2(ops.gelu(self.ff1(x)))))


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Fixed sin/cos positional table of shape (length, dim)."""
    pos = np.arange(length)[:, None].astype(np.float64)
    idx = np.arange(dim)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2.0 * (idx // 2) / dim)
    table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def add_positional_encoding(x: Tensor) -> Tensor:
    """Add the sinusoidal table to a (n, t, e) batch of continuous inputs."""
    n, t, e = x.shape
    table = sinusoidal_positions(t, e)
    return ops.add(x, Tensor(np.broadcast_to(table, (n, t, e)).copy()))
