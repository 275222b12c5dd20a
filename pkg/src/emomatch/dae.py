"""Per-modality auto-encoders.

The acoustic model is a symmetric stack of linear layers. The visual and
lexical models run transformer blocks over the feature sequence, downsample
with a conv stack (the sequence is treated as a 1-channel time-by-feature
image), and project the flattened maps to the shared latent width; decoding
mirrors every stage with linear up-projection, deconvolutions, and
transformer blocks, ending in a per-step affine output layer.

Sequence reconstruction targets are the time-reversed inputs; the acoustic
target is the input itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import nn
from .autodiff import ShapeError, Tensor, ops
from .autodiff.ops import conv2d_output_shape

SEQUENCE_MODALITIES = ("visual", "lexical")
MODALITIES = ("acoustic",) + SEQUENCE_MODALITIES


@dataclass(frozen=True)
class ConvSpec:
    kernel: int
    stride: int
    padding: int
    channels: int


@dataclass(frozen=True)
class DAEConfig:
    latent_dim: int = 16
    acoustic_dim: int = 64
    acoustic_hidden: tuple[int, ...] = (32,)
    visual_shape: tuple[int, int] = (6, 16)
    visual_conv: tuple[ConvSpec, ...] = (ConvSpec(4, 2, 1, 8),)
    visual_enc_hidden: tuple[int, ...] = ()
    lexical_shape: tuple[int, int] = (8, 32)
    lexical_conv: tuple[ConvSpec, ...] = (ConvSpec(4, 2, 1, 8),)
    lexical_enc_hidden: tuple[int, ...] = ()
    heads: int = 2
    blocks: int = 1
    ffn_mult: int = 4
    use_padding_mask: bool = True

    @classmethod
    def paper(cls) -> "DAEConfig":
        """Full-scale configuration: 128-dim latents, 1582/18x342/22x1024 inputs."""
        return cls(
            latent_dim=128,
            acoustic_dim=1582,
            acoustic_hidden=(512, 256),
            visual_shape=(18, 342),
            visual_conv=(ConvSpec(4, 2, 1, 16), ConvSpec(5, 2, 1, 64), ConvSpec(3, 3, 1, 32)),
            visual_enc_hidden=(),
            lexical_shape=(22, 1024),
            lexical_conv=(ConvSpec(4, 2, 1, 64), ConvSpec(4, 3, 1, 4)),
            lexical_enc_hidden=(512,),
            heads=4,
            blocks=2,
            use_padding_mask=False,
        )

    @classmethod
    def toy(cls) -> "DAEConfig":
        """Desk-scale configuration used by the synthetic benchmark."""
        return cls()

    def seq_shape(self, modality: str) -> tuple[int, int]:
        return {"visual": self.visual_shape, "lexical": self.lexical_shape}[modality]

    def conv_stack(self, modality: str) -> tuple[ConvSpec, ...]:
        return {"visual": self.visual_conv, "lexical": self.lexical_conv}[modality]

    def enc_hidden(self, modality: str) -> tuple[int, ...]:
        return {"visual": self.visual_enc_hidden, "lexical": self.lexical_enc_hidden}[modality]

    def conv_chain(self, modality: str) -> list[tuple[int, int, int]]:
        """(channels, h, w) after each conv layer, starting from the 1-channel input."""
        h, w = self.seq_shape(modality)
        chain = [(1, h, w)]
        for spec in self.conv_stack(modality):
            h, w = conv2d_output_shape((h, w), spec.kernel, spec.stride, spec.padding)
            if h <= 0 or w <= 0:
                raise ShapeError(f"{modality} conv stack collapses the {h}x{w} map; adjust ConvSpec")
            chain.append((spec.channels, h, w))
        return chain

    def flat_dim(self, modality: str) -> int:
        c, h, w = self.conv_chain(modality)[-1]
        return c * h * w

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DAEConfig":
        d = dict(d)
        for key in ("visual_conv", "lexical_conv"):
            d[key] = tuple(ConvSpec(*spec) if not isinstance(spec, dict) else ConvSpec(**spec) for spec in d[key])
        for key in ("acoustic_hidden", "visual_enc_hidden", "lexical_enc_hidden", "visual_shape", "lexical_shape"):
            d[key] = tuple(d[key])
        return cls(**d)


def _linear_stack(name: str, dims: list[int], rng: np.random.Generator) -> list[nn.Linear]:
    return [nn.Linear(f"{name}{i}", dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]


def _run_stack(layers: list[nn.Linear], x: Tensor) -> Tensor:
    for i, layer in enumerate(layers):
        x = layer(x)
        if i < len(layers) - 1:
            x = ops.relu(x)
    return x


class AcousticDAE(nn.Module):
    modality = "acoustic"

    def __init__(self, config: DAEConfig, rng: np.random.Generator, name: str = "dae_a"):
        self.config = config
        dims = [config.acoustic_dim, *config.acoustic_hidden, config.latent_dim]
        self.encoder = _linear_stack(f"{name}.enc", dims, rng)
        self.decoder = _linear_stack(f"{name}.dec", dims[::-1], rng)

    def _check(self, x: Tensor) -> Tensor:
        if x.ndim == 1:
            x = ops.reshape(x, (1, x.shape[0]))
        if x.ndim != 2 or x.shape[1] != self.config.acoustic_dim:
            raise ShapeError(
                f"acoustic input must be (n, {self.config.acoustic_dim}), got {x.shape}"
            )
        return x

    def encode(self, x, lengths=None) -> Tensor:
        x = self._check(x if isinstance(x, Tensor) else Tensor(x))
        return _run_stack(self.encoder, x)

    def decode(self, z: Tensor) -> Tensor:
        if z.ndim == 1:
            z = ops.reshape(z, (1, z.shape[0]))
        if z.shape[1] != self.config.latent_dim:
            raise ShapeError(f"acoustic latent must be (n, {self.config.latent_dim}), got {z.shape}")
        return _run_stack(self.decoder, z)


class SeqDAE(nn.Module):
    def __init__(self, modality: str, config: DAEConfig, rng: np.random.Generator, name: str | None = None):
        if modality not in SEQUENCE_MODALITIES:
            raise ValueError(f"sequence DAE modality must be one of {SEQUENCE_MODALITIES}, got '{modality}'")
        self.modality = modality
        self.config = config
        name = name or f"dae_{modality[0]}"
        t, e = config.seq_shape(modality)
        self.enc_blocks = [
            nn.TransformerBlock(f"{name}.encblk{i}", e, config.heads, rng, ffn_mult=config.ffn_mult)
            for i in range(config.blocks)
        ]
        self.convs: list[nn.Conv2d] = []
        c_in = 1
        for i, spec in enumerate(config.conv_stack(modality)):
            self.convs.append(nn.Conv2d(f"{name}.conv{i}", c_in, spec.channels, spec.kernel, spec.stride, spec.padding, rng))
            c_in = spec.channels
        flat = config.flat_dim(modality)
        hidden = list(config.enc_hidden(modality))
        self.enc_linears = _linear_stack(f"{name}.enclin", [flat, *hidden, config.latent_dim], rng)
        self.dec_linears = _linear_stack(f"{name}.declin", [config.latent_dim, *hidden[::-1], flat], rng)
        chain = config.conv_chain(modality)
        self.deconvs: list[nn.Deconv2d] = []
        specs = config.conv_stack(modality)
        for i in range(len(specs) - 1, -1, -1):
            spec = specs[i]
            c_out = chain[i][0]
            self.deconvs.append(
                nn.Deconv2d(f"{name}.deconv{len(specs) - 1 - i}", spec.channels, c_out, spec.kernel, spec.stride, spec.padding, rng)
            )
        self.dec_blocks = [
            nn.TransformerBlock(f"{name}.decblk{i}", e, config.heads, rng, ffn_mult=config.ffn_mult)
            for i in range(config.blocks)
        ]
        self.out_linear = nn.Linear(f"{name}.out", e, e, rng)

    def _check(self, x: Tensor) -> Tensor:
        t, e = self.config.seq_shape(self.modality)
        if x.ndim == 2:
            x = ops.reshape(x, (1, x.shape[0], x.shape[1]))
        if x.ndim != 3 or x.shape[1:] != (t, e):
            raise ShapeError(f"{self.modality} input must be (n, {t}, {e}), got {x.shape}")
        return x

    def _mask(self, n: int, lengths) -> np.ndarray | None:
        if lengths is None or not self.config.use_padding_mask:
            return None
        t, _ = self.config.seq_shape(self.modality)
        lengths = np.asarray(lengths, dtype=np.int64)
        return np.arange(t)[None, :] < lengths[:, None]

    def encode(self, x, lengths=None) -> Tensor:
        x = self._check(x if isinstance(x, Tensor) else Tensor(x))
        n, t, e = x.shape
        h = nn.add_positional_encoding(x)
        mask = self._mask(n, lengths)
        for block in self.enc_blocks:
            h = block(h, key_mask=mask)
        h = ops.reshape(h, (n, 1, t, e))
        for conv in self.convs:
            h = ops.relu(conv(h))
        h = ops.reshape(h, (n, self.config.flat_dim(self.modality)))
        return _run_stack(self.enc_linears, h)

    def decode(self, z: Tensor) -> Tensor:
        if z.ndim == 1:
            z = ops.reshape(z, (1, z.shape[0]))
        if z.shape[1] != self.config.latent_dim:
            raise ShapeError(f"{self.modality} latent must be (n, {self.config.latent_dim}), got {z.shape}")
        n = z.shape[0]
        h = _run_stack(self.dec_linears, z)
        c, hh, ww = self.config.conv_chain(self.modality)[-1]
        h = ops.reshape(h, (n, c, hh, ww))
        for i, deconv in enumerate(self.deconvs):
            h = deconv(h)
            if i < len(self.deconvs) - 1:
                h = ops.relu(h)
        t, e = self.config.seq_shape(self.modality)
        seq = ops.reshape(h, (n, t, e))
        seq = nn.add_positional_encoding(seq)
        for block in self.dec_blocks:
            seq = block(seq)
        return self.out_linear(seq)


def build_dae(modality: str, config: DAEConfig, rng: np.random.Generator):
    if modality == "acoustic":
        return AcousticDAE(config, rng)
    return SeqDAE(modality, config, rng)


def reconstruction_target(modality: str, x: np.ndarray) -> np.ndarray:
    """Acoustic reconstructs itself; sequences reconstruct the time-reversed input."""
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality '{modality}'")
    x = np.asarray(x, dtype=np.float64)
    if modality == "acoustic":
        return x
    return np.flip(x, axis=-2).copy()


def reconstruction_loss(x, x_hat: Tensor, target_fn) -> Tensor:
    """Mean squared error between ``target_fn(x)`` and the reconstruction."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    target = Tensor(target_fn(data))
    if target.shape != x_hat.shape:
        raise ShapeError(f"reconstruction target shape {target.shape} != output shape {x_hat.shape}")
    return ops.mse(x_hat, target)
