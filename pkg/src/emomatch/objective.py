"""Classifier head and the composed supervised / unsupervised / semi objectives.

The supervised loss is cross entropy plus weighted reconstruction and
distribution-matching terms; the unsupervised loss reuses the latter two on
unlabeled batches; the semi objective is their weighted sum. Every breakdown
records the scalar value of each term so the composition identities can be
asserted after the fact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from . import nn
from .autodiff import ShapeError, Tensor, ops
from .dae import DAEConfig, build_dae, reconstruction_loss, reconstruction_target
from .mmd import KernelConfig, MMDError, pair_loss, unpaired_mmd

log = logging.getLogger(__name__)

MODALITY_ORDER = ("acoustic", "visual", "lexical")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.2  # reconstruction
    beta: float = 0.1  # distribution matching
    omega: float = 0.3  # unsupervised part

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be >= 0")


@dataclass(frozen=True)
class MatchingConfig:
    sigma_policy: str = "median_heuristic"
    sigma: float = 1.0
    include_visual_lexical_pair: bool = False
    use_unpaired: bool = True
    unpair_floor: float = -2.0

    def kernel(self) -> KernelConfig:
        return KernelConfig(sigma_policy=self.sigma_policy, sigma=self.sigma)


@dataclass
class LossBreakdown:
    l_cls: float = 0.0
    l_rec: float = 0.0
    l_pair: float = 0.0
    l_unpair: float = 0.0
    l_unpair_raw: float = 0.0
    l_u_rec: float = 0.0
    l_u_pair: float = 0.0
    l_u_unpair: float = 0.0
    l_u_unpair_raw: float = 0.0
    l_s: float = 0.0
    l_u: float = 0.0
    l_semi: float = 0.0
    loss: Tensor | None = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "loss"}

    def check_composition(self, weights: LossWeights, tol: float = 1e-12) -> None:
        want_s = (self.l_cls + weights.alpha * self.l_rec) + weights.beta * (self.l_pair + self.l_unpair)
        want_u = weights.alpha * self.l_u_rec + weights.beta * (self.l_u_pair + self.l_u_unpair)
        want_semi = self.l_s + weights.omega * self.l_u
        for name, got, want in (("l_s", self.l_s, want_s), ("l_u", self.l_u, want_u), ("l_semi", self.l_semi, want_semi)):
            if abs(got - want) > tol:
                raise AssertionError(f"loss composition broken: {name}={got!r} but components give {want!r}")


class EmotionClassifier(nn.Module):
    """One hidden layer over the concatenated latents, then a K-way softmax head."""

    def __init__(self, latent_dim: int, n_modalities: int, n_classes: int, rng: np.random.Generator,
                 name: str = "clf"):
        if n_modalities < 1:
            raise ValueError("classifier needs at least one modality")
        self.n_classes = n_classes
        self.in_dim = latent_dim * n_modalities
        self.hidden = nn.Linear(f"{name}.hidden", self.in_dim, latent_dim, rng)
        self.out = nn.Linear(f"{name}.out", latent_dim, n_classes, rng)

    def logits(self, latents: list[Tensor]) -> Tensor:
        z = latents[0] if len(latents) == 1 else ops.concat(latents, axis=1)
        if z.shape[1] != self.in_dim:
            raise ShapeError(f"classifier expects concatenated width {self.in_dim}, got {z.shape[1]}")
        return self.out(ops.relu(self.hidden(z)))

    def classify(self, latents: list[Tensor]) -> Tensor:
        return ops.softmax(self.logits(latents), axis=-1)


def classification_loss(p_batch, y_batch) -> float:
    """Mean cross entropy from predicted probabilities (reporting surface)."""
    p = np.asarray(p_batch, dtype=np.float64)
    y = np.asarray(y_batch, dtype=np.int64)
    if p.ndim != 2 or y.shape != (p.shape[0],):
        raise ShapeError(f"expected (n, k) probabilities with n labels, got {p.shape} and {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= p.shape[1]):
        raise ShapeError(f"label out of range [0, {p.shape[1]})")
    clamped = np.clip(p[np.arange(len(y)), y], 1e-300, None)
    return float(-np.mean(np.log(clamped)))


class ModelBundle(nn.Module):
    """The per-modality DAEs plus the classifier for one training run."""

    def __init__(self, modalities, dae_config: DAEConfig, n_classes: int, rng: np.random.Generator):
        mods = tuple(m for m in MODALITY_ORDER if m in set(modalities))
        if not mods or set(modalities) - set(MODALITY_ORDER):
            raise ValueError(f"modalities must be a nonempty subset of {MODALITY_ORDER}, got {modalities}")
        self.modalities = mods
        self.dae_config = dae_config
        self.n_classes = n_classes
        self.daes = {m: build_dae(m, dae_config, rng) for m in mods}
        self.classifier = EmotionClassifier(dae_config.latent_dim, len(mods), n_classes, rng)

    def encode_batch(self, batch) -> dict[str, Tensor]:
        latents = {}
        for m in self.modalities:
            if m not in batch.features:
                raise ShapeError(f"batch is missing modality '{m}' required by this model")
            latents[m] = self.daes[m].encode(batch.features[m], lengths=batch.lengths.get(m))
        return latents

    def predict(self, batch) -> np.ndarray:
        probs = self.classifier.classify(list(self.encode_batch(batch).values()))
        return np.argmax(probs.data, axis=1)

    def classifier_parameters(self):
        return self.classifier.parameters()


def mean_latent_norm(latents: dict[str, Tensor]) -> float:
    """Mean L2 norm of latent rows, averaged across modalities."""
    norms = [float(np.linalg.norm(z.data, axis=1).mean()) for z in latents.values()]
    return float(np.mean(norms))


def _matching_terms(models: ModelBundle, latents: dict[str, Tensor], matching: MatchingConfig,
                    derangements: dict[str, np.ndarray] | None):
    """(pair, unpair, raw) tensors for the present modalities."""
    if "acoustic" not in models.modalities or len(models.modalities) < 2:
        raise MMDError(
            f"distribution matching needs the acoustic anchor plus one other modality, got {models.modalities}"
        )
    kernel = matching.kernel()
    z_a = latents["acoustic"]
    z_v = latents.get("visual")
    z_l = latents.get("lexical")
    pair = pair_loss(z_a, z_v, z_l, kernel, include_visual_lexical=matching.include_visual_lexical_pair)
    if not matching.use_unpaired:
        return pair, None, None
    derangements = derangements or {}
    raw = unpaired_mmd(
        z_a, z_v, z_l, kernel,
        derangement_v=derangements.get("visual"),
        derangement_l=derangements.get("lexical"),
    )
    unpair = ops.clamp_min(ops.negate(raw), matching.unpair_floor)
    return pair, unpair, raw


def _reconstruction_sum(models: ModelBundle, latents: dict[str, Tensor], batch) -> Tensor:
    total = None
    for m in models.modalities:
        x_hat = models.daes[m].decode(latents[m])
        term = reconstruction_loss(batch.features[m], x_hat, lambda a, mod=m: reconstruction_target(mod, a))
        total = term if total is None else ops.add(total, term)
    return total


def _unsupervised_terms(models, batch, weights, matching, derangements):
    """Shared alpha/beta-gated body of the supervised and unsupervised losses."""
    latents = models.encode_batch(batch)
    rec_t = _reconstruction_sum(models, latents, batch) if weights.alpha != 0.0 else None
    pair_t = unpair_t = raw_t = None
    if weights.beta != 0.0:
        pair_t, unpair_t, raw_t = _matching_terms(models, latents, matching, derangements)
    return latents, rec_t, pair_t, unpair_t, raw_t


def _weighted_sum(base: Tensor | None, rec_t, pair_t, unpair_t, weights: LossWeights) -> Tensor:
    total = base
    if rec_t is not None:
        scaled = ops.scalar_mul(rec_t, weights.alpha)
        total = scaled if total is None else ops.add(total, scaled)
    if pair_t is not None:
        match = pair_t if unpair_t is None else ops.add(pair_t, unpair_t)
        scaled = ops.scalar_mul(match, weights.beta)
        total = scaled if total is None else ops.add(total, scaled)
    if total is None:
        total = Tensor(0.0)
    return total


def supervised_loss(models: ModelBundle, batch, weights: LossWeights, matching: MatchingConfig,
                    derangements: dict[str, np.ndarray] | None = None) -> LossBreakdown:
    """Cross entropy + alpha * reconstruction + beta * (paired + unpaired matching)."""
    if batch.labels is None:
        raise ValueError("supervised loss requires a labeled batch")
    latents, rec_t, pair_t, unpair_t, raw_t = _unsupervised_terms(models, batch, weights, matching, derangements)
    cls_t = ops.cross_entropy(models.classifier.logits(list(latents.values())), batch.labels)
    total = _weighted_sum(cls_t, rec_t, pair_t, unpair_t, weights)
    bd = LossBreakdown(
        l_cls=cls_t.item(),
        l_rec=rec_t.item() if rec_t is not None else 0.0,
        l_pair=pair_t.item() if pair_t is not None else 0.0,
        l_unpair=unpair_t.item() if unpair_t is not None else 0.0,
        l_unpair_raw=raw_t.item() if raw_t is not None else 0.0,
        loss=total,
    )
    bd.l_s = total.item()
    bd.l_semi = bd.l_s
    bd.check_composition(weights)
    return bd


def unsupervised_loss(models: ModelBundle, batch, weights: LossWeights, matching: MatchingConfig,
                      derangements: dict[str, np.ndarray] | None = None) -> LossBreakdown:
    """alpha * reconstruction + beta * (paired + unpaired matching); no classifier term."""
    if batch.labels is not None:
        log.warning("unsupervised loss received a labeled batch; labels are ignored")
    _, rec_t, pair_t, unpair_t, raw_t = _unsupervised_terms(models, batch, weights, matching, derangements)
    total = _weighted_sum(None, rec_t, pair_t, unpair_t, weights)
    bd = LossBreakdown(
        l_u_rec=rec_t.item() if rec_t is not None else 0.0,
        l_u_pair=pair_t.item() if pair_t is not None else 0.0,
        l_u_unpair=unpair_t.item() if unpair_t is not None else 0.0,
        l_u_unpair_raw=raw_t.item() if raw_t is not None else 0.0,
        loss=total,
    )
    bd.l_u = total.item()
    bd.l_semi = weights.omega * bd.l_u
    bd.check_composition(weights)
    return bd


def semi_loss(models: ModelBundle, labeled_batch, unlabeled_batch, weights: LossWeights,
              matching: MatchingConfig,
              labeled_derangements: dict[str, np.ndarray] | None = None,
              unlabeled_derangements: dict[str, np.ndarray] | None = None) -> LossBreakdown:
    """Supervised loss plus omega-weighted unsupervised loss."""
    sup = supervised_loss(models, labeled_batch, weights, matching, labeled_derangements)
    if unlabeled_batch is None or len(unlabeled_batch.ids) == 0:
        log.info("semi loss: empty unlabeled batch, objective equals the supervised loss")
        sup.check_composition(weights)
        return sup
    uns = unsupervised_loss(models, unlabeled_batch, weights, matching, unlabeled_derangements)
    total = sup.loss if weights.omega == 0.0 else ops.add(sup.loss, ops.scalar_mul(uns.loss, weights.omega))
    bd = LossBreakdown(
        l_cls=sup.l_cls, l_rec=sup.l_rec, l_pair=sup.l_pair, l_unpair=sup.l_unpair,
        l_unpair_raw=sup.l_unpair_raw,
        l_u_rec=uns.l_u_rec, l_u_pair=uns.l_u_pair, l_u_unpair=uns.l_u_unpair,
        l_u_unpair_raw=uns.l_u_unpair_raw,
        l_s=sup.l_s, l_u=uns.l_u, loss=total,
    )
    bd.l_semi = bd.l_s + weights.omega * bd.l_u
    bd.check_composition(weights)
    return bd
