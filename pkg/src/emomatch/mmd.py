"""Gaussian-kernel Maximum Mean Discrepancy and the cross-modal matching losses.

Sample sets are (m, d) arrays or Tensors, one latent code per row. The MMD
estimate is the unbiased U-statistic form: within-set kernel means (diagonal
excluded) minus twice the cross-set kernel mean. Because the estimator is
invariant to row permutations, the unpaired (repulsive) term is computed on
two disjoint half-batches so that the compared sets truly come from
mismatched samples; shuffling a whole batch against itself would change
nothing at the set level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .autodiff import Tensor, ops


class MMDError(ValueError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    """Bandwidth policy: 'median_heuristic' recomputes sigma per call from the
    pooled pair of sets (treated as a constant, no gradient through sigma);
    'fixed' always uses ``sigma``."""

    sigma_policy: str = "median_heuristic"
    sigma: float = 1.0

    def __post_init__(self):
        if self.sigma_policy not in ("fixed", "median_heuristic"):
            raise ValueError(f"unknown sigma policy '{self.sigma_policy}'")
        if self.sigma <= 0:
            raise ValueError(f"kernel sigma must be positive, got {self.sigma}")

    def resolve_sigma(self, p: np.ndarray, q: np.ndarray) -> float:
        if self.sigma_policy == "fixed":
            return self.sigma
        return median_heuristic_sigma(p, q)


def gaussian_kernel(x, x_prime, sigma: float) -> float:
    """k(x, x') = exp(-||x - x'||^2 / (2 sigma^2))."""
    if sigma <= 0:
        raise ValueError(f"kernel sigma must be positive, got {sigma}")
    x = np.asarray(x, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    if x.shape != x_prime.shape:
        raise MMDError(f"kernel inputs must share a dimension, got {x.shape} vs {x_prime.shape}")
    d = x - x_prime
    return float(np.exp(-np.dot(d, d) / (2.0 * sigma * sigma)))


def median_heuristic_sigma(p, q) -> float:
    """sqrt(median pairwise squared distance of the pooled set / 2); 1.0 if degenerate."""
    p = _rows(p)
    q = _rows(q)
    pooled = np.concatenate([p, q], axis=0)
    if pooled.shape[0] < 2:
        raise MMDError(f"median heuristic needs at least 2 pooled points, got {pooled.shape[0]}")
    med = float(np.median(pdist(pooled, "sqeuclidean")))
    if med <= 0.0:
        return 1.0
    return float(np.sqrt(med / 2.0))


def _rows(x) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise MMDError(f"sample sets must be (m, d) arrays, got shape {arr.shape}")
    return arr


def _as_set(x) -> Tensor:
    if isinstance(x, Tensor):
        if x.ndim == 1:
            return ops.reshape(x, (x.shape[0], 1))
        if x.ndim != 2:
            raise MMDError(f"sample sets must be (m, d) tensors, got shape {x.shape}")
        return x
    return Tensor(_rows(x))


def mmd_estimate(p, q, kernel: KernelConfig) -> Tensor:
    """Unbiased MMD^2 estimate between two sample sets; differentiable in both."""
    p = _as_set(p)
    q = _as_set(q)
    m, d = p.shape
    n, d2 = q.shape
    if d != d2:
        raise MMDError(f"sample sets must share the latent dimension, got {d} vs {d2}")
    if m < 2 or n < 2:
        raise MMDError(
            f"the unbiased estimator divides by m(m-1); need at least 2 samples per set, got m={m}, n={n}"
        )
    sigma = kernel.resolve_sigma(p.data, q.data)
    scale = -1.0 / (2.0 * sigma * sigma)

    k_pp = ops.exp(ops.scalar_mul(ops.squared_euclidean_distance_matrix(p, p), scale))
    k_qq = ops.exp(ops.scalar_mul(ops.squared_euclidean_distance_matrix(q, q), scale))
    k_pq = ops.exp(ops.scalar_mul(ops.squared_euclidean_distance_matrix(p, q), scale))

    # self-similarities are exactly 1 and carry no gradient, so subtract the count
    term_p = ops.scalar_mul(ops.scalar_add(ops.tensor_sum(k_pp), -float(m)), 1.0 / (m * (m - 1)))
    term_q = ops.scalar_mul(ops.scalar_add(ops.tensor_sum(k_qq), -float(n)), 1.0 / (n * (n - 1)))
    cross = ops.scalar_mul(ops.tensor_sum(k_pq), 2.0 / (m * n))
    return ops.add(ops.add(term_p, term_q), ops.negate(cross))


def _check_aligned(latents: dict[str, Tensor]) -> int:
    sizes = {name: z.shape[0] for name, z in latents.items()}
    if len(set(sizes.values())) > 1:
        raise MMDError(f"paired sample sets must share cardinality, got {sizes}")
    return next(iter(sizes.values()))


def pair_loss(z_a, z_v, z_l, kernel: KernelConfig, include_visual_lexical: bool = False) -> Tensor:
    """Attractive matching: MMD(a, v) + MMD(a, l), skipping absent modalities."""
    present = {name: _as_set(z) for name, z in (("a", z_a), ("v", z_v), ("l", z_l)) if z is not None}
    if "a" not in present or len(present) < 2:
        raise MMDError(f"pair loss needs the acoustic anchor plus one other modality, got {sorted(present)}")
    _check_aligned(present)
    total = None
    for other in ("v", "l"):
        if other in present:
            term = mmd_estimate(present["a"], present[other], kernel)
            total = term if total is None else ops.add(total, term)
    if include_visual_lexical and "v" in present and "l" in present:
        total = ops.add(total, mmd_estimate(present["v"], present["l"], kernel))
    return total


def _validate_derangement(perm, m: int, name: str) -> np.ndarray:
    p = np.asarray(perm, dtype=np.int64)
    if p.shape != (m,) or sorted(p.tolist()) != list(range(m)):
        raise MMDError(f"{name} must be a permutation of 0..{m - 1}, got shape {p.shape}")
    fixed = np.nonzero(p == np.arange(m))[0]
    if fixed.size:
        raise MMDError(f"{name} has fixed points at {fixed.tolist()}; a derangement is required")
    return p


def random_derangement(rng: np.random.Generator, m: int) -> np.ndarray:
    """Single-cycle random derangement (no fixed points for any m >= 2)."""
    if m < 2:
        raise MMDError(f"no derangement exists for {m} element(s)")
    order = rng.permutation(m)
    out = np.empty(m, dtype=np.int64)
    out[order] = np.roll(order, -1)
    return out


def unpaired_mmd(z_a, z_v, z_l, kernel: KernelConfig, derangement_v=None, derangement_l=None) -> Tensor:
    """Raw MMD between deliberately mismatched cross-modal sets (before negation).

    Acoustic latents come from the first half of the batch, the other
    modalities from deranged indices drawn from the second half, so the two
    sets never describe the same samples. Batches smaller than 4 fall back to
    whole-set comparison (too few rows to split), which is degenerate but
    defined.
    """
    present = {name: _as_set(z) for name, z in (("a", z_a), ("v", z_v), ("l", z_l)) if z is not None}
    if "a" not in present or len(present) < 2:
        raise MMDError(f"unpaired loss needs the acoustic anchor plus one other modality, got {sorted(present)}")
    m = _check_aligned(present)
    ders = {"v": derangement_v, "l": derangement_l}
    total = None
    for other in ("v", "l"):
        if other not in present:
            continue
        if ders[other] is None:
            raise MMDError(f"missing derangement for modality '{other}'")
        der = _validate_derangement(ders[other], m, f"derangement_{other}")
        if m >= 4:
            half = m // 2
            a_set = ops.gather_rows(present["a"], np.arange(half))
            other_set = ops.gather_rows(present[other], der[np.arange(half, 2 * half)])
        else:
            a_set = present["a"]
            other_set = ops.gather_rows(present[other], der)
        term = mmd_estimate(a_set, other_set, kernel)
        total = term if total is None else ops.add(total, term)
    return total


def unpair_loss(z_a, z_v, z_l, kernel: KernelConfig, derangement_v=None, derangement_l=None,
                floor: float = -2.0) -> Tensor:
    """Repulsive matching term: -(mismatched MMD sum), clamped at ``floor``."""
    raw = unpaired_mmd(z_a, z_v, z_l, kernel, derangement_v, derangement_l)
    return ops.clamp_min(ops.negate(raw), floor)
