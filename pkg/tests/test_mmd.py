"""Hand-computed values, an independent double-loop oracle, and property checks
for the MMD estimator and matching losses."""

import math

import numpy as np
import pytest

from emomatch.autodiff import Parameter, Tensor, grad_check
from emomatch.mmd import (
    KernelConfig,
    MMDError,
    gaussian_kernel,
    median_heuristic_sigma,
    mmd_estimate,
    pair_loss,
    random_derangement,
    unpair_loss,
    unpaired_mmd,
)

FIXED = KernelConfig(sigma_policy="fixed", sigma=1.0)


def mmd_oracle(p: np.ndarray, q: np.ndarray, sigma: float) -> float:
    """Naive double-loop unbiased estimator, independent of the tape path."""
    p = np.atleast_2d(np.asarray(p, dtype=float).T).T if np.asarray(p).ndim == 1 else np.asarray(p, float)
    q = np.atleast_2d(np.asarray(q, dtype=float).T).T if np.asarray(q).ndim == 1 else np.asarray(q, float)
    m, n = len(p), len(q)
    t1 = sum(
        gaussian_kernel(p[i], p[j], sigma) for i in range(m) for j in range(m) if i != j
    ) / (m * (m - 1))
    t2 = sum(
        gaussian_kernel(q[i], q[j], sigma) for i in range(n) for j in range(n) if i != j
    ) / (n * (n - 1))
    t3 = 2.0 / (m * n) * sum(gaussian_kernel(p[i], q[j], sigma) for i in range(m) for j in range(n))
    return t1 + t2 - t3


# ---------------------------------------------------------------------------
# gaussian kernel


def test_kernel_is_one_at_zero_distance():
    rng = np.random.default_rng(0)
    for sigma in (0.1, 1.0, 7.3):
        x = rng.normal(size=5)
        assert gaussian_kernel(x, x, sigma) == 1.0


def test_kernel_hand_values():
    assert gaussian_kernel([0.0], [2.0], 1.0) == pytest.approx(math.exp(-2.0), rel=1e-12)
    assert gaussian_kernel([1.0, 1.0], [1.0, 3.0], math.sqrt(2.0)) == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_kernel_symmetric_and_bounded():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x, y = rng.normal(size=4), rng.normal(size=4)
        k1, k2 = gaussian_kernel(x, y, 0.8), gaussian_kernel(y, x, 0.8)
        assert k1 == k2
        assert 0.0 < k1 <= 1.0


def test_kernel_rejects_bad_sigma():
    with pytest.raises(ValueError, match="sigma"):
        gaussian_kernel([0.0], [1.0], 0.0)


# ---------------------------------------------------------------------------
# mmd estimate


def test_identical_constant_sets_give_zero_exactly():
    p = np.ones((5, 3)) * 0.7
    assert mmd_estimate(p, p.copy(), FIXED).item() == 0.0


def test_hand_value_two_point_sets():
    p = np.array([[0.0], [2.0]])
    est = mmd_estimate(p, p.copy(), FIXED).item()
    assert est == pytest.approx(math.exp(-2.0) - 1.0, abs=1e-12)
    assert est == pytest.approx(-0.864665, abs=1e-6)


def test_far_separated_sets_approach_two():
    p = np.zeros((2, 1))
    q = np.full((2, 1), 100.0)
    assert mmd_estimate(p, q, FIXED).item() == pytest.approx(2.0, abs=1e-3)


@pytest.mark.parametrize("seed", range(10))
def test_matches_double_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(5, 3))
    q = rng.normal(size=(7, 3)) + 0.5
    got = mmd_estimate(p, q, FIXED).item()
    assert got == pytest.approx(mmd_oracle(p, q, 1.0), abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_symmetry_and_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(6, 4))
    q = rng.normal(size=(6, 4))
    kernel = KernelConfig(sigma_policy="fixed", sigma=1.3)
    ab = mmd_estimate(p, q, kernel).item()
    ba = mmd_estimate(q, p, kernel).item()
    assert ab == pytest.approx(ba, abs=1e-12)
    shuffled = mmd_estimate(p[rng.permutation(6)], q, kernel).item()
    assert shuffled == pytest.approx(ab, abs=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_equal_multisets_are_nonpositive(seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(5, 2))
    est = mmd_estimate(p, p[rng.permutation(5)], FIXED).item()
    assert est <= 1e-12


def test_rejects_singleton_sets():
    with pytest.raises(MMDError, match="unbiased"):
        mmd_estimate(np.zeros((1, 2)), np.zeros((3, 2)), FIXED)


def test_rejects_dimension_mismatch():
    with pytest.raises(MMDError, match="dimension"):
        mmd_estimate(np.zeros((3, 2)), np.zeros((3, 4)), FIXED)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = Parameter("p", rng.normal(size=(4, 3)))
    q = Parameter("q", rng.normal(size=(5, 3)))
    kernel = KernelConfig(sigma_policy="fixed", sigma=1.1)
    err = grad_check(lambda: mmd_estimate(p, q, kernel), [p, q], epsilon=1e-5)
    assert err <= 1e-5


# ---------------------------------------------------------------------------
# median heuristic


def test_median_heuristic_hand_values():
    assert median_heuristic_sigma(np.array([[0.0]]), np.array([[2.0]])) == pytest.approx(math.sqrt(2.0))
    # pooled {0,1,3}: squared distances {1,4,9}, median 4 -> sqrt(2)
    assert median_heuristic_sigma(np.array([[0.0], [1.0]]), np.array([[3.0]])) == pytest.approx(math.sqrt(2.0))


def test_median_heuristic_identical_points_fall_back_to_one():
    p = np.zeros((4, 2))
    assert median_heuristic_sigma(p, p) == 1.0


def test_median_heuristic_needs_two_points():
    with pytest.raises(MMDError):
        median_heuristic_sigma(np.zeros((1, 2)), np.zeros((0, 2)))


# ---------------------------------------------------------------------------
# pair / unpair losses


def test_pair_loss_zero_on_identical_constant_sets():
    z = np.ones((6, 4))
    assert pair_loss(z, z.copy(), z.copy(), FIXED).item() == 0.0


def test_pair_loss_two_modality_reduces_to_single_term():
    rng = np.random.default_rng(3)
    a, l = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    got = pair_loss(a, None, l, FIXED).item()
    assert got == pytest.approx(mmd_estimate(a, l, FIXED).item(), abs=1e-15)


def test_pair_loss_composes_from_independent_estimates():
    rng = np.random.default_rng(4)
    a, v, l = (rng.normal(size=(8, 4)) for _ in range(3))
    got = pair_loss(a, v, l, FIXED).item()
    want = mmd_estimate(a, v, FIXED).item() + mmd_estimate(a, l, FIXED).item()
    assert got == pytest.approx(want, abs=1e-12)
    with_vl = pair_loss(a, v, l, FIXED, include_visual_lexical=True).item()
    assert with_vl == pytest.approx(want + mmd_estimate(v, l, FIXED).item(), abs=1e-12)


def test_pair_loss_rejects_cardinality_mismatch():
    with pytest.raises(MMDError, match="cardinality"):
        pair_loss(np.zeros((4, 2)), np.zeros((5, 2)), None, FIXED)


def test_unpair_smallest_batch_is_defined():
    rng = np.random.default_rng(5)
    a, v, l = (rng.normal(size=(2, 3)) for _ in range(3))
    swap = np.array([1, 0])
    val = unpair_loss(a, v, l, FIXED, swap, swap).item()
    assert np.isfinite(val)


def test_unpair_degenerate_identical_latents_is_zero():
    z = np.ones((8, 3)) * 2.0
    der = random_derangement(np.random.default_rng(0), 8)
    assert unpaired_mmd(z, z.copy(), z.copy(), FIXED, der, der).item() == 0.0


def test_unpair_matches_independent_reconstruction():
    rng = np.random.default_rng(6)
    a, v, l = (rng.normal(size=(8, 4)) for _ in range(3))
    der_v = random_derangement(rng, 8)
    der_l = random_derangement(rng, 8)
    got = unpaired_mmd(a, v, l, FIXED, der_v, der_l).item()
    # the documented construction: acoustic half A vs deranged indices from half B
    half = np.arange(4)
    want = mmd_oracle(a[half], v[der_v[half + 4]], 1.0) + mmd_oracle(a[half], l[der_l[half + 4]], 1.0)
    assert got == pytest.approx(want, abs=1e-12)


def test_unpair_loss_is_clamped_negation():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(8, 4)) * 0.01
    v = rng.normal(size=(8, 4)) * 0.01 + 500.0  # tight clusters far apart: raw term ~2
    l = rng.normal(size=(8, 4)) * 0.01 - 500.0
    der = random_derangement(rng, 8)
    raw = unpaired_mmd(a, v, l, FIXED, der, der).item()
    loss = unpair_loss(a, v, l, FIXED, der, der).item()
    assert raw == pytest.approx(4.0, abs=1e-2)
    assert loss == -2.0  # floor binds


def test_unpair_rejects_fixed_points():
    z = np.zeros((4, 2))
    ident = np.arange(4)
    with pytest.raises(MMDError, match="fixed point"):
        unpair_loss(z, z, z, FIXED, ident, ident)


@pytest.mark.parametrize("m", [2, 3, 4, 5, 17])
def test_random_derangement_has_no_fixed_points(m):
    rng = np.random.default_rng(m)
    for _ in range(10):
        d = random_derangement(rng, m)
        assert sorted(d.tolist()) == list(range(m))
        assert np.all(d != np.arange(m))
