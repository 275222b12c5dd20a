"""Classifier head behaviour and loss-composition identities."""

import numpy as np
import pytest

from emomatch.autodiff import Tensor
from emomatch.data import Batch
from emomatch.dae import DAEConfig
from emomatch.mmd import random_derangement
from emomatch.objective import (
    EmotionClassifier,
    LossBreakdown,
    LossWeights,
    MatchingConfig,
    ModelBundle,
    classification_loss,
    mean_latent_norm,
    semi_loss,
    supervised_loss,
    unsupervised_loss,
)

TOY = DAEConfig.toy()
MODS = ("acoustic", "visual", "lexical")


def toy_batch(rng, n=12, labeled=True):
    labels = np.asarray([i % 4 for i in range(n)]) if labeled else None
    return Batch(
        ids=[f"s{i}" for i in range(n)],
        features={
            "acoustic": rng.normal(size=(n, 64)),
            "visual": rng.normal(size=(n, 6, 16)),
            "lexical": rng.normal(size=(n, 8, 32)),
        },
        lengths={"visual": np.full(n, 6), "lexical": np.full(n, 8)},
        labels=labels,
    )


def derangements(rng, n):
    return {"visual": random_derangement(rng, n), "lexical": random_derangement(rng, n)}


# ---------------------------------------------------------------------------
# classifier


def test_zero_weight_classifier_is_uniform():
    clf = EmotionClassifier(16, 3, 4, np.random.default_rng(0))
    for p in clf.parameters():
        p.data = np.zeros_like(p.data)
    z = [Tensor(np.random.default_rng(1).normal(size=(5, 16))) for _ in range(3)]
    probs = clf.classify(z).data
    np.testing.assert_allclose(probs, 0.25, atol=1e-12)


def test_classifier_probabilities_normalised_and_repeatable():
    rng = np.random.default_rng(2)
    clf = EmotionClassifier(16, 3, 4, rng)
    z = [Tensor(np.random.default_rng(3).normal(size=(7, 16))) for _ in range(3)]
    p1 = clf.classify(z).data
    p2 = clf.classify(z).data
    np.testing.assert_array_equal(p1, p2)
    np.testing.assert_allclose(p1.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p1 > 0) and np.all(p1 < 1)


def test_classification_loss_hand_values():
    assert classification_loss(np.array([[1.0, 0.0]]), [0]) == pytest.approx(0.0, abs=1e-12)
    uniform = np.full((3, 4), 0.25)
    assert classification_loss(uniform, [0, 1, 2]) == pytest.approx(np.log(4.0), abs=1e-12)
    p = np.array([[0.5, 0.5], [0.25, 0.75]])
    got = classification_loss(p, [0, 0])
    assert got == pytest.approx((np.log(2.0) + np.log(4.0)) / 2.0, abs=1e-12)
    assert got == pytest.approx(1.039721, abs=1e-6)


def test_classification_loss_rejects_bad_labels():
    from emomatch.autodiff import ShapeError

    with pytest.raises(ShapeError, match="label"):
        classification_loss(np.full((2, 3), 1 / 3), [0, 3])


# ---------------------------------------------------------------------------
# supervised loss


@pytest.fixture(scope="module")
def bundle():
    return ModelBundle(MODS, TOY, 4, np.random.default_rng(42))


def test_supervised_alpha_beta_zero_is_pure_classification(bundle):
    rng = np.random.default_rng(0)
    batch = toy_batch(rng)
    bd = supervised_loss(bundle, batch, LossWeights(0.0, 0.0, 0.0), MatchingConfig())
    assert bd.l_s == bd.l_cls
    assert bd.l_rec == bd.l_pair == bd.l_unpair == 0.0


def test_supervised_beta_zero_uses_alpha_weighted_reconstruction(bundle):
    rng = np.random.default_rng(1)
    batch = toy_batch(rng)
    bd = supervised_loss(bundle, batch, LossWeights(0.2, 0.0, 0.0), MatchingConfig())
    assert bd.l_s == pytest.approx(bd.l_cls + 0.2 * bd.l_rec, abs=1e-12)
    assert bd.l_rec > 0.0


def test_supervised_full_weights_match_component_recomputation(bundle):
    rng = np.random.default_rng(2)
    batch = toy_batch(rng)
    ders = derangements(rng, len(batch))
    weights = LossWeights(0.2, 0.1, 0.3)
    matching = MatchingConfig(sigma_policy="fixed", sigma=1.0)
    bd = supervised_loss(bundle, batch, weights, matching, ders)

    # independent recomposition from module-level ops
    from emomatch.dae import reconstruction_loss, reconstruction_target
    from emomatch.mmd import pair_loss, unpair_loss

    latents = bundle.encode_batch(batch)
    l_cls = classification_loss(bundle.classifier.classify(list(latents.values())).data, batch.labels)
    l_rec = sum(
        reconstruction_loss(batch.features[m], bundle.daes[m].decode(latents[m]),
                            lambda a, mod=m: reconstruction_target(mod, a)).item()
        for m in MODS
    )
    kernel = matching.kernel()
    l_pair = pair_loss(latents["acoustic"], latents["visual"], latents["lexical"], kernel).item()
    l_unpair = unpair_loss(latents["acoustic"], latents["visual"], latents["lexical"], kernel,
                           ders["visual"], ders["lexical"]).item()
    want = l_cls + 0.2 * l_rec + 0.1 * (l_pair + l_unpair)
    assert bd.l_s == pytest.approx(want, rel=1e-9)
    assert bd.l_cls == pytest.approx(l_cls, rel=1e-9)


def test_supervised_requires_labels(bundle):
    with pytest.raises(ValueError, match="labeled"):
        supervised_loss(bundle, toy_batch(np.random.default_rng(3), labeled=False),
                        LossWeights(), MatchingConfig())


def test_missing_modality_raises(bundle):
    rng = np.random.default_rng(4)
    batch = toy_batch(rng)
    del batch.features["visual"]
    from emomatch.autodiff import ShapeError

    with pytest.raises(ShapeError, match="visual"):
        supervised_loss(bundle, batch, LossWeights(), MatchingConfig(), derangements(rng, len(batch)))


# ---------------------------------------------------------------------------
# unsupervised / semi


def test_unsupervised_zero_weights_is_zero(bundle):
    bd = unsupervised_loss(bundle, toy_batch(np.random.default_rng(5), labeled=False),
                           LossWeights(0.0, 0.0, 0.0), MatchingConfig())
    assert bd.l_u == 0.0


def test_unsupervised_warns_on_labels(bundle, caplog):
    import logging

    with caplog.at_level(logging.WARNING):
        unsupervised_loss(bundle, toy_batch(np.random.default_rng(6)),
                          LossWeights(0.0, 0.0, 0.0), MatchingConfig())
    assert "ignored" in caplog.text


def test_unsupervised_composes_from_components(bundle):
    rng = np.random.default_rng(7)
    batch = toy_batch(rng, labeled=False)
    ders = derangements(rng, len(batch))
    weights = LossWeights(0.2, 0.1, 0.3)
    bd = unsupervised_loss(bundle, batch, weights, MatchingConfig(), ders)
    assert bd.l_u == pytest.approx(0.2 * bd.l_u_rec + 0.1 * (bd.l_u_pair + bd.l_u_unpair), abs=1e-12)
    assert bd.l_cls == 0.0


def test_semi_omega_zero_reduces_to_supervised(bundle):
    rng = np.random.default_rng(8)
    lb, ub = toy_batch(rng), toy_batch(rng, labeled=False)
    d1, d2 = derangements(rng, len(lb)), derangements(rng, len(ub))
    weights = LossWeights(0.2, 0.1, 0.0)
    bd = semi_loss(bundle, lb, ub, weights, MatchingConfig(), d1, d2)
    sup = supervised_loss(bundle, lb, weights, MatchingConfig(), d1)
    assert bd.l_semi == sup.l_s
    assert bd.loss.item() == sup.l_s


def test_semi_paper_omega_identity(bundle):
    rng = np.random.default_rng(9)
    lb, ub = toy_batch(rng), toy_batch(rng, labeled=False)
    weights = LossWeights(0.2, 0.1, 0.3)
    bd = semi_loss(bundle, lb, ub, weights, MatchingConfig(),
                   derangements(rng, len(lb)), derangements(rng, len(ub)))
    assert bd.l_semi - bd.l_s == pytest.approx(0.3 * bd.l_u, abs=1e-12)


def test_semi_empty_unlabeled_equals_supervised_with_notice(bundle, caplog):
    import logging

    rng = np.random.default_rng(10)
    lb = toy_batch(rng)
    d1 = derangements(rng, len(lb))
    with caplog.at_level(logging.INFO):
        bd = semi_loss(bundle, lb, None, LossWeights(), MatchingConfig(), d1)
    assert "supervised" in caplog.text
    sup = supervised_loss(bundle, lb, LossWeights(), MatchingConfig(), d1)
    assert bd.l_semi == sup.l_s


def test_classifier_gradients_ignore_unlabeled_batch(bundle):
    rng = np.random.default_rng(11)
    lb = toy_batch(rng)
    ub = toy_batch(rng, labeled=False)
    d1, d2 = derangements(rng, len(lb)), derangements(rng, len(ub))
    weights = LossWeights(0.2, 0.1, 0.3)

    bd = semi_loss(bundle, lb, ub, weights, MatchingConfig(sigma_policy="fixed"), d1, d2)
    bd.loss.backward()
    with_unlabeled = [p.grad.copy() for p in bundle.classifier.parameters()]

    sup = supervised_loss(bundle, lb, weights, MatchingConfig(sigma_policy="fixed"), d1)
    sup.loss.backward()
    without = [p.grad.copy() for p in bundle.classifier.parameters()]
    for a, b in zip(with_unlabeled, without):
        np.testing.assert_array_equal(a, b)


def test_composition_guard_trips_on_corruption():
    bd = LossBreakdown(l_cls=1.0, l_s=999.0, l_semi=999.0)
    with pytest.raises(AssertionError, match="composition"):
        bd.check_composition(LossWeights(0.0, 0.0, 0.0))


def test_two_modality_bundle_runs(bundle):
    rng = np.random.default_rng(12)
    two = ModelBundle(("acoustic", "lexical"), TOY, 4, rng)
    batch = toy_batch(rng)
    ders = {"lexical": random_derangement(rng, len(batch))}
    bd = supervised_loss(two, batch, LossWeights(0.2, 0.1, 0.0), MatchingConfig(), ders)
    assert bd.l_pair != 0.0
    assert np.isfinite(bd.l_s)


def test_mean_latent_norm(bundle):
    z = {"acoustic": Tensor(np.ones((4, 16)) * 2.0)}
    assert mean_latent_norm(z) == pytest.approx(8.0)  # ||2*ones(16)|| = 2*4
