"""Training-loop behaviour: determinism, structural reductions, selection logic."""

import json

import numpy as np
import pytest

from emomatch.data import FeaturePipeline, SynthConfig, generate
from emomatch.objective import LossWeights
from emomatch.training import (
    ABLATION_GRID,
    ConfigError,
    TrainConfig,
    ablate,
    evaluate_records,
    kfold_select,
    sweep_unlabeled,
    train,
)


@pytest.fixture(scope="module")
def small_manifest(tmp_path_factory):
    cfg = SynthConfig(
        n_labeled=120, n_val=60, n_test=60, n_unlabeled=160,
        unlabeled_priors=(0.25, 0.25, 0.25, 0.25), seed=21,
    )
    manifest, _ = generate(cfg, tmp_path_factory.mktemp("train_ds"))
    return manifest


@pytest.fixture(scope="module")
def easy_manifest(tmp_path_factory):
    # high separation, low noise: linearly separable latents
    cfg = SynthConfig(
        n_labeled=120, n_val=60, n_test=60, n_unlabeled=40,
        unlabeled_priors=(0.25, 0.25, 0.25, 0.25),
        class_separation=5.0, noise_scale=0.3, modality_noise_scale=0.3, seed=22,
    )
    manifest, _ = generate(cfg, tmp_path_factory.mktemp("easy_ds"))
    return manifest


FAST = dict(batch_size=40, max_epochs=6, patience=6)


def test_fully_supervised_learns_separable_data(easy_manifest):
    cfg = TrainConfig(mode="fully", weights=LossWeights(0.0, 0.0, 0.0), seed=0,
                      batch_size=40, max_epochs=20, patience=20)
    res = train(cfg, easy_manifest)
    assert max(ep.val_ua for ep in res.record.epochs) >= 0.95


def test_identical_runs_are_bit_identical(small_manifest):
    cfg = TrainConfig(mode="semi", seed=5, **FAST)
    rec1 = train(cfg, small_manifest).record
    rec2 = train(cfg, small_manifest).record
    assert len(rec1.epochs) == len(rec2.epochs)
    for e1, e2 in zip(rec1.epochs, rec2.epochs):
        assert e1.losses == e2.losses  # float equality, bit for bit
        assert e1.val_ua == e2.val_ua
    assert rec1.best_epoch == rec2.best_epoch
    np.testing.assert_array_equal(rec1.test.confusion, rec2.test.confusion)


def test_semi_with_zero_omega_matches_fully_supervised_trajectory(small_manifest):
    weights = LossWeights(0.2, 0.1, 0.0)
    fully = train(TrainConfig(mode="fully", weights=weights, seed=3, **FAST), small_manifest).record
    semi = train(TrainConfig(mode="semi", weights=weights, seed=3, **FAST), small_manifest).record
    for ef, es in zip(fully.epochs, semi.epochs):
        assert ef.losses["l_s"] == es.losses["l_s"], f"epoch {ef.epoch} diverged"
        assert ef.val_ua == es.val_ua
    np.testing.assert_array_equal(fully.test.confusion, semi.test.confusion)


def test_mode_fully_never_touches_unlabeled_pool(small_manifest):
    cfg = TrainConfig(mode="fully", seed=1, **FAST)
    res = train(cfg, small_manifest)
    assert "balancing" not in res.record.notes


def test_semi_balanced_pool_size_and_quota_guard(small_manifest):
    cfg = TrainConfig(mode="semi", seed=2, unlabeled_quota=80, **FAST)
    res = train(cfg, small_manifest)
    assert res.record.notes["balanced_pool_size"] == 80
    with pytest.raises(ValueError, match="exceeds pool"):
        train(cfg.replace(unlabeled_quota=10_000), small_manifest)


def test_divergence_aborts_with_last_good_state(small_manifest, monkeypatch):
    import emomatch.training.loop as loop_mod
    from emomatch.autodiff import NumericError

    real = loop_mod.supervised_loss
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] > 4:
            raise NumericError("injected overflow")
        return real(*args, **kwargs)

    monkeypatch.setattr(loop_mod, "supervised_loss", flaky)
    cfg = TrainConfig(mode="fully", seed=4, batch_size=40, max_epochs=4, patience=4)
    res = train(cfg, small_manifest)
    assert res.record.aborted
    assert res.record.notes["abort_reason"] == "injected overflow"
    assert len(res.record.epochs) == 1  # first epoch survived
    assert res.record.test is not None  # evaluated from the last-good checkpoint


def test_kfold_trains_k_models_and_selects_argmax(small_manifest):
    cfg = TrainConfig(mode="fully", weights=LossWeights(0.0, 0.0, 0.0), seed=6, **FAST)
    result = kfold_select(cfg, small_manifest, k=5)
    assert len(result.fold_results) == 5
    uas = [r.record.best_val_ua for r in result.fold_results]
    assert result.selected_fold == int(np.argmax(uas))
    assert result.test is not None


def test_holdout_fold_validation_uses_that_fold(small_manifest):
    cfg = TrainConfig(mode="fully", weights=LossWeights(0.0, 0.0, 0.0), seed=7,
                      holdout_fold=2, **FAST)
    res = train(cfg, small_manifest)
    # validation set size equals the held-out fold size
    fold_n = len(small_manifest.fold_records(2))
    assert fold_n > 0
    assert res.record.test.confusion.sum() == len(small_manifest.test_records())


def test_ablation_grid_structure(small_manifest):
    tiny = TrainConfig(mode="fully", seed=8, batch_size=40, max_epochs=2, patience=2)
    cells = ablate(small_manifest, tiny, seeds=[8])
    assert len(cells) == 6
    assert [(c.setting, c.reconstruction, c.mmd) for c in cells] == list(ABLATION_GRID)
    vanilla_cfg = cells[0].runs[0].record.config
    assert vanilla_cfg["weights"] == {"alpha": 0.0, "beta": 0.0, "omega": 0.0}
    semi_cells = [c for c in cells if c.setting == "semi"]
    assert all(c.mmd for c in semi_cells)


def test_sweep_quota_zero_equals_fully_run(small_manifest):
    tiny = TrainConfig(mode="fully", seed=9, batch_size=40, max_epochs=3, patience=3)
    points = sweep_unlabeled(small_manifest, tiny, quotas=[0, 80], seeds=[9])
    fully = train(tiny.replace(seed=9), small_manifest).record
    quota0 = points[0].runs[0].record
    for ef, e0 in zip(fully.epochs, quota0.epochs):
        assert ef.losses["l_s"] == e0.losses["l_s"]
    np.testing.assert_array_equal(fully.test.confusion, quota0.test.confusion)


def test_sweep_rejects_bad_quotas(small_manifest):
    tiny = TrainConfig(mode="fully", seed=0, **FAST)
    with pytest.raises(ConfigError, match="ascending"):
        sweep_unlabeled(small_manifest, tiny, quotas=[100, 50])
    with pytest.raises(ConfigError, match="pool"):
        sweep_unlabeled(small_manifest, tiny, quotas=[10_000])


def test_evaluate_records_requires_labels(small_manifest):
    from emomatch.dae import DAEConfig
    from emomatch.objective import ModelBundle

    bundle = ModelBundle(("acoustic", "visual", "lexical"), DAEConfig.toy(), 4, np.random.default_rng(0))
    pipe = FeaturePipeline(small_manifest)
    with pytest.raises(ValueError, match="labeled"):
        evaluate_records(bundle, pipe, small_manifest.unlabeled_records()[:4])
