"""k-fold selection, the component-ablation grid, and the unlabeled-quantity sweep."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..data.manifest import DatasetManifest
from ..objective import LossWeights
from .config import ConfigError, TrainConfig
from .loop import RunResult, train
from .metrics import MetricsReport

log = logging.getLogger(__name__)


@dataclass
class KFoldResult:
    fold_results: list[RunResult]
    selected_fold: int
    test: MetricsReport

    def as_dict(self) -> dict:
        return {
            "folds": [r.record.as_dict() for r in self.fold_results],
            "selected_fold": self.selected_fold,
            "test": self.test.as_dict(),
        }


def kfold_select(config: TrainConfig, manifest: DatasetManifest, k: int | None = None) -> KFoldResult:
    """Train one model per fold, pick the best validation UA, report its test metrics."""
    k = k if k is not None else config.k_folds
    if manifest.config["n_folds"] < k:
        raise ConfigError(f"manifest has {manifest.config['n_folds']} folds, need {k}")
    results = []
    for fold in range(k):
        res = train(config.replace(holdout_fold=fold), manifest, run_id=f"fold{fold}")
        log.info("fold %d: best val UA %.4f", fold, res.record.best_val_ua)
        results.append(res)
    val_uas = [r.record.best_val_ua for r in results]
    selected = int(np.argmax(val_uas))
    return KFoldResult(fold_results=results, selected_fold=selected, test=results[selected].record.test)


ABLATION_GRID = (
    # (setting, reconstruction on, distribution matching on)
    ("fully", False, False),
    ("fully", False, True),
    ("fully", True, False),
    ("fully", True, True),
    ("semi", False, True),
    ("semi", True, True),
)


@dataclass
class AblationCell:
    setting: str
    reconstruction: bool
    mmd: bool
    runs: list[RunResult] = field(default_factory=list)

    @property
    def mean_wap(self) -> float:
        return float(np.mean([r.record.test.wap for r in self.runs]))

    @property
    def mean_ua(self) -> float:
        return float(np.mean([r.record.test.ua for r in self.runs]))

    @property
    def mean_weighted_f1(self) -> float:
        return float(np.mean([r.record.test.weighted_f1 for r in self.runs]))


def _cell_config(base: TrainConfig, setting: str, rec: bool, mmd: bool) -> TrainConfig:
    w = base.weights
    weights = LossWeights(
        alpha=w.alpha if rec else 0.0,
        beta=w.beta if mmd else 0.0,
        omega=w.omega if setting == "semi" else 0.0,
    )
    return base.replace(mode=setting, weights=weights,
                        unlabeled_quota=base.unlabeled_quota if setting == "semi" else 0)


def ablate(manifest: DatasetManifest, base_config: TrainConfig, seeds=None) -> list[AblationCell]:
    """The six-cell component-contribution grid, one run per seed per cell."""
    seeds = list(seeds) if seeds is not None else [base_config.seed]
    cells = []
    for setting, rec, mmd in ABLATION_GRID:
        cell = AblationCell(setting=setting, reconstruction=rec, mmd=mmd)
        for seed in seeds:
            cfg = _cell_config(base_config, setting, rec, mmd).replace(seed=seed)
            run_id = f"{setting}-rec{int(rec)}-mmd{int(mmd)}-seed{seed}"
            cell.runs.append(train(cfg, manifest, run_id=run_id))
            log.info("ablation %s: test UA %.4f", run_id, cell.runs[-1].record.test.ua)
        cells.append(cell)
    return cells


@dataclass
class SweepPoint:
    quota: int
    runs: list[RunResult] = field(default_factory=list)

    @property
    def mean_wap(self) -> float:
        return float(np.mean([r.record.test.wap for r in self.runs]))

    @property
    def mean_ua(self) -> float:
        return float(np.mean([r.record.test.ua for r in self.runs]))


def sweep_unlabeled(manifest: DatasetManifest, base_config: TrainConfig, quotas, seeds=None) -> list[SweepPoint]:
    """One semi run per quota per seed, identical seeds across quotas."""
    quotas = [int(q) for q in quotas]
    if sorted(quotas) != quotas:
        raise ConfigError(f"quotas must be ascending, got {quotas}")
    pool = len(manifest.unlabeled_records())
    if quotas and quotas[-1] > pool:
        raise ConfigError(f"max quota {quotas[-1]} exceeds unlabeled pool size {pool}")
    seeds = list(seeds) if seeds is not None else [base_config.seed]
    points = []
    for quota in quotas:
        point = SweepPoint(quota=quota)
        for seed in seeds:
            cfg = base_config.replace(mode="semi", unlabeled_quota=quota, seed=seed)
            run_id = f"quota{quota}-seed{seed}"
            point.runs.append(train(cfg, manifest, run_id=run_id))
            log.info("sweep %s: test UA %.4f", run_id, point.runs[-1].record.test.ua)
        points.append(point)
    return points
