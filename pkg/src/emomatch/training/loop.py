"""Training loops: fully-supervised and semi-supervised, with early stopping.

Each run owns independent RNG substreams (model init, labeled batching,
unlabeled batching, derangements, the vanilla pre-training stage, and pool
balancing), so a semi run and a fully run under the same seed share their
initialisation and labeled batch order bit-for-bit. Semi mode first trains a
vanilla classifier, pseudo-labels the unlabeled pool, balances it to the
quota, then optimises the combined objective.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Adam, NumericError
from ..data import FeaturePipeline, balance_unlabeled
from ..data.manifest import DatasetManifest, SampleRecord
from ..mmd import random_derangement
from ..objective import LossBreakdown, LossWeights, ModelBundle, semi_loss, supervised_loss
from .config import TrainConfig
from .metrics import MetricsReport, evaluate_predictions

log = logging.getLogger(__name__)

_STREAMS = ("init", "labeled", "unlabeled", "derange_labeled", "derange_unlabeled", "vanilla", "balance")


def _substreams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(_STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(_STREAMS, children)}


@dataclass
class EpochRecord:
    epoch: int
    losses: dict[str, float]
    val_wap: float
    val_ua: float
    val_weighted_f1: float


@dataclass
class RunRecord:
    run_id: str
    seed: int
    config: dict
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    test: MetricsReport | None = None
    wall_clock_s: float = 0.0
    aborted: bool = False
    notes: dict = field(default_factory=dict)

    @property
    def best_val_ua(self) -> float:
        return self.epochs[self.best_epoch].val_ua if self.epochs else 0.0

    def as_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "seed": self.seed,
            "config": self.config,
            "epochs": [vars(e) for e in self.epochs],
            "best_epoch": self.best_epoch,
            "test": self.test.as_dict() if self.test is not None else None,
            "wall_clock_s": self.wall_clock_s,
            "aborted": self.aborted,
            "notes": self.notes,
        }


@dataclass
class RunResult:
    record: RunRecord
    bundle: ModelBundle
    best_state: dict[str, np.ndarray]
    final_state: dict[str, np.ndarray] = field(default_factory=dict)


class _Cycler:
    """Endless shuffled sweep over a record pool, reshuffling per pass."""

    def __init__(self, records: list[SampleRecord], rng: np.random.Generator):
        self.records = list(records)
        self.rng = rng
        self.order: list[int] = []

    def draw(self, n: int) -> list[SampleRecord]:
        out = []
        while len(out) < n:
            if not self.order:
                self.order = list(self.rng.permutation(len(self.records)))
            out.append(self.records[self.order.pop()])
        return out


def predict_records(bundle: ModelBundle, pipe: FeaturePipeline, records: list[SampleRecord],
                    chunk: int = 256) -> np.ndarray:
    preds = []
    for start in range(0, len(records), chunk):
        batch = pipe.batch(records[start : start + chunk], with_labels=False)
        preds.append(bundle.predict(batch))
    return np.concatenate(preds)


def evaluate_records(bundle: ModelBundle, pipe: FeaturePipeline, records: list[SampleRecord]) -> MetricsReport:
    if not records:
        raise ValueError("cannot evaluate on an empty record list")
    labels = [rec.label for rec in records]
    if any(lbl is None for lbl in labels):
        raise ValueError("evaluation requires labeled samples")
    preds = predict_records(bundle, pipe, records)
    return evaluate_predictions(np.asarray(labels), preds, bundle.n_classes)


def _mean_losses(per_step: list[LossBreakdown]) -> dict[str, float]:
    if not per_step:
        return {}
    keys = per_step[0].as_dict().keys()
    return {k: float(np.mean([bd.as_dict()[k] for bd in per_step])) for k in keys}


def _derangements_for(bundle: ModelBundle, rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
    return {m: random_derangement(rng, n) for m in bundle.modalities if m != "acoustic"}


def _prepare_unlabeled_pool(config: TrainConfig, manifest: DatasetManifest, pipe: FeaturePipeline,
                            streams, record: RunRecord) -> list[SampleRecord]:
    pool = manifest.unlabeled_records()
    quota = config.unlabeled_quota if config.unlabeled_quota is not None else len(pool)
    if quota > len(pool):
        raise ValueError(f"unlabeled quota {quota} exceeds pool size {len(pool)}")
    if quota == 0:
        return []
    if not config.balance:
        picks = streams["balance"].choice(len(pool), size=quota, replace=False)
        record.notes["balancing"] = "uniform"
        return [pool[i] for i in picks]

    # Stage 1: vanilla classifier (classification loss only) for pseudo-labels.
    vanilla_seed = int(streams["vanilla"].integers(0, 2**63 - 1))
    vanilla_cfg = config.replace(
        mode="fully", unlabeled_quota=0, weights=LossWeights(0.0, 0.0, 0.0), seed=vanilla_seed
    )
    log.info("semi mode: training vanilla pseudo-labeling classifier")
    vanilla = train(vanilla_cfg, manifest)
    vanilla.bundle.load_state_dict(vanilla.best_state)

    cap, rem = divmod(quota, manifest.config["n_classes"])
    if cap < 1:
        raise ValueError(f"quota {quota} too small to balance over {manifest.config['n_classes']} classes")
    if rem:
        log.warning("quota %d is not divisible by %d classes; using %d per class",
                    quota, manifest.config["n_classes"], cap)
    balanced = balance_unlabeled(
        pool,
        lambda recs: predict_records(vanilla.bundle, pipe, list(recs)),
        cap=cap,
        n_classes=manifest.config["n_classes"],
        rng=streams["balance"],
    )
    record.notes["balancing"] = "pseudo-label"
    record.notes["vanilla_val_ua"] = vanilla.record.best_val_ua
    record.notes["balanced_pool_size"] = len(balanced)
    return balanced


def train(config: TrainConfig, manifest: DatasetManifest, run_id: str = "run") -> RunResult:
    """Run one training job and return its record plus the best model state."""
    config.validate(manifest)
    t0 = time.time()
    streams = _substreams(config.seed)
    pipe = FeaturePipeline(manifest, modalities=config.modalities)
    n_classes = manifest.config["n_classes"]

    train_records = manifest.train_records(exclude_fold=config.holdout_fold)
    if config.holdout_fold is not None:
        val_records = manifest.fold_records(config.holdout_fold)
    else:
        val_records = manifest.val_records()
    test_records = manifest.test_records()

    record = RunRecord(run_id=run_id, seed=config.seed, config=config.to_dict())
    bundle = ModelBundle(config.modalities, config.dae, n_classes, streams["init"])

    unlabeled_pool: list[SampleRecord] = []
    if config.mode == "semi":
        unlabeled_pool = _prepare_unlabeled_pool(config, manifest, pipe, streams, record)

    opt = Adam(bundle.parameters(), lr=config.lr)
    labeled_cycler = _Cycler(train_records, streams["labeled"])
    unlabeled_cycler = _Cycler(unlabeled_pool, streams["unlabeled"]) if unlabeled_pool else None
    steps_per_epoch = max(1, len(train_records) // config.batch_size)

    best_ua = -1.0
    best_state: dict[str, np.ndarray] = {p.name: p.data.copy() for p in bundle.parameters()}
    since_best = 0

    for epoch in range(config.max_epochs):
        step_losses: list[LossBreakdown] = []
        try:
            for _ in range(steps_per_epoch):
                lb = pipe.batch(labeled_cycler.draw(config.batch_size))
                ders_l = (
                    _derangements_for(bundle, streams["derange_labeled"], len(lb))
                    if config.weights.beta != 0.0 else None
                )
                opt.zero_grad()
                if unlabeled_cycler is not None:
                    ub = pipe.batch(unlabeled_cycler.draw(config.batch_size), with_labels=False)
                    ders_u = (
                        _derangements_for(bundle, streams["derange_unlabeled"], len(ub))
                        if config.weights.beta != 0.0 else None
                    )
                    bd = semi_loss(bundle, lb, ub, config.weights, config.matching, ders_l, ders_u)
                else:
                    bd = supervised_loss(bundle, lb, config.weights, config.matching, ders_l)
                bd.loss.backward()
                opt.step()
                step_losses.append(bd)
        except NumericError as exc:
            log.error("run %s diverged at epoch %d (%s); keeping last-good checkpoint", run_id, epoch, exc)
            record.aborted = True
            record.notes["abort_reason"] = str(exc)
            break

        val = evaluate_records(bundle, pipe, val_records)
        record.epochs.append(EpochRecord(
            epoch=epoch,
            losses=_mean_losses(step_losses),
            val_wap=val.wap,
            val_ua=val.ua,
            val_weighted_f1=val.weighted_f1,
        ))
        if val.ua > best_ua:
            best_ua = val.ua
            record.best_epoch = epoch
            best_state = {p.name: p.data.copy() for p in bundle.parameters()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                log.info("run %s: early stop at epoch %d (best %d)", run_id, epoch, record.best_epoch)
                break

    final_state = {p.name: p.data.copy() for p in bundle.parameters()}
    bundle.load_state_dict(best_state)
    record.test = evaluate_records(bundle, pipe, test_records)
    record.wall_clock_s = time.time() - t0
    return RunResult(record=record, bundle=bundle, best_state=best_state, final_state=final_state)
