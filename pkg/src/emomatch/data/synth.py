"""Synthetic multi-modal corpus generator.

Every sample is a class prototype plus Gaussian jitter in a small latent
space; each modality observes that latent through its own additional view
noise, then through a fixed seeded nonlinear map (affine + tanh + affine),
with extra nuisance dimensions of pure noise. Sequence modalities repeat the
mapped vector with a fixed per-step modulation pattern plus a sample-level
random walk. The per-modality view noise is what makes multi-modal fusion
and cross-modal consensus worth learning. The unlabeled pool is drawn from
(possibly skewed) class priors; its ground-truth labels go to a separate
sealed file that training code never reads.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.linear_model import LogisticRegression

from .features import append_record, file_sha256
from .manifest import (
    TEST_FOLD,
    UNLABELED_FOLD,
    VAL_FOLD,
    DatasetManifest,
    SampleRecord,
    save_manifest,
)
from .pipeline import crop_width_from_labeled, z_normalize_fit

SEALED_TRUTH_NAME = "unlabeled_truth.json"


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 4
    class_names: tuple[str, ...] = ("happy", "anger", "sadness", "neutral")
    emotion_dim: int = 8
    class_separation: float = 2.4
    noise_scale: float = 1.0
    modality_noise_scale: float = 1.0
    drift_scale: float = 0.15
    acoustic_dim: int = 64
    acoustic_nuisance: int = 32
    visual_dim: int = 16
    visual_nuisance: int = 8
    visual_len: int = 6
    lexical_dim: int = 32
    lexical_nuisance: int = 16
    lexical_len: int = 8
    n_labeled: int = 400
    n_val: int = 200
    n_test: int = 200
    n_unlabeled: int = 2000
    unlabeled_priors: tuple[float, ...] = (0.4, 0.4, 0.1, 0.1)
    unlabeled_duration_scale: float = 1.3
    undetected_drop_rate: float = 0.11
    duration_median: float = 4.5
    duration_log_sigma: float = 0.558
    crop_percentile: float = 80.0
    n_folds: int = 5
    seed: int = 1234

    def __post_init__(self):
        if len(self.class_names) != self.n_classes:
            raise ValueError("class_names must match n_classes")
        if len(self.unlabeled_priors) != self.n_classes:
            raise ValueError("unlabeled_priors must match n_classes")
        if abs(sum(self.unlabeled_priors) - 1.0) > 1e-9:
            raise ValueError("unlabeled_priors must sum to 1")
        for name in ("n_labeled", "n_val", "n_test"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        for key in ("class_names", "unlabeled_priors"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _simplex_prototypes(rng: np.random.Generator, k: int, dim: int, separation: float) -> np.ndarray:
    """Class prototypes at the vertices of a regular simplex (all pairs
    equidistant at ``separation * sqrt(2)``), randomly rotated; keeps the
    class geometry identical across generator seeds."""
    if dim < k - 1:
        raise ValueError(f"emotion_dim {dim} too small for a {k}-class simplex")
    verts = np.eye(k) - 1.0 / k
    verts /= np.linalg.norm(verts[0])  # unit radius, pairwise distance sqrt(2)
    embedded = np.zeros((k, dim))
    embedded[:, :k] = verts
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    return (embedded @ q.T) * separation


class _ModalityMap:
    """Fixed nonlinear map from the emotion latent to one modality's signal dims."""

    def __init__(self, rng: np.random.Generator, emotion_dim: int, signal_dim: int):
        hidden = max(16, signal_dim)
        self.w1 = rng.normal(size=(emotion_dim, hidden)) / math.sqrt(emotion_dim)
        self.b1 = rng.normal(size=hidden) * 0.3
        self.w2 = rng.normal(size=(hidden, signal_dim)) / math.sqrt(hidden)
        self.b2 = rng.normal(size=signal_dim) * 0.1

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return np.tanh(u @ self.w1 + self.b1) @ self.w2 + self.b2


class _Generator:
    def __init__(self, config: SynthConfig):
        self.cfg = config
        self.rng = np.random.default_rng(np.random.SeedSequence(config.seed))
        c = config
        self.prototypes = _simplex_prototypes(self.rng, c.n_classes, c.emotion_dim, c.class_separation)
        self.maps = {
            "acoustic": _ModalityMap(self.rng, c.emotion_dim, c.acoustic_dim - c.acoustic_nuisance),
            "visual": _ModalityMap(self.rng, c.emotion_dim, c.visual_dim - c.visual_nuisance),
            "lexical": _ModalityMap(self.rng, c.emotion_dim, c.lexical_dim - c.lexical_nuisance),
        }
        # per-step modulation tables, long enough for the slowest utterance
        self.t_cap = {"visual": 4 * c.visual_len, "lexical": 4 * c.lexical_len}
        self.seasonal = {
            m: 1.0 + 0.2 * self.rng.normal(size=(self.t_cap[m], self._signal_dim(m)))
            for m in ("visual", "lexical")
        }
        self.steps_per_second = {
            "visual": c.visual_len / c.duration_median,
            "lexical": c.lexical_len / c.duration_median,
        }

    def _signal_dim(self, modality: str) -> int:
        c = self.cfg
        return {
            "acoustic": c.acoustic_dim - c.acoustic_nuisance,
            "visual": c.visual_dim - c.visual_nuisance,
            "lexical": c.lexical_dim - c.lexical_nuisance,
        }[modality]

    def _nuisance_dim(self, modality: str) -> int:
        c = self.cfg
        return {"acoustic": c.acoustic_nuisance, "visual": c.visual_nuisance, "lexical": c.lexical_nuisance}[modality]

    def _duration(self, scale: float = 1.0) -> float:
        c = self.cfg
        if c.noise_scale == 0.0:
            return c.duration_median * scale
        z = self.rng.normal()
        return float(c.duration_median * scale * math.exp(c.duration_log_sigma * z))

    def _sequence(self, modality: str, base: np.ndarray, duration: float) -> np.ndarray:
        c = self.cfg
        sps = self.steps_per_second[modality]
        t_raw = int(np.clip(round(duration * sps), 1, self.t_cap[modality]))
        sig_dim = self._signal_dim(modality)
        signal = base[None, :] * self.seasonal[modality][:t_raw]
        if c.noise_scale > 0.0:
            walk = np.cumsum(self.rng.normal(size=(t_raw, sig_dim)) * c.drift_scale * c.noise_scale, axis=0)
            signal = signal + walk
        nuisance = self._noise((t_raw, self._nuisance_dim(modality)))
        return np.concatenate([signal, nuisance], axis=1)

    def _noise(self, shape) -> np.ndarray:
        if self.cfg.noise_scale == 0.0:
            return np.zeros(shape)
        return self.rng.normal(size=shape) * self.cfg.noise_scale

    def make_sample(self, label: int, duration_scale: float = 1.0) -> tuple[dict[str, np.ndarray], float]:
        c = self.cfg
        u = self.prototypes[label] + self._noise(c.emotion_dim)
        duration = self._duration(duration_scale)
        # each modality sees the shared emotion latent through its own view noise
        views = {m: u + self._noise(c.emotion_dim) * c.modality_noise_scale for m in self.maps}
        acoustic = np.concatenate([self.maps["acoustic"](views["acoustic"]), self._noise(c.acoustic_nuisance)])
        feats = {
            "acoustic": acoustic,
            "visual": self._sequence("visual", self.maps["visual"](views["visual"]), duration),
            "lexical": self._sequence("lexical", self.maps["lexical"](views["lexical"]), duration),
        }
        return feats, duration


def _balanced_labels(n: int, k: int) -> list[int]:
    return [i % k for i in range(n)]


def generate(config: SynthConfig, out_dir) -> tuple[DatasetManifest, dict]:
    """Write the dataset under ``out_dir`` and return (manifest, generation report)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gen = _Generator(config)
    rng = gen.rng
    c = config

    plan: list[tuple[str, int | None, int, float]] = []  # (id, label, fold, duration_scale)
    fold_order = rng.permutation(c.n_labeled)
    for i, label in enumerate(_balanced_labels(c.n_labeled, c.n_classes)):
        plan.append((f"train-{i:05d}", label, int(fold_order[i]) % c.n_folds, 1.0))
    for i, label in enumerate(_balanced_labels(c.n_val, c.n_classes)):
        plan.append((f"val-{i:05d}", label, VAL_FOLD, 1.0))
    for i, label in enumerate(_balanced_labels(c.n_test, c.n_classes)):
        plan.append((f"test-{i:05d}", label, TEST_FOLD, 1.0))

    # unlabeled pool: skewed priors, some candidates dropped ("face undetected")
    sealed: dict[str, int] = {}
    unlabeled_counts = np.zeros(c.n_classes, dtype=np.int64)
    dropped = 0
    i = 0
    while i < c.n_unlabeled:
        label = int(rng.choice(c.n_classes, p=np.asarray(c.unlabeled_priors)))
        if c.undetected_drop_rate > 0 and rng.random() < c.undetected_drop_rate:
            dropped += 1
            continue
        sid = f"unlab-{i:05d}"
        plan.append((sid, None, UNLABELED_FOLD, c.unlabeled_duration_scale))
        sealed[sid] = label
        unlabeled_counts[label] += 1
        i += 1

    paths = {m: out_dir / f"features_{m}.bin" for m in ("acoustic", "visual", "lexical")}
    handles = {m: open(p, "wb") for m, p in paths.items()}
    records: list[SampleRecord] = []
    train_feats: dict[str, list[np.ndarray]] = {m: [] for m in paths}
    probe_sets: dict[str, list] = {"x_train": [], "y_train": [], "x_test": [], "y_test": []}
    durations_labeled: list[float] = []
    try:
        for sid, label, fold, dur_scale in plan:
            true_label = label if label is not None else sealed[sid]
            feats, duration = gen.make_sample(true_label, dur_scale)
            offsets = {m: append_record(handles[m], feats[m]) for m in paths}
            records.append(SampleRecord(id=sid, label=label, duration=duration, fold=fold, offsets=offsets))
            if 0 <= fold < c.n_folds:
                for m in paths:
                    train_feats[m].append(feats[m])
                probe_sets["x_train"].append(feats["acoustic"])
                probe_sets["y_train"].append(label)
                durations_labeled.append(duration)
            elif fold in (VAL_FOLD, TEST_FOLD):
                durations_labeled.append(duration)
                if fold == TEST_FOLD:
                    probe_sets["x_test"].append(feats["acoustic"])
                    probe_sets["y_test"].append(label)
    finally:
        for fh in handles.values():
            fh.close()

    normalization: dict = {"fitted_on": "labeled-train-folds"}
    for m in paths:
        mean, std = z_normalize_fit(train_feats[m])
        normalization[m] = {"mean": mean.tolist(), "std": std.tolist()}

    crop = crop_width_from_labeled(durations_labeled, c.crop_percentile)
    manifest = DatasetManifest(
        root=out_dir,
        config={
            "n_classes": c.n_classes,
            "class_names": list(c.class_names),
            "acoustic_dim": c.acoustic_dim,
            "visual_dim": c.visual_dim,
            "visual_len": c.visual_len,
            "lexical_dim": c.lexical_dim,
            "lexical_len": c.lexical_len,
            "n_folds": c.n_folds,
            "crop_width": crop,
            "steps_per_second": gen.steps_per_second,
            "synth": c.to_dict(),
        },
        normalization=normalization,
        files={m: {"path": p.name, "sha256": file_sha256(p)} for m, p in paths.items()},
        samples=records,
    )
    save_manifest(manifest)
    (out_dir / SEALED_TRUTH_NAME).write_text(json.dumps(sealed, indent=0, sort_keys=True))

    probe_acc = _linear_probe_accuracy(probe_sets)
    report = {
        "n_labeled": c.n_labeled,
        "n_val": c.n_val,
        "n_test": c.n_test,
        "n_unlabeled": c.n_unlabeled,
        "unlabeled_dropped": dropped,
        "unlabeled_class_counts": unlabeled_counts.tolist(),
        "crop_width": crop,
        "linear_probe_accuracy": probe_acc,
    }
    return manifest, report


def _linear_probe_accuracy(sets: dict[str, list]) -> float:
    """Generation-time oracle: logistic regression on raw acoustic features."""
    x_train = np.asarray(sets["x_train"])
    x_test = np.asarray(sets["x_test"])
    probe = LogisticRegression(max_iter=2000, random_state=0)
    probe.fit(x_train, np.asarray(sets["y_train"]))
    return float(probe.score(x_test, np.asarray(sets["y_test"])))


def read_sealed_truth(dataset_dir) -> dict[str, int]:
    """Ground truth of the unlabeled pool; for post-hoc analysis only, never training."""
    return json.loads((Path(dataset_dir) / SEALED_TRUTH_NAME).read_text())
