"""Dataset manifest and sample access.

The manifest is a JSON document sitting next to the per-modality feature
binaries. Fold conventions: labeled training samples carry folds
``0..n_folds-1``; validation, test, and unlabeled pools use the sentinels
below. Feature values are stored as float32 and widened to float64 on read.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FeatureIOError, file_sha256, read_record

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"

VAL_FOLD = -1
TEST_FOLD = -2
UNLABELED_FOLD = -3

MODALITIES = ("acoustic", "visual", "lexical")


class ManifestError(ValueError):
    pass


@dataclass
class UtteranceSample:
    id: str
    acoustic: np.ndarray | None
    visual: np.ndarray | None
    lexical: np.ndarray | None
    label: int | None
    duration: float
    fold: int

    def feature(self, modality: str) -> np.ndarray | None:
        return getattr(self, modality)


@dataclass
class SampleRecord:
    id: str
    label: int | None
    duration: float
    fold: int
    offsets: dict[str, int]


@dataclass
class DatasetManifest:
    root: Path
    config: dict
    normalization: dict
    files: dict[str, dict]
    samples: list[SampleRecord]
    _handles: dict = field(default_factory=dict, repr=False)
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {rec.id: rec for rec in self.samples}

    # -- split accessors ----------------------------------------------------

    def records(self, *, folds=None, labeled=None) -> list[SampleRecord]:
        out = []
        for rec in self.samples:
            if folds is not None and rec.fold not in folds:
                continue
            if labeled is not None and (rec.label is not None) != labeled:
                continue
            out.append(rec)
        return out

    def train_records(self, exclude_fold: int | None = None) -> list[SampleRecord]:
        folds = set(range(self.config["n_folds"]))
        if exclude_fold is not None:
            folds.discard(exclude_fold)
        return self.records(folds=folds)

    def fold_records(self, fold: int) -> list[SampleRecord]:
        return self.records(folds={fold})

    def val_records(self) -> list[SampleRecord]:
        return self.records(folds={VAL_FOLD})

    def test_records(self) -> list[SampleRecord]:
        return self.records(folds={TEST_FOLD})

    def unlabeled_records(self) -> list[SampleRecord]:
        return self.records(folds={UNLABELED_FOLD})

    @property
    def n_labeled(self) -> int:
        return sum(1 for rec in self.samples if rec.label is not None)

    @property
    def n_unlabeled(self) -> int:
        return sum(1 for rec in self.samples if rec.label is None)

    # -- feature access -----------------------------------------------------

    def _handle(self, modality: str):
        if modality not in self._handles:
            path = self.root / self.files[modality]["path"]
            self._handles[modality] = open(path, "rb")
        return self._handles[modality]

    def read_features(self, rec: SampleRecord, modality: str) -> np.ndarray:
        try:
            arr = read_record(self._handle(modality), rec.offsets[modality])
        except FeatureIOError as exc:
            raise ManifestError(f"sample '{rec.id}' ({modality}): {exc}") from exc
        self._validate_shape(rec.id, modality, arr)
        return arr

    def _validate_shape(self, sample_id: str, modality: str, arr: np.ndarray) -> None:
        dim = self.config[f"{modality}_dim"]
        if modality == "acoustic":
            if arr.ndim != 1 or arr.shape[0] != dim:
                raise ManifestError(
                    f"sample '{sample_id}': acoustic shape {arr.shape} != ({dim},)"
                )
        else:
            if arr.ndim != 2 or arr.shape[1] != dim or arr.shape[0] < 1:
                raise ManifestError(
                    f"sample '{sample_id}': {modality} shape {arr.shape} incompatible with width {dim}"
                )

    def read_sample(self, sample_id: str) -> UtteranceSample:
        if sample_id not in self._index:
            raise ManifestError(f"unknown sample id '{sample_id}'")
        rec = self._index[sample_id]
        feats = {m: self.read_features(rec, m) for m in MODALITIES if m in rec.offsets}
        return UtteranceSample(
            id=rec.id,
            acoustic=feats.get("acoustic"),
            visual=feats.get("visual"),
            lexical=feats.get("lexical"),
            label=rec.label,
            duration=rec.duration,
            fold=rec.fold,
        )

    def close(self) -> None:
        for fh in self._handles.values():
            fh.close()
        self._handles.clear()


def save_manifest(manifest: DatasetManifest) -> Path:
    doc = {
        "version": MANIFEST_VERSION,
        "config": manifest.config,
        "normalization": manifest.normalization,
        "files": manifest.files,
        "samples": [
            {
                "id": rec.id,
                "label": rec.label,
                "duration": rec.duration,
                "fold": rec.fold,
                "offsets": rec.offsets,
            }
            for rec in manifest.samples
        ],
    }
    path = manifest.root / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    root = path if path.is_dir() else path.parent
    doc_path = root / MANIFEST_NAME if path.is_dir() else path
    try:
        doc = json.loads(doc_path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"no manifest at '{doc_path}'")
    if doc.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version {doc.get('version')}")

    samples = [
        SampleRecord(
            id=s["id"],
            label=s["label"],
            duration=s["duration"],
            fold=s["fold"],
            offsets={k: int(v) for k, v in s["offsets"].items()},
        )
        for s in doc["samples"]
    ]
    manifest = DatasetManifest(
        root=root,
        config=doc["config"],
        normalization=doc["normalization"],
        files=doc["files"],
        samples=samples,
    )
    _verify(manifest)
    return manifest


def _verify(manifest: DatasetManifest) -> None:
    for modality, meta in manifest.files.items():
        fpath = manifest.root / meta["path"]
        if not fpath.exists():
            raise ManifestError(f"feature file '{meta['path']}' is missing")
        got = file_sha256(fpath)
        if got != meta["sha256"]:
            raise ManifestError(f"feature file '{meta['path']}' checksum mismatch")
        size = fpath.stat().st_size
        for rec in manifest.samples:
            if modality in rec.offsets and not (0 <= rec.offsets[modality] < size):
                raise ManifestError(f"sample '{rec.id}': offset out of bounds for {modality}")
    for modality, stats in manifest.normalization.items():
        if modality == "fitted_on":
            continue
        std = np.asarray(stats["std"], dtype=np.float64)
        if np.any(std <= 0):
            raise ManifestError(f"normalization std for {modality} contains non-positive entries")
    n_folds = manifest.config["n_folds"]
    labeled_train = [rec for rec in manifest.samples if 0 <= rec.fold < n_folds]
    for rec in labeled_train:
        if rec.label is None:
            raise ManifestError(f"training-fold sample '{rec.id}' has no label")
