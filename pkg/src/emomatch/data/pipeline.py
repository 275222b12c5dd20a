"""Feature preparation: z-normalization, padding, duration cropping, batches.

Normalization statistics are fitted on labeled training folds only and then
applied everywhere; stored files are never mutated. Sequences are normalized
per feature dimension first, then padded with exact zeros (or truncated) to
the configured length, so padding rows stay zero after normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .manifest import DatasetManifest, SampleRecord, UNLABELED_FOLD

STD_FLOOR = 1e-6


class PipelineError(ValueError):
    pass


def z_normalize_fit(arrays: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean/std (population convention) over sample rows.

    1-D inputs count as single rows; 2-D sequences contribute every time step.
    """
    if not arrays:
        raise PipelineError("cannot fit normalization statistics on an empty sample set")
    rows = np.concatenate([a.reshape(-1, a.shape[-1]) if a.ndim > 1 else a[None, :] for a in arrays], axis=0)
    if rows.shape[0] < 2:
        raise PipelineError("normalization needs at least 2 rows")
    mean = rows.mean(axis=0)
    std = np.maximum(rows.std(axis=0), STD_FLOOR)
    return mean, std


def z_normalize_apply(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - mean) / std


def pad_or_truncate(seq: np.ndarray, target_len: int) -> np.ndarray:
    """Exactly ``target_len`` rows: zero rows appended, overflow cut at the front end."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise PipelineError(f"pad_or_truncate expects a nonempty (t, f) sequence, got shape {seq.shape}")
    t = seq.shape[0]
    if t >= target_len:
        return seq[:target_len].copy()
    out = np.zeros((target_len, seq.shape[1]))
    out[:t] = seq
    return out


def crop_width_from_labeled(durations, percentile: float = 80.0) -> float:
    """The given percentile of labeled durations, linear interpolation between ranks."""
    durations = np.asarray(list(durations), dtype=np.float64)
    if durations.size == 0:
        raise PipelineError("crop width needs at least one labeled duration")
    if not (0.0 < percentile < 100.0):
        raise PipelineError(f"percentile must be in (0, 100), got {percentile}")
    return float(np.percentile(durations, percentile, method="linear"))


@dataclass
class Batch:
    ids: list[str]
    features: dict[str, np.ndarray]
    lengths: dict[str, np.ndarray] = field(default_factory=dict)
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.ids)


class FeaturePipeline:
    """Reads samples from a manifest and assembles normalized, padded batches."""

    def __init__(self, manifest: DatasetManifest, modalities=("acoustic", "visual", "lexical")):
        self.manifest = manifest
        self.modalities = tuple(modalities)
        cfg = manifest.config
        self.target_len = {"visual": cfg["visual_len"], "lexical": cfg["lexical_len"]}
        self.steps_per_second = cfg.get("steps_per_second", {})
        self.crop_width = cfg.get("crop_width")
        self.norm = {
            m: (
                np.asarray(manifest.normalization[m]["mean"], dtype=np.float64),
                np.asarray(manifest.normalization[m]["std"], dtype=np.float64),
            )
            for m in self.modalities
        }

    def _crop_rows(self, modality: str, seq: np.ndarray, rec: SampleRecord) -> np.ndarray:
        # Unlabeled pools are cropped to the labeled-duration percentile width.
        if rec.fold != UNLABELED_FOLD or self.crop_width is None:
            return seq
        sps = self.steps_per_second.get(modality)
        if sps is None:
            return seq
        keep = max(1, int(math.ceil(self.crop_width * sps)))
        return seq[:keep]

    def prepare(self, rec: SampleRecord) -> tuple[dict[str, np.ndarray], dict[str, int]]:
        sample = self.manifest.read_sample(rec.id)
        feats: dict[str, np.ndarray] = {}
        lengths: dict[str, int] = {}
        for m in self.modalities:
            raw = sample.feature(m)
            if raw is None:
                raise PipelineError(f"sample '{rec.id}' is missing modality '{m}'")
            mean, std = self.norm[m]
            if m == "acoustic":
                feats[m] = z_normalize_apply(raw, mean, std)
            else:
                seq = z_normalize_apply(self._crop_rows(m, raw, rec), mean, std)
                target = self.target_len[m]
                lengths[m] = min(seq.shape[0], target)
                feats[m] = pad_or_truncate(seq, target)
        return feats, lengths

    def batch(self, records: list[SampleRecord], with_labels: bool = True) -> Batch:
        if not records:
            raise PipelineError("cannot build an empty batch")
        feats: dict[str, list[np.ndarray]] = {m: [] for m in self.modalities}
        lengths: dict[str, list[int]] = {m: [] for m in self.modalities if m != "acoustic"}
        labels: list[int] = []
        for rec in records:
            f, ln = self.prepare(rec)
            for m in self.modalities:
                feats[m].append(f[m])
            for m in lengths:
                lengths[m].append(ln[m])
            if with_labels:
                labels.append(-1 if rec.label is None else rec.label)
        label_arr = None
        if with_labels and any(lbl >= 0 for lbl in labels):
            if any(lbl < 0 for lbl in labels):
                raise PipelineError("mixed labeled/unlabeled records in one labeled batch")
            label_arr = np.asarray(labels, dtype=np.int64)
        return Batch(
            ids=[rec.id for rec in records],
            features={m: np.stack(v) for m, v in feats.items()},
            lengths={m: np.asarray(v, dtype=np.int64) for m, v in lengths.items()},
            labels=label_arr,
        )
