"""Run configuration: the TrainConfig dataclass and the JSON config file.

Config files are JSON documents with optional sections ``synth``, ``train``,
``weights``, ``matching``, ``dae``, ``paths``. Every field is optional and
falls back to the documented default; unknown keys are rejected. The fully
resolved document is echoed into each run directory so a run can be
reproduced from its artifacts alone.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..dae import DAEConfig
from ..data import SynthConfig
from ..objective import MODALITY_ORDER, LossWeights, MatchingConfig


class ConfigError(ValueError):
    pass


_MODALITY_ALIASES = {"a": "acoustic", "v": "visual", "l": "lexical"}


def canonical_modalities(raw) -> tuple[str, ...]:
    out = []
    for item in raw:
        name = _MODALITY_ALIASES.get(str(item).lower(), str(item).lower())
        if name not in MODALITY_ORDER:
            raise ConfigError(f"unknown modality '{item}'")
        out.append(name)
    if len(set(out)) != len(out):
        raise ConfigError(f"duplicate modalities in {raw}")
    return tuple(m for m in MODALITY_ORDER if m in out)


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "fully"  # fully | semi
    modalities: tuple[str, ...] = MODALITY_ORDER
    batch_size: int = 128
    lr: float = 1e-3
    max_epochs: int = 40
    patience: int = 8
    seed: int = 0
    unlabeled_quota: int | None = None  # semi mode: None = whole pool
    balance: bool = True
    holdout_fold: int | None = None
    k_folds: int = 5
    weights: LossWeights = field(default_factory=LossWeights)
    matching: MatchingConfig = field(default_factory=MatchingConfig)
    dae: DAEConfig = field(default_factory=DAEConfig.toy)

    def __post_init__(self):
        if self.mode not in ("fully", "semi"):
            raise ConfigError(f"mode must be 'fully' or 'semi', got '{self.mode}'")
        object.__setattr__(self, "modalities", canonical_modalities(self.modalities))
        if self.mode == "semi" and len(self.modalities) < 2:
            raise ConfigError("semi mode needs at least two modalities")
        if self.weights.beta != 0.0 and ("acoustic" not in self.modalities or len(self.modalities) < 2):
            raise ConfigError("distribution matching (beta > 0) needs acoustic plus another modality")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("max_epochs and patience must be positive")

    def replace(self, **kwargs) -> "TrainConfig":
        return dataclasses.replace(self, **kwargs)

    def validate(self, manifest) -> None:
        if self.mode == "semi" and not manifest.unlabeled_records():
            raise ConfigError("semi mode requires an unlabeled pool in the manifest")
        if self.holdout_fold is not None and not (0 <= self.holdout_fold < manifest.config["n_folds"]):
            raise ConfigError(f"holdout_fold {self.holdout_fold} outside 0..{manifest.config['n_folds'] - 1}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["modalities"] = list(self.modalities)
        return d


@dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    manifest_path: str | None = None
    out_dir: str = "runs"

    def to_dict(self) -> dict:
        return {
            "synth": self.synth.to_dict(),
            "train": {
                k: v for k, v in self.train.to_dict().items() if k not in ("weights", "matching", "dae")
            },
            "weights": dataclasses.asdict(self.train.weights),
            "matching": dataclasses.asdict(self.train.matching),
            "dae": self.train.dae.to_dict(),
            "paths": {"manifest": self.manifest_path, "out": self.out_dir},
        }


def _check_keys(doc: dict, allowed, where: str) -> None:
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}; allowed: {sorted(allowed)}")


def _build_dataclass(cls, doc: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    _check_keys(doc, names, where)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in doc:
            continue
        value = doc[f.name]
        if isinstance(value, list):
            value = tuple(value)
        kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value in {where}: {exc}") from exc


def _build_dae(doc: dict) -> DAEConfig:
    doc = dict(doc)
    preset = doc.pop("preset", "toy")
    if preset == "toy":
        base = DAEConfig.toy()
    elif preset == "paper":
        base = DAEConfig.paper()
    else:
        raise ConfigError(f"unknown dae preset '{preset}' (use 'toy' or 'paper')")
    if not doc:
        return base
    merged = base.to_dict()
    _check_keys(doc, merged.keys(), "dae")
    merged.update(doc)
    try:
        return DAEConfig.from_dict(merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value in dae: {exc}") from exc


def parse_run_config(doc: dict) -> RunConfig:
    _check_keys(doc, {"synth", "train", "weights", "matching", "dae", "paths"}, "config root")
    synth = _build_dataclass(SynthConfig, doc.get("synth", {}), "synth")
    weights = _build_dataclass(LossWeights, doc.get("weights", {}), "weights")
    matching = _build_dataclass(MatchingConfig, doc.get("matching", {}), "matching")
    dae = _build_dae(doc.get("dae", {}))

    train_doc = dict(doc.get("train", {}))
    names = {f.name for f in dataclasses.fields(TrainConfig)} - {"weights", "matching", "dae"}
    _check_keys(train_doc, names, "train")
    if "modalities" in train_doc:
        train_doc["modalities"] = tuple(train_doc["modalities"])
    try:
        train = TrainConfig(weights=weights, matching=matching, dae=dae, **train_doc)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value in train: {exc}") from exc

    paths = doc.get("paths", {})
    _check_keys(paths, {"manifest", "out"}, "paths")
    return RunConfig(
        synth=synth,
        train=train,
        manifest_path=paths.get("manifest"),
        out_dir=paths.get("out", "runs"),
    )


def load_run_config(path=None) -> RunConfig:
    """Load a JSON config file; a missing path means all defaults."""
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return parse_run_config(doc)


def config_hash(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]
