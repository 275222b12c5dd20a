from .balance import BalanceError, balance_unlabeled
from .features import FeatureIOError, append_record, file_sha256, read_record
from .manifest import (
    MODALITIES,
    TEST_FOLD,
    UNLABELED_FOLD,
    VAL_FOLD,
    DatasetManifest,
    ManifestError,
    SampleRecord,
    UtteranceSample,
    load_manifest,
    save_manifest,
)
from .pipeline import (
    Batch,
    FeaturePipeline,
    PipelineError,
    crop_width_from_labeled,
    pad_or_truncate,
    z_normalize_apply,
    z_normalize_fit,
)
from .synth import SynthConfig, generate, read_sealed_truth

__all__ = [
    "Batch",
    "BalanceError",
    "DatasetManifest",
    "FeatureIOError",
    "FeaturePipeline",
    "MODALITIES",
    "ManifestError",
    "PipelineError",
    "SampleRecord",
    "SynthConfig",
    "TEST_FOLD",
    "UNLABELED_FOLD",
    "UtteranceSample",
    "VAL_FOLD",
    "append_record",
    "balance_unlabeled",
    "crop_width_from_labeled",
    "file_sha256",
    "generate",
    "load_manifest",
    "pad_or_truncate",
    "read_record",
    "read_sealed_truth",
    "save_manifest",
    "z_normalize_apply",
    "z_normalize_fit",
]
