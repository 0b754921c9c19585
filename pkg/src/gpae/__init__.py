"""General-purpose audio embeddings from width-scalable CNNs.

Pipeline: WAV -> 128-band log-mel spectrogram -> MobileNetV3-style forward
pass -> feature taps (low/mid/high level) -> scene or timestamp embeddings.
Includes analytic parameter/MAC accounting, a portable binary model format,
and shallow-MLP probing for downstream evaluation.
"""

from .arch import ArchSpec, BlockSpec, build_arch, round_channels
from .complexity import ComplexityReport, complexity_report, count_macs, count_params
from .embedder import (
    SceneEmbedding,
    TimestampEmbeddings,
    scene_embedding,
    timestamp_embeddings,
)
from .errors import (
    ConfigurationError,
    FormatError,
    GpaeError,
    InvalidConfigError,
    InvalidInputError,
    InvalidTaskError,
    ModelIntegrityError,
    NumericFailureError,
    UnsupportedRateError,
)
from .features import (
    DEFAULT_SELECTOR,
    Embedding,
    FeatureSelector,
    embedding_dim,
    extract,
    low_level_features,
)
from .frontend import (
    SAMPLE_RATE,
    AudioClip,
    FrontendConfig,
    MelSpec,
    compute_melspec,
    mel_filterbank,
)
from .modelio import (
    load_embeddings,
    load_model,
    random_init,
    save_embeddings,
    save_model,
)
from .naive import instrumented_mac_oracle
from .network import ActivationTrace, Model, forward, validate_weights
from .probe import (
    MlpConfig,
    ProbeTask,
    ScoreTable,
    compute_map,
    gradient_check,
    normalize_scores,
    train_probe,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationTrace",
    "ArchSpec",
    "AudioClip",
    "BlockSpec",
    "ComplexityReport",
    "ConfigurationError",
    "DEFAULT_SELECTOR",
    "Embedding",
    "FeatureSelector",
    "FormatError",
    "FrontendConfig",
    "GpaeError",
    "InvalidConfigError",
    "InvalidInputError",
    "InvalidTaskError",
    "MelSpec",
    "MlpConfig",
    "Model",
    "ModelIntegrityError",
    "NumericFailureError",
    "ProbeTask",
    "SAMPLE_RATE",
    "SceneEmbedding",
    "ScoreTable",
    "TimestampEmbeddings",
    "UnsupportedRateError",
    "build_arch",
    "complexity_report",
    "compute_map",
    "compute_melspec",
    "count_macs",
    "count_params",
    "embedding_dim",
    "extract",
    "forward",
    "gradient_check",
    "instrumented_mac_oracle",
    "load_embeddings",
    "load_model",
    "low_level_features",
    "mel_filterbank",
    "normalize_scores",
    "random_init",
    "round_channels",
    "save_embeddings",
    "save_model",
    "scene_embedding",
    "timestamp_embeddings",
    "train_probe",
    "validate_weights",
]
