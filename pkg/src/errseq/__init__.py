"""Detecting successive robot errors from multimodal human reactions.

Pipeline pieces: corpus loading and frame labeling, synthetic corpus
generation, windowing with three feature representations, four data
splitting schemes, from-scratch LSTM/GRU fusion models, per-participant
cross-validation, and report emission.
"""

from .corpus import (
    MODALITIES,
    Corpus,
    CorpusError,
    Session,
    label_frames,
    load_corpus,
    save_corpus,
    validate_corpus,
    validate_session,
)
from .fusion import (
    ModelConfig,
    FusionModel,
    RecurrentFusionClassifier,
    build_model,
    load_checkpoint,
    predict,
    predict_proba,
    save_checkpoint,
    train_model,
)
from .harness import (
    ConfigResult,
    FoldResult,
    GridReport,
    HarnessError,
    SkippedFold,
    emit_report,
    expand_grid,
    report_from_folds,
    run_config,
    run_fold,
    run_grid,
)
from .metrics import MetricSet, aggregate, confusion, metric_set
from .preprocess import (
    FrameNormalizer,
    PrincipalComponents,
    Window,
    make_windows,
    stack_windows,
)
from .rng import SplitMix64, derive_seed
from .splits import NUM_CLASSES, SCHEMES, SplitError, SplitPlan, relabel, split
from .synth import SynthConfig, generate_corpus

__version__ = "0.1.0"

__all__ = [
    "MODALITIES",
    "Corpus",
    "CorpusError",
    "Session",
    "label_frames",
    "load_corpus",
    "save_corpus",
    "validate_corpus",
    "validate_session",
    "ModelConfig",
    "FusionModel",
    "RecurrentFusionClassifier",
    "build_model",
    "load_checkpoint",
    "predict",
    "predict_proba",
    "save_checkpoint",
    "train_model",
    "ConfigResult",
    "FoldResult",
    "GridReport",
    "HarnessError",
    "SkippedFold",
    "emit_report",
    "expand_grid",
    "report_from_folds",
    "run_config",
    "run_fold",
    "run_grid",
    "MetricSet",
    "aggregate",
    "confusion",
    "metric_set",
    "FrameNormalizer",
    "PrincipalComponents",
    "Window",
    "make_windows",
    "stack_windows",
    "SplitMix64",
    "derive_seed",
    "NUM_CLASSES",
    "SCHEMES",
    "SplitError",
    "SplitPlan",
    "relabel",
    "split",
    "SynthConfig",
    "generate_corpus",
    "__version__",
]
