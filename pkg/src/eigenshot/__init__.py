"""eigenshot: budget-aware annotation in feature space.

Pipeline: contrastive pretraining on a re-balanced source/target mixture,
anchor-constrained clustering to pick representative samples for labeling,
and a looped annotate-then-refit protocol under a fixed label budget, plus an
HTTP labeling service and experiment harness.
"""

from .classifier import ClassifierModel, EvalReport, FitConfig, evaluate, fit, predict
from .cluster import (
    ClusterModel,
    ClusterQuality,
    ackmeans,
    bcubed_precision,
    kmeans,
    l2_normalize,
    load_cluster_model,
    pca_project,
    save_cluster_model,
)
from .contrastive import (
    ContrastiveBatch,
    Encoder,
    MixedStream,
    MixerConfig,
    TrainConfig,
    TrainResult,
    TrainingDivergedError,
    info_nce_grad,
    info_nce_loss,
    make_mixed_stream,
    train_encoder,
)
from .loop import (
    Annotator,
    AnnotatorFailure,
    BudgetLedger,
    EigenLoop,
    LoopState,
    OracleAnnotator,
    StepRecord,
    load_checkpoint,
    save_checkpoint,
    step_seed,
)
from .store import (
    DatasetManifest,
    FeatureSet,
    LabelSet,
    ParseError,
    load_features,
    load_labels,
    load_manifest,
    save_features,
    save_labels,
    save_manifest,
)
from .synth import BlobPreset, PRESETS, PresetData, generate_preset, scaled_preset

__version__ = "0.1.0"

__all__ = [
    "ClassifierModel", "EvalReport", "FitConfig", "evaluate", "fit", "predict",
    "ClusterModel", "ClusterQuality", "ackmeans", "bcubed_precision", "kmeans",
    "l2_normalize", "load_cluster_model", "pca_project", "save_cluster_model",
    "ContrastiveBatch", "Encoder", "MixedStream", "MixerConfig", "TrainConfig",
    "TrainResult", "TrainingDivergedError", "info_nce_grad", "info_nce_loss",
    "make_mixed_stream", "train_encoder",
    "Annotator", "AnnotatorFailure", "BudgetLedger", "EigenLoop", "LoopState",
    "OracleAnnotator", "StepRecord", "load_checkpoint", "save_checkpoint",
    "step_seed",
    "DatasetManifest", "FeatureSet", "LabelSet", "ParseError", "load_features",
    "load_labels", "load_manifest", "save_features", "save_labels",
    "save_manifest",
    "BlobPreset", "PRESETS", "PresetData", "generate_preset", "scaled_preset",
    "__version__",
]
