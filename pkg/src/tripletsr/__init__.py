"""Identity-preserving face super-resolution with a triplet embedding loss,
plus the biometric evaluation harness (genuine/impostor separation, ROC).
"""

from .datasets import (
    DatasetManifest,
    ManifestEntry,
    PreparedDataset,
    TripletRecord,
    build_resolution_sets,
    sample_triplets,
    synthetic_degrade,
)
from .embeddings import EmbeddingExtractor, distance, load_extractor, normalize
from .evaluation import (
    EvalReport,
    ScorePair,
    ScoreSet,
    auc,
    build_score_set,
    comparison_report,
    dprime,
    histogram,
    roc,
)
from .generator import (
    Generator,
    GeneratorConfig,
    init_generator,
    load_checkpoint,
    save_checkpoint,
    subpixel_upsample,
    super_resolve,
    transposed_upsample,
)
from .losses import (
    LossConfig,
    combined_loss,
    contrastive_loss,
    mine_triplets_online,
    mse_loss,
    perceptual_loss,
    triplet_loss,
)
from .training import (
    DivergencePolicy,
    ExperimentConfig,
    TrainLog,
    ablation_matrix,
    detect_divergence,
    run_experiment,
    train_step,
)
from .upsamplers import ResampleMethod, resize, upsample_chain

__version__ = "0.1.0"

__all__ = [
    "DatasetManifest",
    "ManifestEntry",
    "PreparedDataset",
    "TripletRecord",
    "build_resolution_sets",
    "sample_triplets",
    "synthetic_degrade",
    "EmbeddingExtractor",
    "distance",
    "load_extractor",
    "normalize",
    "EvalReport",
    "ScorePair",
    "ScoreSet",
    "auc",
    "build_score_set",
    "comparison_report",
    "dprime",
    "histogram",
    "roc",
    "Generator",
    "GeneratorConfig",
    "init_generator",
    "load_checkpoint",
    "save_checkpoint",
    "subpixel_upsample",
    "super_resolve",
    "transposed_upsample",
    "LossConfig",
    "combined_loss",
    "contrastive_loss",
    "mine_triplets_online",
    "mse_loss",
    "perceptual_loss",
    "triplet_loss",
    "DivergencePolicy",
    "ExperimentConfig",
    "TrainLog",
    "ablation_matrix",
    "detect_divergence",
    "run_experiment",
    "train_step",
    "ResampleMethod",
    "resize",
    "upsample_chain",
]
