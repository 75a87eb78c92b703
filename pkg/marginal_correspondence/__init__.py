"""
Marginal Contrastive Correspondence
===================================

Cross-domain correspondence between a condition image and an exemplar,
learned with a marginal contrastive loss and optional self-correlation map
features, trained on synthetic pairs with known ground-truth matching.

Usage:
    from marginal_correspondence import ExperimentConfig, train, evaluate

    # Option 1: Train and evaluate from Python
    config = ExperimentConfig.from_env(steps=500, margin=0.4)
    result = train(config, "runs/demo")
    row = evaluate(result.checkpoint_path, config)

    # Option 2: Command line
    python -m marginal_correspondence train --margin 0.4 --scm on --out runs/demo
    python -m marginal_correspondence sweep-margin --margins 0,0.1,0.2,0.3,0.4
"""

from .config import ContrastiveConfig, ExperimentConfig, LossWeights
from .contrastive import LossReport, contrastive_loss, info_nce, marginal_contrastive
from .core import CorrespondenceTrainer, TrainingResult, evaluate, train
from .correspondence import (
    CorrespondenceMatrix,
    build_correspondence,
    correspondence_objective,
    cycle_loss,
    feature_consistency_loss,
    pseudo_pair_loss,
    warp,
)
from .data import SyntheticPair, generate_pair
from .errors import (
    CheckpointFormatError,
    ConfigError,
    CorrespondenceError,
    DimensionError,
    DivergenceError,
    ImageFormatError,
    UsageError,
)
from .experiments import run_ablation, sweep_margin
from .feature_core import FeatureGrid, Tape, cosine_similarity_matrix, l2_normalize_rows
from .metrics import psnr, ssim, top1_accuracy
from .records import MetricsRow
from .scm import augment_features, compute_scm, project_scm

__version__ = "1.0.0"
__all__ = [
    "ExperimentConfig",
    "ContrastiveConfig",
    "LossWeights",
    "CorrespondenceTrainer",
    "TrainingResult",
    "train",
    "evaluate",
    "sweep_margin",
    "run_ablation",
    "FeatureGrid",
    "Tape",
    "l2_normalize_rows",
    "cosine_similarity_matrix",
    "LossReport",
    "info_nce",
    "marginal_contrastive",
    "contrastive_loss",
    "compute_scm",
    "project_scm",
    "augment_features",
    "CorrespondenceMatrix",
    "build_correspondence",
    "warp",
    "cycle_loss",
    "feature_consistency_loss",
    "pseudo_pair_loss",
    "correspondence_objective",
    "SyntheticPair",
    "generate_pair",
    "MetricsRow",
    "psnr",
    "ssim",
    "top1_accuracy",
    "CorrespondenceError",
    "DimensionError",
    "ConfigError",
    "UsageError",
    "DivergenceError",
    "CheckpointFormatError",
    "ImageFormatError",
]
