"""Cross-corpus supervised contrastive fine-tuning for speech emotion recognition, at desk scale."""

from .analysis import SimilarityProfile, emit_report, layer_similarity_profile, unweighted_accuracy
from .corpus import CorpusManifest, SyntheticSpec, Utterance, assign_folds, generate_synthetic, load_manifest
from .encoder import EncoderStack, ModelConfig, load_checkpoint, save_checkpoint
from .losses import LossConfig, contrast_loss, cosine_margin_loss, total_loss
from .sampler import ContrastBatch, sample_batch
from .trainer import FTBaselineConfig, RunReport, Stage1Config, Stage2Config, cross_validate

__version__ = "0.1.0"

__all__ = [
    "ContrastBatch",
    "CorpusManifest",
    "EncoderStack",
    "FTBaselineConfig",
    "LossConfig",
    "ModelConfig",
    "RunReport",
    "SimilarityProfile",
    "Stage1Config",
    "Stage2Config",
    "SyntheticSpec",
    "Utterance",
    "assign_folds",
    "contrast_loss",
    "cosine_margin_loss",
    "cross_validate",
    "emit_report",
    "generate_synthetic",
    "layer_similarity_profile",
    "load_checkpoint",
    "load_manifest",
    "sample_batch",
    "save_checkpoint",
    "total_loss",
    "unweighted_accuracy",
]
