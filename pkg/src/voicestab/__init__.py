"""Voice-spectrogram stability classification.

Library + CLI covering the full experimental pipeline: mel-spectrogram
extraction, training-only augmentation, subject-independent splitting,
three miniature CNN families trained from scratch, and transfer learning
that pretrains on the augmented form of a dataset and fine-tunes on its
raw form with a frozen backbone.
"""

__version__ = "0.1.0"

from .audio_dsp import (
    AudioClip,
    Label,
    MelSpectrogram,
    SpectrogramParams,
    mel_filterbank,
    mel_spectrogram,
    normalize_clip,
    normalize_db,
    stft_magnitude,
)
from .augment import AugmentOp, AugmentPipeline, apply_pipeline, default_pipeline
from .dataset import (
    BatchStream,
    Manifest,
    ManifestEntry,
    SplitSpec,
    check_leakage,
    load_batchstream,
    split_by_subject,
    synth_corpus,
)
from .metrics import EvalReport, auc, confusion_matrix, evaluate_scores, prf1, roc_curve
from .model_zoo import (
    build_mini_dense,
    build_mini_inception,
    build_mini_vgg,
    build_model,
    describe,
)
from .transfer import TransferConfig, attach_head, fine_tune, load_frozen_backbone

__all__ = [
    "AudioClip",
    "AugmentOp",
    "AugmentPipeline",
    "BatchStream",
    "EvalReport",
    "Label",
    "Manifest",
    "ManifestEntry",
    "MelSpectrogram",
    "SpectrogramParams",
    "SplitSpec",
    "TransferConfig",
    "apply_pipeline",
    "attach_head",
    "auc",
    "build_mini_dense",
    "build_mini_inception",
    "build_mini_vgg",
    "build_model",
    "check_leakage",
    "confusion_matrix",
    "default_pipeline",
    "describe",
    "evaluate_scores",
    "fine_tune",
    "load_batchstream",
    "load_frozen_backbone",
    "mel_filterbank",
    "mel_spectrogram",
    "normalize_clip",
    "normalize_db",
    "prf1",
    "roc_curve",
    "split_by_subject",
    "stft_magnitude",
    "synth_corpus",
]
