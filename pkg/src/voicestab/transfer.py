"""Augmented-pretrain to raw-fine-tune transfer.

Workflow: load a pretraining checkpoint, keep the serialized layers up to
and including the cut point with every retained layer frozen, attach a
fresh head (GAP -> BatchNorm -> Dropout -> Dense+ReLU with L2 -> Dense ->
Softmax), then fine-tune on non-augmented data at a reduced learning
rate.  The backbone's parameter bytes are asserted identical before and
after; training refuses manifests that fail the leakage audit.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import persist
from .dataset import check_leakage
from .errors import CutPointError, LeakageRefusal, ShapeError, VoicestabError
from .nn.graph import ModelGraph
from .nn.layers import BatchNorm, Dense, Dropout, GlobalAvgPool, ReLU, Softmax
from .nn.training import TrainConfig, TrainResult, train_loop
from . import rng as rngmod


@dataclass(frozen=True)
class TransferConfig:
    dense_width: int = 64
    dropout_p: float = 0.5
    l2_lambda: float = 1e-4
    fine_tune_alpha: float = 1e-5
    freeze_backbone: bool = True
    source_checkpoint: str | None = None
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(batch_size=16, early_stop_metric="val_accuracy")
    )

    def __post_init__(self):
        if self.fine_tune_alpha <= 0:
            raise VoicestabError("fine_tune_alpha must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise VoicestabError("dropout_p must be in [0, 1)")


def backbone_hash(graph: ModelGraph, prefix_exclude: str = "head_") -> str:
    """SHA-256 over all frozen-layer tensors (params and buffers)."""
    h = hashlib.sha256()
    tensors = graph.named_tensors()
    for name in sorted(tensors):
        if name.split(".")[0].startswith(prefix_exclude):
            continue
        h.update(name.encode())
        h.update(np.ascontiguousarray(tensors[name], dtype="<f4").tobytes())
    return h.hexdigest()


def load_frozen_backbone(checkpoint_path, cut_point: str | None = None) -> tuple[ModelGraph, dict]:
    """Load a checkpoint truncated at the cut point, all layers frozen.

    The probe stored in the checkpoint already certifies the cut-point
    activation is reproduced bit-exactly after the round trip.
    """
    graph, metadata = persist.load(checkpoint_path)
    cut = cut_point or graph.cut_point
    if cut is None or cut not in {layer.name for layer in graph.layers}:
        raise CutPointError(f"cut point {cut!r} not present in {checkpoint_path}")
    idx = graph.layer_index(cut)
    fragment_layers = graph.layers[: idx + 1]
    for layer in fragment_layers:
        layer.trainable = False
    fragment = ModelGraph(
        fragment_layers,
        input_shape=graph.input_shape,
        num_classes=graph.num_classes,
        family=graph.family,
        cut_point=cut,
        dtype=graph.dtype,
    )
    return fragment, metadata


def attach_head(fragment: ModelGraph, config: TransferConfig, num_classes: int) -> ModelGraph:
    """Append the fine-tuning head; only head layers are trainable."""
    probe = np.zeros((1, *fragment.input_shape), dtype=fragment.dtype)
    out = fragment.forward(probe)
    if out.ndim != 4:
        raise ShapeError(f"fragment output must be 4-D, got shape {out.shape}")
    channels = int(out.shape[1])
    tail = fragment.layers[-1].name

    head = [
        GlobalAvgPool("head_gap", [tail]),
        BatchNorm("head_bn", ["head_gap"], channels),
        Dropout("head_dropout", ["head_bn"], config.dropout_p),
        Dense("head_dense", ["head_dropout"], channels, config.dense_width, l2=config.l2_lambda),
        ReLU("head_relu", ["head_dense"]),
        Dense("head_logits", ["head_relu"], config.dense_width, num_classes),
        Softmax("head_probs", ["head_logits"]),
    ]
    graph = ModelGraph(
        fragment.layers + head,
        input_shape=fragment.input_shape,
        num_classes=num_classes,
        family=fragment.family,
        cut_point=fragment.cut_point,
        dtype=fragment.dtype,
    )
    seed = config.train.seed
    for layer in head:
        layer.init_params(rngmod.stream(seed, "head_init", layer.name), fragment.dtype)
        layer.trainable = True
    return graph


@dataclass
class FineTuneResult:
    result: TrainResult
    backbone_hash_before: str
    backbone_hash_after: str


def fine_tune(graph: ModelGraph, streams, config: TransferConfig, callbacks=()) -> FineTuneResult:
    """Train the head on non-augmented streams; backbone must not move.

    Raises LeakageRefusal before touching any data if the manifest behind
    the training stream fails the leakage audit.
    """
    report = check_leakage(streams.train.manifest)
    if not report.ok:
        raise LeakageRefusal(report.violations)
    if any(e.augmented for e in streams.train.entries) or any(
        e.augmented for e in streams.val.entries
    ):
        raise LeakageRefusal(["fine-tuning streams must be non-augmented"])

    train_config = TrainConfig(
        batch_size=config.train.batch_size,
        alpha=config.fine_tune_alpha,
        max_epochs=config.train.max_epochs,
        early_stop_patience=config.train.early_stop_patience,
        early_stop_metric=config.train.early_stop_metric,
        plateau_factor=config.train.plateau_factor,
        plateau_patience=config.train.plateau_patience,
        min_alpha=config.train.min_alpha,
        seed=config.train.seed,
    )

    before = backbone_hash(graph)
    result = train_loop(graph, streams, train_config, callbacks=callbacks)
    after = backbone_hash(graph)
    if before != after:
        raise VoicestabError("frozen backbone parameters changed during fine-tuning")
    return FineTuneResult(result=result, backbone_hash_before=before, backbone_hash_after=after)
