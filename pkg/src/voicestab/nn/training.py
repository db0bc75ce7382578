"""Training loop with checkpoint-on-improvement, LR plateau, early stop.

The callback logic lives in TrainController so scripted-metric tests can
drive it without real training.  Per epoch the controller fires in order:
checkpoint (validation loss strictly improved), plateau reduction
(validation loss flat for plateau_patience epochs), early stop (the
configured metric flat for early_stop_patience epochs).  The loop returns
the best-checkpoint weights, not the last epoch's.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidParam, NumericalError
from .losses import cross_entropy, cross_entropy_grad, one_hot
from .optim import AdamState, adam_step

VAL_LOSS = "val_loss"
VAL_ACCURACY = "val_accuracy"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    alpha: float = 1e-4
    max_epochs: int = 250
    early_stop_patience: int = 10
    early_stop_metric: str = VAL_LOSS
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    min_alpha: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1 or self.early_stop_patience < 1:
            raise InvalidParam("max_epochs and early_stop_patience must be >= 1")
        if self.early_stop_metric not in (VAL_LOSS, VAL_ACCURACY):
            raise InvalidParam(f"unknown early_stop_metric {self.early_stop_metric!r}")
        if not (0.0 < self.plateau_factor <= 1.0) or self.plateau_patience < 1:
            raise InvalidParam("bad plateau schedule")


@dataclass
class EpochDecision:
    checkpoint: bool
    alpha: float
    reduced: bool
    stop: bool


class TrainController:
    """Pure callback bookkeeping, one observe() per finished epoch."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.alpha = config.alpha
        self.best_val_loss = math.inf
        self.best_epoch = 0
        self._plateau_best = math.inf
        self._plateau_wait = 0
        self._stop_best = math.inf if config.early_stop_metric == VAL_LOSS else -math.inf
        self._stop_wait = 0

    def observe(self, epoch: int, val_loss: float, val_accuracy: float) -> EpochDecision:
        checkpoint = val_loss < self.best_val_loss
        if checkpoint:
            self.best_val_loss = val_loss
            self.best_epoch = epoch

        reduced = False
        if val_loss < self._plateau_best:
            self._plateau_best = val_loss
            self._plateau_wait = 0
        else:
            self._plateau_wait += 1
            if self._plateau_wait >= self.config.plateau_patience:
                new_alpha = max(self.alpha * self.config.plateau_factor, self.config.min_alpha)
                reduced = new_alpha < self.alpha
                self.alpha = new_alpha
                self._plateau_wait = 0

        if self.config.early_stop_metric == VAL_LOSS:
            improved = val_loss < self._stop_best
            if improved:
                self._stop_best = val_loss
        else:
            improved = val_accuracy > self._stop_best
            if improved:
                self._stop_best = val_accuracy
        if improved:
            self._stop_wait = 0
        else:
            self._stop_wait += 1
        stop = self._stop_wait >= self.config.early_stop_patience

        return EpochDecision(checkpoint=checkpoint, alpha=self.alpha, reduced=reduced, stop=stop)


@dataclass
class TrainResult:
    graph: object
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    best_val_loss: float = math.inf


def _epoch_pass(graph, stream, epoch, *, train, optimizer, seed, step0):
    """One pass over a stream; returns (loss, accuracy, ids_digest, steps)."""
    total_loss = 0.0
    total_correct = 0
    total_n = 0
    step = step0
    digest = hashlib.sha256()
    l2 = graph.l2_terms()
    for x, y, clip_ids in stream.epoch(epoch if train else 0):
        for cid in clip_ids:
            digest.update(cid.encode())
            digest.update(b"\x00")
        labels = one_hot(y, graph.num_classes, dtype=np.float64)
        probs = graph.forward(x, training=train, seed=seed, step=step)
        loss = cross_entropy(probs, labels, l2)
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite loss at epoch {epoch}")
        batch = x.shape[0]
        total_loss += loss * batch
        total_correct += int(np.sum(np.argmax(probs, axis=1) == np.asarray(y)))
        total_n += batch
        if train:
            graph.zero_grads()
            graph.backward(cross_entropy_grad(probs, labels).astype(graph.dtype))
            params = {k: p.value for k, p in graph.trainable_params().items()}
            grads = {
                k: (p.grad if p.grad is not None else np.zeros_like(p.value))
                for k, p in graph.trainable_params().items()
            }
            adam_step(optimizer, params, grads)
            step += 1
    return total_loss / total_n, total_correct / total_n, digest.hexdigest()[:16], step


def train_loop(graph, streams, config: TrainConfig, callbacks=()) -> TrainResult:
    """Train until early stop or max_epochs; returns best-checkpoint weights.

    ``streams`` must expose ``.train`` and ``.val``, each yielding
    (batch, labels, clip_ids) from ``.epoch(i)``.  On a non-finite loss a
    NumericalError carrying the partial history is raised.
    """
    controller = TrainController(config)
    optimizer = AdamState(alpha=config.alpha)
    history: list[dict] = []
    best_snapshot = None
    best_epoch = 0
    stopped_epoch = 0
    step = 0

    for epoch in range(1, config.max_epochs + 1):
        optimizer.alpha = controller.alpha
        try:
            train_loss, train_acc, digest, step = _epoch_pass(
                graph, streams.train, epoch, train=True, optimizer=optimizer,
                seed=config.seed, step0=step,
            )
            val_loss, val_acc, _, _ = _epoch_pass(
                graph, streams.val, epoch, train=False, optimizer=None,
                seed=config.seed, step0=step,
            )
        except NumericalError as exc:
            raise NumericalError(str(exc), history=history) from exc

        decision = controller.observe(epoch, val_loss, val_acc)
        record = {
            "epoch": epoch,
            "train_loss": train_loss,
            "train_accuracy": train_acc,
            "val_loss": val_loss,
            "val_accuracy": val_acc,
            "alpha": optimizer.alpha,
            "alpha_next": decision.alpha,
            "checkpointed": decision.checkpoint,
            "batch_digest": digest,
        }
        history.append(record)
        if decision.checkpoint:
            best_snapshot = graph.snapshot()
            best_epoch = epoch
        for cb in callbacks:
            cb(record)
        stopped_epoch = epoch
        if decision.stop:
            break

    if best_snapshot is not None:
        graph.restore(best_snapshot)
    return TrainResult(
        graph=graph,
        history=history,
        best_epoch=best_epoch,
        stopped_epoch=stopped_epoch,
        best_val_loss=controller.best_val_loss,
    )

