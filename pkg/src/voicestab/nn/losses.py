"""Softmax, one-hot targets, and categorical cross-entropy with L2."""

from __future__ import annotations

import numpy as np

from ..errors import LabelError

_CLAMP = 1e-12  # floor for log() so perfect-confidence misses stay finite


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; rows sum to 1."""
    z = np.asarray(z)
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or np.any(labels < 0) or np.any(labels >= num_classes):
        raise LabelError(f"labels must be integers in [0, {num_classes})")
    out = np.zeros((labels.size, num_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out


def _validate_onehot(labels: np.ndarray) -> None:
    if labels.ndim != 2:
        raise LabelError(f"one-hot labels must be 2-D, got shape {labels.shape}")
    ok = np.all((labels == 0) | (labels == 1)) and np.all(labels.sum(axis=1) == 1)
    if not ok:
        raise LabelError("labels are not one-hot rows")


def cross_entropy(probs: np.ndarray, labels_onehot: np.ndarray, l2_terms=()) -> float:
    """-(1/B) sum log p_true plus sum of lambda * ||W||^2 penalties."""
    probs = np.asarray(probs)
    labels = np.asarray(labels_onehot)
    _validate_onehot(labels)
    if probs.shape != labels.shape:
        raise LabelError(f"probs {probs.shape} vs labels {labels.shape}")
    p_true = (probs * labels).sum(axis=1)
    loss = float(-np.mean(np.log(np.maximum(p_true, _CLAMP))))
    for lam, weight in l2_terms:
        loss += float(lam) * float(np.sum(np.asarray(weight, dtype=np.float64) ** 2))
    return loss


def cross_entropy_grad(probs: np.ndarray, labels_onehot: np.ndarray) -> np.ndarray:
    """d(loss)/d(probs); through a softmax layer this lands at (p - y)/B."""
    probs = np.asarray(probs)
    labels = np.asarray(labels_onehot, dtype=probs.dtype)
    _validate_onehot(labels)
    batch = probs.shape[0]
    p_true = (probs * labels).sum(axis=1, keepdims=True)
    grad = np.zeros_like(probs)
    active = p_true > _CLAMP  # clamped rows contribute zero gradient
    grad -= labels * np.where(active, 1.0 / np.maximum(p_true, _CLAMP), 0.0) / batch
    return grad
