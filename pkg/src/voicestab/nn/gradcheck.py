"""Central finite-difference verification of analytic gradients.

The graph under test should be built in float64; the dropout step is held
fixed so every finite-difference evaluation sees the same mask.
"""

from __future__ import annotations

import numpy as np

from .losses import cross_entropy, cross_entropy_grad


def graph_loss(graph, x, labels_onehot, seed=0, step=0) -> float:
    probs = graph.forward(x, training=True, seed=seed, step=step)
    return cross_entropy(probs, labels_onehot, graph.l2_terms())


def analytic_grads(graph, x, labels_onehot, seed=0, step=0) -> dict[str, np.ndarray]:
    probs = graph.forward(x, training=True, seed=seed, step=step)
    graph.zero_grads()
    graph.backward(cross_entropy_grad(probs, labels_onehot).astype(graph.dtype))
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.value))
        for name, p in graph.trainable_params().items()
    }


def check_gradients(
    graph,
    x,
    labels_onehot,
    n_coords: int = 100,
    h: float = 1e-5,
    seed: int = 0,
    step: int = 0,
    coord_rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic vs central-difference gradients on random coords.

    Returns the maximum relative error over the sampled coordinates,
    where relative error is |a - f| / max(|a|, |f|, 1e-8).
    """
    coord_rng = coord_rng or np.random.default_rng(0)
    analytic = analytic_grads(graph, x, labels_onehot, seed=seed, step=step)
    params = graph.trainable_params()

    flat_coords = []
    for name, p in params.items():
        for flat_idx in range(p.value.size):
            flat_coords.append((name, flat_idx))
    if len(flat_coords) > n_coords:
        picked = coord_rng.choice(len(flat_coords), size=n_coords, replace=False)
        flat_coords = [flat_coords[i] for i in picked]

    max_rel = 0.0
    for name, flat_idx in flat_coords:
        value = params[name].value
        flat = value.reshape(-1)
        orig = flat[flat_idx]
        flat[flat_idx] = orig + h
        loss_plus = graph_loss(graph, x, labels_onehot, seed=seed, step=step)
        flat[flat_idx] = orig - h
        loss_minus = graph_loss(graph, x, labels_onehot, seed=seed, step=step)
        flat[flat_idx] = orig
        fd = (loss_plus - loss_minus) / (2.0 * h)
        an = float(analytic[name].reshape(-1)[flat_idx])
        rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
        max_rel = max(max_rel, rel)
    return max_rel
