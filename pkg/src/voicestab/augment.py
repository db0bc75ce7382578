"""Training-only spectrogram augmentation.

Five operations: time masking, frequency masking, SpecAugment (both),
additive Gaussian noise, and random erasing.  A pipeline composes them in
a per-copy shuffled order, each op gated by its own probability.  Every
random draw comes from a stream keyed on
(seed, clip_id, sample_index, copy, op position, op kind), so results are
reproducible regardless of iteration order or parallelism.

Masking ops only ever zero cells; Gaussian noise is the single op that
can raise a value, and outputs are clamped back to [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .audio_dsp import MelSpectrogram
from .errors import AlreadyAugmented, InvalidMaskWidth, InvalidParam

KINDS = ("time_mask", "freq_mask", "spec_augment", "gaussian_noise", "random_erase")


@dataclass(frozen=True)
class AugmentOp:
    kind: str
    probability: float = 0.5
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParam(f"unknown augment op kind {self.kind!r}")
        if not 0.0 <= self.probability <= 1.0:
            raise InvalidParam(f"probability must be in [0, 1], got {self.probability}")


@dataclass(frozen=True)
class AugmentPipeline:
    ops: tuple[AugmentOp, ...]
    seed: int
    copies_per_sample: int = 3

    def __post_init__(self):
        if not self.ops:
            raise InvalidParam("pipeline needs at least one op")
        if self.copies_per_sample < 1:
            raise InvalidParam("copies_per_sample must be positive")


def default_pipeline(seed: int, copies_per_sample: int = 3) -> AugmentPipeline:
    """The stock pipeline: all five ops at probability 0.5 each."""
    ops = (
        AugmentOp("time_mask", 0.5, {"max_width_frac": 0.10}),
        AugmentOp("freq_mask", 0.5, {"max_width_frac": 0.10}),
        AugmentOp(
            "spec_augment",
            0.5,
            {"time_masks": 2, "freq_masks": 2, "time_width_frac": 0.10, "freq_width_frac": 0.10},
        ),
        AugmentOp("gaussian_noise", 0.5, {"sigma_range": (0.01, 0.05)}),
        AugmentOp("random_erase", 0.5, {"area_range": (0.02, 0.20), "aspect_range": (0.3, 3.3)}),
    )
    return AugmentPipeline(ops=ops, seed=seed, copies_per_sample=copies_per_sample)


def _masked_copy(spec: MelSpectrogram) -> MelSpectrogram:
    out = spec.copy()
    out.augmented = True
    return out


def time_mask(spec: MelSpectrogram, max_width_frames: int, rng: np.random.Generator) -> MelSpectrogram:
    """Zero one contiguous band of time columns, width uniform in [1, max]."""
    n_frames = spec.n_frames
    if not 0 < max_width_frames <= n_frames:
        raise InvalidMaskWidth(f"max_width_frames={max_width_frames} vs n_frames={n_frames}")
    width = int(rng.integers(1, max_width_frames + 1))
    start = int(rng.integers(0, n_frames - width + 1))
    out = _masked_copy(spec)
    out.data[:, start : start + width] = 0.0
    return out


def freq_mask(spec: MelSpectrogram, max_width_bins: int, rng: np.random.Generator) -> MelSpectrogram:
    """Zero one contiguous band of mel rows, width uniform in [1, max]."""
    n_mels = spec.n_mels
    if not 0 < max_width_bins <= n_mels:
        raise InvalidMaskWidth(f"max_width_bins={max_width_bins} vs n_mels={n_mels}")
    width = int(rng.integers(1, max_width_bins + 1))
    start = int(rng.integers(0, n_mels - width + 1))
    out = _masked_copy(spec)
    out.data[start : start + width, :] = 0.0
    return out


def spec_augment(
    spec: MelSpectrogram,
    time_masks: int,
    freq_masks: int,
    widths: tuple[int, int],
    rng: np.random.Generator,
) -> MelSpectrogram:
    """Apply ``time_masks`` time masks then ``freq_masks`` frequency masks."""
    if time_masks < 1 or freq_masks < 1:
        raise InvalidParam("mask counts must be >= 1")
    time_width, freq_width = widths
    out = spec
    for _ in range(time_masks):
        out = time_mask(out, time_width, rng)
    for _ in range(freq_masks):
        out = freq_mask(out, freq_width, rng)
    return out


def gaussian_noise(spec: MelSpectrogram, sigma: float, rng: np.random.Generator) -> MelSpectrogram:
    """Add N(0, sigma^2) per cell and clamp back into [0, 1]."""
    if sigma < 0:
        raise InvalidParam(f"sigma must be >= 0, got {sigma}")
    out = _masked_copy(spec)
    noise = rng.normal(0.0, sigma, size=out.data.shape) if sigma > 0 else 0.0
    out.data = np.clip(out.data.astype(np.float64) + noise, 0.0, 1.0).astype(np.float32)
    return out


def random_erase(
    spec: MelSpectrogram,
    area_range: tuple[float, float],
    aspect_range: tuple[float, float],
    rng: np.random.Generator,
) -> MelSpectrogram:
    """Zero one axis-aligned rectangle with sampled area fraction and aspect.

    If no rectangle fits after 10 draws the input passes through unchanged
    and ``meta["erase_skipped"]`` is set.
    """
    area_lo, area_hi = area_range
    aspect_lo, aspect_hi = aspect_range
    if not (0.0 < area_lo <= area_hi < 1.0):
        raise InvalidParam(f"bad area range {area_range}")
    if aspect_lo <= 0 or aspect_hi < aspect_lo:
        raise InvalidParam(f"bad aspect range {aspect_range}")

    h_total, w_total = spec.data.shape
    out = _masked_copy(spec)
    for _ in range(10):
        area = rng.uniform(area_lo, area_hi) * h_total * w_total
        aspect = rng.uniform(aspect_lo, aspect_hi)  # height / width
        h = max(1, round(math.sqrt(area * aspect)))
        w = max(1, round(math.sqrt(area / aspect)))
        if h <= h_total and w <= w_total:
            top = int(rng.integers(0, h_total - h + 1))
            left = int(rng.integers(0, w_total - w + 1))
            out.data[top : top + h, left : left + w] = 0.0
            return out
    out.meta["erase_skipped"] = True
    return out


def _apply_op(spec: MelSpectrogram, op: AugmentOp, rng: np.random.Generator) -> MelSpectrogram:
    p = op.params
    if op.kind == "time_mask":
        width = max(1, round(p.get("max_width_frac", 0.10) * spec.n_frames))
        return time_mask(spec, width, rng)
    if op.kind == "freq_mask":
        width = max(1, round(p.get("max_width_frac", 0.10) * spec.n_mels))
        return freq_mask(spec, width, rng)
    if op.kind == "spec_augment":
        widths = (
            max(1, round(p.get("time_width_frac", 0.10) * spec.n_frames)),
            max(1, round(p.get("freq_width_frac", 0.10) * spec.n_mels)),
        )
        return spec_augment(spec, p.get("time_masks", 2), p.get("freq_masks", 2), widths, rng)
    if op.kind == "gaussian_noise":
        lo, hi = p.get("sigma_range", (0.01, 0.05))
        return gaussian_noise(spec, float(rng.uniform(lo, hi)), rng)
    if op.kind == "random_erase":
        return random_erase(
            spec,
            tuple(p.get("area_range", (0.02, 0.20))),
            tuple(p.get("aspect_range", (0.3, 3.3))),
            rng,
        )
    raise InvalidParam(f"unknown op kind {op.kind!r}")


def apply_pipeline(
    pipeline: AugmentPipeline, spec: MelSpectrogram, sample_index: int
) -> list[MelSpectrogram]:
    """Produce ``copies_per_sample`` augmented copies of one spectrogram.

    Each copy shuffles the op order and gates each op on its probability;
    every draw is keyed so the call is a pure function of
    (pipeline, spec, sample_index).  Already-augmented inputs are refused.
    """
    if spec.augmented:
        raise AlreadyAugmented(f"clip {spec.source_clip_id!r} is already augmented")

    copies = []
    for copy_idx in range(pipeline.copies_per_sample):
        key = (spec.source_clip_id, sample_index, copy_idx)
        order = rngmod.stream(pipeline.seed, *key, "order").permutation(len(pipeline.ops))
        out = spec.copy()
        for pos in order:
            op = pipeline.ops[pos]
            gate = rngmod.stream(pipeline.seed, *key, int(pos), op.kind, "gate")
            if gate.uniform() >= op.probability:
                continue
            draw = rngmod.stream(pipeline.seed, *key, int(pos), op.kind, "draw")
            out = _apply_op(out, op, draw)
        out.augmented = True
        out.subject_id = spec.subject_id
        out.label = spec.label
        copies.append(out)
    return copies
