"""Manifests, subject-independent splitting, and the synthetic corpus.

A manifest is one JSON object per line; paths are relative to the
manifest's directory.  Splitting is subject-atomic: every clip of a
subject lands in exactly one of train/val/test, assignments are greedy
largest-subject-first into the most-underfilled split, interleaving label
strata so small corpora keep both classes in every split.  All ties are
resolved by the split seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import persist, rng as rngmod
from .audio_dsp import Label, write_wav
from .errors import (
    InsufficientSubjects,
    InvalidParam,
    MissingSpectrogram,
    UnsatisfiableSplit,
)

TRAIN, VAL, TEST, UNASSIGNED = "train", "val", "test", "unassigned"
SPLITS = (TRAIN, VAL, TEST)


@dataclass
class ManifestEntry:
    clip_id: str
    subject_id: str
    label: Label
    audio_path: str | None = None
    spectrogram_path: str | None = None
    split: str = UNASSIGNED
    augmented: bool = False
    source_clip_id: str | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "clip_id": self.clip_id,
                "subject_id": self.subject_id,
                "label": self.label.value,
                "audio_path": self.audio_path,
                "spectrogram_path": self.spectrogram_path,
                "split": self.split,
                "augmented": self.augmented,
                "source_clip_id": self.source_clip_id,
            },
            sort_keys=True,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        known = {
            "clip_id", "subject_id", "label", "audio_path",
            "spectrogram_path", "split", "augmented", "source_clip_id",
        }
        unknown = set(d) - known
        if unknown:
            raise InvalidParam(f"unknown manifest fields: {sorted(unknown)}")
        if d.get("split", UNASSIGNED) not in (*SPLITS, UNASSIGNED):
            raise InvalidParam(f"bad split value {d.get('split')!r}")
        return cls(
            clip_id=str(d["clip_id"]),
            subject_id=str(d["subject_id"]),
            label=Label.from_string(d["label"]),
            audio_path=d.get("audio_path"),
            spectrogram_path=d.get("spectrogram_path"),
            split=d.get("split", UNASSIGNED),
            augmented=bool(d.get("augmented", False)),
            source_clip_id=d.get("source_clip_id"),
        )


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    base_dir: str = "."

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def by_split(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def by_id(self) -> dict[str, ManifestEntry]:
        return {e.clip_id: e for e in self.entries}

    def resolve(self, rel_path: str) -> str:
        return os.path.normpath(os.path.join(self.base_dir, rel_path))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(e.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        entries = []
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    entries.append(ManifestEntry.from_dict(json.loads(line)))
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    raise InvalidParam(f"{path}:{line_no}: bad manifest line: {exc}") from exc
        return cls(entries=entries, base_dir=os.path.dirname(os.path.abspath(path)) or ".")


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 0
    stratify_by_label: bool = True

    def __post_init__(self):
        if any(f <= 0 for f in self.fractions) or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise InvalidParam(f"fractions must be positive and sum to 1, got {self.fractions}")


def split_by_subject(manifest: Manifest, spec: SplitSpec) -> Manifest:
    """Assign every subject's clips to one split, approaching the fractions.

    Greedy: within each label stratum subjects are ordered largest first
    (equal sizes shuffled by seed); strata are consumed round-robin; each
    subject goes to the split with the largest remaining clip deficit.
    Deficit ties prefer the split shortest on the subject's label, then a
    seeded coin decides.
    """
    if any(e.split != UNASSIGNED or e.augmented for e in manifest):
        raise InvalidParam("split_by_subject needs an unassigned, non-augmented manifest")

    subjects: dict[str, list[ManifestEntry]] = {}
    for e in manifest:
        subjects.setdefault(e.subject_id, []).append(e)
    if len(subjects) < 3:
        raise InsufficientSubjects(f"need >= 3 subjects, got {len(subjects)}")

    total = len(manifest.entries)
    max_frac = max(spec.fractions)
    for sid, clips in subjects.items():
        if len(clips) / total > max_frac:
            raise UnsatisfiableSplit(
                f"subject {sid!r} holds {len(clips)}/{total} clips, above the "
                f"largest split fraction {max_frac}"
            )

    def subject_label(clips: list[ManifestEntry]) -> str:
        counts: dict[str, int] = {}
        for e in clips:
            counts[e.label.value] = counts.get(e.label.value, 0) + 1
        return max(sorted(counts), key=lambda k: counts[k])

    if spec.stratify_by_label:
        strata: dict[str, list[str]] = {}
        for sid, clips in subjects.items():
            strata.setdefault(subject_label(clips), []).append(sid)
    else:
        strata = {"all": list(subjects)}

    queues = []
    for stratum_key in sorted(strata):
        sids = sorted(strata[stratum_key])
        jitter = rngmod.stream(spec.seed, "order", stratum_key).permutation(len(sids))
        ranked = sorted(zip(sids, jitter), key=lambda t: (-len(subjects[t[0]]), t[1]))
        queues.append([sid for sid, _ in ranked])

    targets = [f * total for f in spec.fractions]
    assigned = [0, 0, 0]
    subject_counts = [0, 0, 0]
    label_counts = [dict() for _ in range(3)]
    assignment: dict[str, str] = {}
    position = 0
    while any(queues):
        queue = queues[position % len(queues)]
        position += 1
        if not queue:
            continue
        sid = queue.pop(0)
        size = len(subjects[sid])
        label = subject_label(subjects[sid])
        deficits = [targets[i] - assigned[i] for i in range(3)]
        # never strand a split with zero subjects when enough remain
        subjects_left = len(subjects) - len(assignment)
        empty = [i for i in range(3) if subject_counts[i] == 0]
        pool = empty if empty and subjects_left <= len(empty) else range(3)
        best = max(deficits[i] for i in pool)
        candidates = [i for i in pool if deficits[i] == best]
        if len(candidates) > 1:
            # deficit ties go to the split shortest on this subject's label
            fewest = min(label_counts[i].get(label, 0) for i in candidates)
            candidates = [i for i in candidates if label_counts[i].get(label, 0) == fewest]
        if len(candidates) == 1:
            pick = candidates[0]
        else:
            tie = rngmod.stream(spec.seed, "tie", sid)
            pick = candidates[int(tie.integers(0, len(candidates)))]
        assignment[sid] = SPLITS[pick]
        assigned[pick] += size
        subject_counts[pick] += 1
        label_counts[pick][label] = label_counts[pick].get(label, 0) + size

    out_entries = [replace(e, split=assignment[e.subject_id]) for e in manifest]
    return Manifest(entries=out_entries, base_dir=manifest.base_dir)


@dataclass
class LeakageViolation:
    kind: str
    detail: str
    clip_id: str | None = None
    subject_id: str | None = None

    def __str__(self):
        return f"{self.kind}: {self.detail}"


@dataclass
class LeakageReport:
    ok: bool
    violations: list[LeakageViolation]


def check_leakage(manifest: Manifest) -> LeakageReport:
    """Audit the manifest; always returns a report, never raises.

    Flags subject overlap across splits, augmented entries outside train,
    augmented entries whose source is missing or not in train, duplicate
    clip ids, and entries left unassigned.
    """
    violations: list[LeakageViolation] = []

    seen_ids: set[str] = set()
    for e in manifest:
        if e.clip_id in seen_ids:
            violations.append(
                LeakageViolation("duplicate_clip_id", f"clip_id {e.clip_id!r} appears twice", clip_id=e.clip_id)
            )
        seen_ids.add(e.clip_id)

    subject_splits: dict[str, set[str]] = {}
    for e in manifest:
        if e.split == UNASSIGNED:
            violations.append(
                LeakageViolation("unassigned", f"clip {e.clip_id!r} has no split", clip_id=e.clip_id)
            )
            continue
        subject_splits.setdefault(e.subject_id, set()).add(e.split)
    for sid, splits in sorted(subject_splits.items()):
        if len(splits) > 1:
            violations.append(
                LeakageViolation(
                    "subject_overlap",
                    f"subject {sid!r} spans splits {sorted(splits)}",
                    subject_id=sid,
                )
            )

    originals = {e.clip_id: e for e in manifest if not e.augmented}
    for e in manifest:
        if not e.augmented:
            continue
        if e.split != TRAIN:
            violations.append(
                LeakageViolation(
                    "augmented_outside_train",
                    f"augmented clip {e.clip_id!r} sits in split {e.split!r}",
                    clip_id=e.clip_id,
                )
            )
        source = originals.get(e.source_clip_id) if e.source_clip_id else None
        if source is None or source.split != TRAIN:
            where = "missing" if source is None else f"in {source.split!r}"
            violations.append(
                LeakageViolation(
                    "augmented_source_not_train",
                    f"augmented clip {e.clip_id!r} has source {e.source_clip_id!r} {where}",
                    clip_id=e.clip_id,
                )
            )

    return LeakageReport(ok=not violations, violations=violations)


# ---------------------------------------------------------------------------
# synthetic corpus


# stable voices put all their energy below this; unstable bursts are
# broadband, so the octaves above it are class-pure evidence
_VOICE_BAND_HZ = 2500.0


def _harmonic_voice(gen, n: int, sample_rate: int, f0: float, amps: np.ndarray,
                    vib_rate: float, vib_depth: float) -> np.ndarray:
    t = np.arange(n) / sample_rate
    vib_phase = gen.uniform(0, 2 * np.pi)
    inst_f0 = f0 * (1.0 + vib_depth * np.sin(2 * np.pi * vib_rate * t + vib_phase))
    base_phase = 2 * np.pi * np.cumsum(inst_f0) / sample_rate
    signal = np.zeros(n)
    for k, a in enumerate(amps, start=1):
        signal += a * np.sin(k * base_phase + gen.uniform(0, 2 * np.pi))
    envelope = 0.8 + 0.2 * np.sin(2 * np.pi * gen.uniform(0.3, 1.2) * t + gen.uniform(0, 2 * np.pi))
    return signal * envelope


def _instability(gen, n: int, sample_rate: int, tilt: float) -> np.ndarray:
    """Dense broadband noise bursts with a per-subject spectral tilt."""
    noise = np.zeros(n)
    n_bursts = int(gen.integers(20, 40))
    for _ in range(n_bursts):
        width = int(gen.uniform(0.03, 0.12) * sample_rate)
        start = int(gen.integers(0, max(1, n - width)))
        burst = gen.standard_normal(width) * float(gen.uniform(0.5, 1.0))
        window = np.hanning(width) if width > 1 else np.ones(1)
        noise[start : start + width] += burst * window
    # first-difference mixing shifts energy upward; tilt is the subject cue
    tilted = (1.0 - tilt) * noise + tilt * np.concatenate([[0.0], np.diff(noise)])
    return tilted


def synth_corpus(
    seed: int,
    n_subjects: int,
    clips_per_subject: int,
    sample_rate: int = 48000,
    duration_s: float = 2.0,
    out_dir: str = ".",
) -> Manifest:
    """Generate a deterministic two-class corpus of WAV files plus manifest.

    Stable subjects are harmonic voices (per-subject fundamental in
    110-220 Hz with mild vibrato and a random timbre); unstable subjects
    add strong aperiodic noise bursts and a per-subject spectral tilt.
    Each subject has exactly one class.
    """
    if n_subjects < 6 or n_subjects % 2 != 0:
        raise InvalidParam(f"n_subjects must be even and >= 6, got {n_subjects}")
    if clips_per_subject < 2:
        raise InvalidParam(f"clips_per_subject must be >= 2, got {clips_per_subject}")

    audio_dir = os.path.join(out_dir, "audio")
    os.makedirs(audio_dir, exist_ok=True)
    n = int(round(sample_rate * duration_s))

    entries = []
    for s_idx in range(n_subjects):
        sid = f"subj{s_idx:03d}"
        label = Label.STABLE if s_idx < n_subjects // 2 else Label.UNSTABLE
        sgen = rngmod.stream(seed, "subject", s_idx)
        f0 = float(sgen.uniform(110.0, 220.0))
        n_harm = max(3, int(_VOICE_BAND_HZ // f0))
        decay = float(sgen.uniform(0.7, 1.3))
        amps = sgen.uniform(0.5, 1.0, size=n_harm) / (np.arange(1, n_harm + 1) ** decay)
        vib_rate = float(sgen.uniform(4.0, 7.0))
        vib_depth = float(sgen.uniform(0.005, 0.02))
        tilt = float(sgen.uniform(0.55, 0.9))

        for c_idx in range(clips_per_subject):
            cid = f"{sid}_c{c_idx:03d}"
            cgen = rngmod.stream(seed, "clip", s_idx, c_idx)
            drift = float(cgen.uniform(0.98, 1.02))
            voice = _harmonic_voice(cgen, n, sample_rate, f0 * drift, amps, vib_rate, vib_depth)
            voice = voice / np.max(np.abs(voice))
            if label is Label.UNSTABLE:
                voice = voice + _instability(cgen, n, sample_rate, tilt)
            voice = 0.9 * voice / np.max(np.abs(voice))
            rel_path = os.path.join("audio", f"{cid}.wav")
            write_wav(os.path.join(out_dir, rel_path), voice, sample_rate)
            entries.append(
                ManifestEntry(clip_id=cid, subject_id=sid, label=label, audio_path=rel_path)
            )
    return Manifest(entries=entries, base_dir=out_dir)


# ---------------------------------------------------------------------------
# batch streaming


class BatchStream:
    """Seeded, epoch-complete batch iterator over one split.

    Every entry of the split appears exactly once per epoch in an order
    fixed by (seed, split, epoch); the final short batch is kept.
    """

    def __init__(self, manifest: Manifest, split: str, batch_size: int, seed: int):
        if split not in SPLITS:
            raise InvalidParam(f"bad split {split!r}")
        if batch_size < 1:
            raise InvalidParam("batch_size must be positive")
        self.manifest = manifest
        self.split = split
        self.batch_size = int(batch_size)
        self.seed = int(seed)
        self.entries = manifest.by_split(split)
        if not self.entries:
            raise InvalidParam(f"split {split!r} is empty")
        for e in self.entries:
            if e.spectrogram_path is None:
                raise MissingSpectrogram(e.clip_id, "(no spectrogram_path)")
            path = manifest.resolve(e.spectrogram_path)
            if not os.path.exists(path):
                raise MissingSpectrogram(e.clip_id, path)

    def __len__(self):
        return len(self.entries)

    def order(self, epoch: int) -> list[int]:
        perm = rngmod.stream(self.seed, "epoch", self.split, epoch).permutation(len(self.entries))
        return [int(i) for i in perm]

    def epoch(self, epoch: int):
        order = self.order(epoch)
        for start in range(0, len(order), self.batch_size):
            chunk = order[start : start + self.batch_size]
            arrays = []
            labels = []
            ids = []
            for i in chunk:
                e = self.entries[i]
                arr = persist.read_tensor(self.manifest.resolve(e.spectrogram_path))
                arrays.append(arr[None, :, :])
                labels.append(0 if e.label is Label.STABLE else 1)
                ids.append(e.clip_id)
            yield np.stack(arrays).astype(np.float32), np.asarray(labels, dtype=np.int64), ids


@dataclass
class SplitStreams:
    train: BatchStream
    val: BatchStream


def load_batchstream(manifest: Manifest, split: str, batch_size: int, seed: int) -> BatchStream:
    return BatchStream(manifest, split, batch_size, seed)
