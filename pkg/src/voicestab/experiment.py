"""Three-phase experiment orchestration.

Phase 1 trains each selected model from scratch on the non-augmented
training split (batch 16).  Phase 2 trains on the augmented training set
(batch 32) and exports the checkpoint before any test read.  Phase 3
loads the phase-2 checkpoint, freezes the backbone, and fine-tunes the
head on the raw data.  One seed fixes the split, the augmentation, the
weight init, and the batch order, so reruns are bit-identical.

Every consequential action appends an event to an append-only JSONL run
log (sequence number, timestamp, artifact hashes); the audit pass proves
test-once discipline and checkpoint-before-test ordering from that log.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from . import augment as augmod
from . import dataset as datamod
from . import metrics as metmod
from . import model_zoo, persist, rng as rngmod, transfer as transmod
from .audio_dsp import (
    MelSpectrogram,
    SpectrogramParams,
    fit_duration,
    mel_spectrogram,
    normalize_clip,
    read_wav,
)
from .errors import ConfigError, LeakageRefusal, MissingCheckpoint
from .nn.training import TrainConfig, train_loop

PHASES = ("P1", "P2", "P3")


# ---------------------------------------------------------------------------
# configuration


_TRAIN_KEYS = {
    "batch_size", "alpha", "max_epochs", "early_stop_patience",
    "early_stop_metric", "plateau_factor", "plateau_patience", "min_alpha",
}

_SCHEMA = {
    "manifest": None,
    "synth": {"seed", "n_subjects", "clips_per_subject", "sample_rate", "duration_s"},
    "models": None,
    "seeds": None,
    "output_dir": None,
    "spectrogram": {
        "sample_rate", "n_fft", "hop", "n_mels", "f_min", "f_max",
        "window", "center_pad", "db_floor",
    },
    "split": {"train", "val", "test", "stratify_by_label"},
    "augment": {"copies_per_sample", "ops"},
    "phase1": _TRAIN_KEYS,
    "phase2": _TRAIN_KEYS,
    "phase3": _TRAIN_KEYS | {"head"},
}

_HEAD_KEYS = {"dense_width", "dropout_p", "l2_lambda"}


def _check_keys(section: str, mapping: dict, allowed: set) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)}")


@dataclass
class ExperimentConfig:
    output_dir: str
    manifest: str | None = None
    synth: dict | None = None
    models: tuple[str, ...] = model_zoo.MODEL_NAMES
    seeds: tuple[int, ...] = (101, 102, 103)
    spectrogram: SpectrogramParams = field(default_factory=SpectrogramParams)
    split: datamod.SplitSpec = field(default_factory=datamod.SplitSpec)
    copies_per_sample: int = 3
    augment_ops: tuple[augmod.AugmentOp, ...] | None = None  # None -> stock pipeline
    phase1: TrainConfig = field(default_factory=lambda: TrainConfig(batch_size=16, alpha=1e-4))
    phase2: TrainConfig = field(default_factory=lambda: TrainConfig(batch_size=32, alpha=1e-4))
    phase3: TrainConfig = field(
        default_factory=lambda: TrainConfig(batch_size=16, alpha=1e-5, early_stop_metric="val_accuracy")
    )
    head: dict = field(
        default_factory=lambda: {"dense_width": 64, "dropout_p": 0.5, "l2_lambda": 1e-4}
    )
    duration_s: float = 2.0

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        return cls.from_dict(raw, config_dir=os.path.dirname(os.path.abspath(path)))

    @classmethod
    def from_dict(cls, raw: dict, config_dir: str = ".") -> "ExperimentConfig":
        _check_keys("<root>", raw, set(_SCHEMA))
        if "output_dir" not in raw:
            raise ConfigError("output_dir is required")
        for section, allowed in _SCHEMA.items():
            if allowed is not None and section in raw and isinstance(raw[section], dict):
                _check_keys(section, raw[section], allowed)

        out_dir = raw["output_dir"]
        if not os.path.isabs(out_dir):
            out_dir = os.path.join(config_dir, out_dir)

        manifest = raw.get("manifest")
        if manifest and not os.path.isabs(manifest):
            manifest = os.path.join(config_dir, manifest)

        synth = raw.get("synth")
        if synth is not None and not isinstance(synth, dict):
            raise ConfigError("synth must be a mapping")
        if manifest is None and synth is None:
            raise ConfigError("either manifest or synth must be given")

        models = tuple(raw.get("models", model_zoo.MODEL_NAMES))
        for m in models:
            if m not in model_zoo.MODEL_NAMES:
                raise ConfigError(f"unknown model {m!r}")

        seeds = tuple(int(s) for s in raw.get("seeds", (101, 102, 103)))
        if not seeds:
            raise ConfigError("seeds must be non-empty")

        spect = SpectrogramParams(**raw.get("spectrogram", {}))

        split_raw = dict(raw.get("split", {}))
        split = datamod.SplitSpec(
            fractions=(
                float(split_raw.get("train", 0.70)),
                float(split_raw.get("val", 0.15)),
                float(split_raw.get("test", 0.15)),
            ),
            stratify_by_label=bool(split_raw.get("stratify_by_label", True)),
        )

        aug_raw = dict(raw.get("augment", {}))
        copies = int(aug_raw.get("copies_per_sample", 3))
        ops_raw = aug_raw.get("ops", "default")
        if ops_raw == "default" or ops_raw is None:
            ops = None
        else:
            parsed = []
            for item in ops_raw:
                item = dict(item)
                kind = item.pop("kind")
                probability = float(item.pop("probability", 0.5))
                parsed.append(augmod.AugmentOp(kind, probability, item))
            ops = tuple(parsed)

        def train_cfg(section: str, defaults: TrainConfig) -> TrainConfig:
            params = dict(raw.get(section, {}))
            params.pop("head", None)
            merged = {
                "batch_size": int(params.get("batch_size", defaults.batch_size)),
                "alpha": float(params.get("alpha", defaults.alpha)),
                "max_epochs": int(params.get("max_epochs", defaults.max_epochs)),
                "early_stop_patience": int(
                    params.get("early_stop_patience", defaults.early_stop_patience)
                ),
                "early_stop_metric": params.get("early_stop_metric", defaults.early_stop_metric),
                "plateau_factor": float(params.get("plateau_factor", defaults.plateau_factor)),
                "plateau_patience": int(params.get("plateau_patience", defaults.plateau_patience)),
                "min_alpha": float(params.get("min_alpha", defaults.min_alpha)),
            }
            return TrainConfig(**merged)

        head = dict(raw.get("phase3", {}).get("head", {}) or {})
        _check_keys("phase3.head", head, _HEAD_KEYS)
        head = {
            "dense_width": int(head.get("dense_width", 64)),
            "dropout_p": float(head.get("dropout_p", 0.5)),
            "l2_lambda": float(head.get("l2_lambda", 1e-4)),
        }

        duration = float((synth or {}).get("duration_s", 2.0))

        return cls(
            output_dir=out_dir,
            manifest=manifest,
            synth=synth,
            models=models,
            seeds=seeds,
            spectrogram=spect,
            split=split,
            copies_per_sample=copies,
            augment_ops=ops,
            phase1=train_cfg("phase1", TrainConfig(batch_size=16, alpha=1e-4)),
            phase2=train_cfg("phase2", TrainConfig(batch_size=32, alpha=1e-4)),
            phase3=train_cfg(
                "phase3", TrainConfig(batch_size=16, alpha=1e-5, early_stop_metric="val_accuracy")
            ),
            head=head,
            duration_s=duration,
        )


# ---------------------------------------------------------------------------
# run log


class RunLog:
    """Append-only JSONL event stream with monotone sequence numbers."""

    def __init__(self, path):
        self.path = path
        self._seq = 0
        if os.path.exists(path):
            for _ in open(path, "r", encoding="utf-8"):
                self._seq += 1

    def append(self, event: str, **fields) -> dict:
        record = {"seq": self._seq, "ts": time.time(), "event": event, **fields}
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._seq += 1
        return record

    def read(self) -> list[dict]:
        if not os.path.exists(self.path):
            return []
        return [json.loads(line) for line in open(self.path, "r", encoding="utf-8") if line.strip()]


# ---------------------------------------------------------------------------
# results


@dataclass
class PhaseResult:
    model: str
    phase: str
    seed: int
    report: metmod.EvalReport
    history: list[dict]
    checkpoint_path: str
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "phase": self.phase,
            "seed": self.seed,
            "report": self.report.to_dict(),
            "history": self.history,
            "checkpoint_path": self.checkpoint_path,
            "extras": self.extras,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhaseResult":
        return cls(
            model=d["model"],
            phase=d["phase"],
            seed=d["seed"],
            report=metmod.EvalReport.from_dict(d["report"]),
            history=d["history"],
            checkpoint_path=d["checkpoint_path"],
            extras=d.get("extras", {}),
        )


def _derived_seed(*tokens) -> int:
    return rngmod.derive_key(0xE0, *tokens) % (2**62)


class Experiment:
    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.out = config.output_dir
        os.makedirs(self.out, exist_ok=True)
        self.log = RunLog(os.path.join(self.out, "runlog.jsonl"))

    # -- data preparation ---------------------------------------------------

    def ensure_corpus(self) -> datamod.Manifest:
        if self.config.manifest:
            manifest = datamod.Manifest.load(self.config.manifest)
            self.log.append("corpus_loaded", path=self.config.manifest, entries=len(manifest))
            return manifest
        synth = dict(self.config.synth or {})
        corpus_dir = os.path.join(self.out, "corpus")
        manifest_path = os.path.join(corpus_dir, "manifest.jsonl")
        if not os.path.exists(manifest_path):
            manifest = datamod.synth_corpus(
                seed=int(synth.get("seed", 7)),
                n_subjects=int(synth.get("n_subjects", 12)),
                clips_per_subject=int(synth.get("clips_per_subject", 10)),
                sample_rate=int(synth.get("sample_rate", 48000)),
                duration_s=float(synth.get("duration_s", 2.0)),
                out_dir=corpus_dir,
            )
            manifest.save(manifest_path)
            self.log.append("corpus_synthesized", path=manifest_path, entries=len(manifest))
        return datamod.Manifest.load(manifest_path)

    def ensure_spectrograms(self, manifest: datamod.Manifest) -> datamod.Manifest:
        """Compute (or reuse) one .vstn per clip; pure function of params."""
        params = self.config.spectrogram
        spect_dir = os.path.join(self.out, "spectrograms")
        os.makedirs(spect_dir, exist_ok=True)
        target_len = int(round(params.sample_rate * self.config.duration_s))
        entries = []
        fresh = 0
        for e in manifest:
            if e.spectrogram_path and os.path.exists(manifest.resolve(e.spectrogram_path)):
                # manifest already ships tensors; just rebase the path
                rel = os.path.relpath(manifest.resolve(e.spectrogram_path), self.out)
                entries.append(replace(e, spectrogram_path=rel))
                continue
            rel = os.path.join("spectrograms", f"{e.clip_id}.vstn")
            path = os.path.join(self.out, rel)
            if not os.path.exists(path):
                samples, sr = read_wav(manifest.resolve(e.audio_path))
                clip = normalize_clip(samples, sr, e.subject_id, e.label, e.clip_id)
                clip = fit_duration(clip, target_len)
                spec = mel_spectrogram(clip, params)
                persist.write_tensor(path, spec.data)
                fresh += 1
            entries.append(replace(e, spectrogram_path=rel))
        if fresh:
            self.log.append("spectrograms_computed", count=fresh, params=params.to_dict())
        return datamod.Manifest(entries=entries, base_dir=self.out)

    def split_for_seed(self, manifest: datamod.Manifest, seed: int) -> datamod.Manifest:
        seed_dir = os.path.join(self.out, "seeds", str(seed))
        os.makedirs(seed_dir, exist_ok=True)
        path = os.path.join(seed_dir, "split.jsonl")
        if os.path.exists(path):
            return datamod.Manifest.load(path)
        spec = replace(self.config.split, seed=seed)
        split = datamod.split_by_subject(manifest, spec)
        # keep paths resolvable from the seed directory
        rebased = datamod.Manifest(
            entries=[
                replace(
                    e,
                    spectrogram_path=os.path.relpath(manifest.resolve(e.spectrogram_path), seed_dir),
                    audio_path=(
                        os.path.relpath(manifest.resolve(e.audio_path), seed_dir)
                        if e.audio_path
                        else None
                    ),
                )
                for e in split
            ],
            base_dir=seed_dir,
        )
        rebased.save(path)
        self.log.append(
            "split_assigned", seed=seed, path=path,
            sizes={s: len(rebased.by_split(s)) for s in datamod.SPLITS},
        )
        return datamod.Manifest.load(path)

    def augment_for_seed(self, split_manifest: datamod.Manifest, seed: int) -> datamod.Manifest:
        seed_dir = os.path.join(self.out, "seeds", str(seed))
        path = os.path.join(seed_dir, "augmented.jsonl")
        if os.path.exists(path):
            return datamod.Manifest.load(path)
        aug_dir = os.path.join(seed_dir, "augmented")
        os.makedirs(aug_dir, exist_ok=True)
        if self.config.augment_ops is None:
            pipeline = augmod.default_pipeline(seed, self.config.copies_per_sample)
        else:
            pipeline = augmod.AugmentPipeline(
                ops=self.config.augment_ops, seed=seed,
                copies_per_sample=self.config.copies_per_sample,
            )
        entries = list(split_manifest.entries)
        train = split_manifest.by_split(datamod.TRAIN)
        for index, e in enumerate(train):
            data = persist.read_tensor(split_manifest.resolve(e.spectrogram_path))
            spec = MelSpectrogram(
                data=data, params=self.config.spectrogram, source_clip_id=e.clip_id,
                augmented=False, subject_id=e.subject_id, label=e.label,
            )
            for copy_idx, out in enumerate(augmod.apply_pipeline(pipeline, spec, index)):
                aug_id = f"{e.clip_id}_aug{copy_idx}"
                rel = os.path.join("augmented", f"{aug_id}.vstn")
                persist.write_tensor(os.path.join(seed_dir, rel), out.data)
                entries.append(
                    replace(
                        e,
                        clip_id=aug_id,
                        spectrogram_path=rel,
                        audio_path=None,
                        augmented=True,
                        source_clip_id=e.clip_id,
                    )
                )
        augmented = datamod.Manifest(entries=entries, base_dir=seed_dir)
        augmented.save(path)
        self.log.append(
            "augmented", seed=seed, path=path,
            originals=len(train), total_train=len(augmented.by_split(datamod.TRAIN)),
        )
        return datamod.Manifest.load(path)

    # -- phases ---------------------------------------------------------

    def _gate(self, manifest: datamod.Manifest, context: str) -> None:
        report = datamod.check_leakage(manifest)
        if not report.ok:
            self.log.append("leakage_refusal", context=context,
                            violations=[str(v) for v in report.violations])
            raise LeakageRefusal(report.violations)

    def _streams(self, manifest: datamod.Manifest, batch_size: int, seed: int):
        return datamod.SplitStreams(
            train=datamod.BatchStream(manifest, datamod.TRAIN, batch_size, seed),
            val=datamod.BatchStream(manifest, datamod.VAL, batch_size, seed),
        )

    def _checkpoint_path(self, model: str, phase: str, seed: int) -> str:
        """Relative to the output dir so result bundles stay relocatable."""
        os.makedirs(os.path.join(self.out, "checkpoints"), exist_ok=True)
        return os.path.join("checkpoints", f"{model}_{phase.lower()}_s{seed}.vsmc")

    def _evaluate_test(self, graph, manifest: datamod.Manifest, model: str, phase: str, seed: int):
        """Read the test split exactly once, after training, and log it."""
        stream = datamod.BatchStream(manifest, datamod.TEST, 32, seed)
        labels = []
        scores = []
        ids = []
        for x, y, clip_ids in stream.epoch(0):
            probs = graph.forward(x, training=False)
            scores.extend(probs[:, 1].tolist())
            labels.extend(int(v) for v in y)
            ids.extend(clip_ids)
        id_digest = hashlib.sha256("\x00".join(sorted(ids)).encode()).hexdigest()[:16]
        self.log.append(
            "test_read", model=model, phase=phase, seed=seed,
            n=len(ids), test_ids_sha=id_digest,
        )
        report = metmod.evaluate_scores(labels, scores)
        report.meta.update({"model": model, "phase": phase, "seed": seed, "test_ids_sha": id_digest})
        return report

    def _input_shape(self, manifest: datamod.Manifest) -> tuple[int, int, int]:
        e = manifest.entries[0]
        data = persist.read_tensor(manifest.resolve(e.spectrogram_path))
        return (1, data.shape[0], data.shape[1])

    def _save_result(self, result: PhaseResult) -> None:
        res_dir = os.path.join(self.out, "results")
        os.makedirs(res_dir, exist_ok=True)
        path = os.path.join(res_dir, f"{result.model}_{result.phase.lower()}_s{result.seed}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(result.to_dict(), fh, indent=2, sort_keys=True)

    def run_phase1(self, manifest: datamod.Manifest, model: str, seed: int) -> PhaseResult:
        self._gate(manifest, f"phase1/{model}/s{seed}")
        config = replace(self.config.phase1, seed=_derived_seed(seed, model, "P1"))
        graph = model_zoo.build_model(
            model, self._input_shape(manifest), 2, seed=_derived_seed(seed, model, "P1", "init")
        )
        self.log.append("train_start", model=model, phase="P1", seed=seed)
        outcome = train_loop(graph, self._streams(manifest, config.batch_size, config.seed), config)
        self.log.append("train_end", model=model, phase="P1", seed=seed,
                        epochs=outcome.stopped_epoch, best_epoch=outcome.best_epoch)
        ckpt = self._checkpoint_path(model, "P1", seed)
        ckpt_abs = os.path.join(self.out, ckpt)
        persist.save(graph, ckpt_abs, {"phase": "P1", "seed": seed, "model": model})
        self.log.append("checkpoint_saved", model=model, phase="P1", seed=seed,
                        path=ckpt, sha256=persist.file_sha256(ckpt_abs))
        report = self._evaluate_test(graph, manifest, model, "P1", seed)
        result = PhaseResult(model, "P1", seed, report, outcome.history, ckpt)
        self._save_result(result)
        return result

    def run_phase2(self, augmented: datamod.Manifest, model: str, seed: int) -> PhaseResult:
        self._gate(augmented, f"phase2/{model}/s{seed}")
        config = replace(self.config.phase2, seed=_derived_seed(seed, model, "P2"))
        graph = model_zoo.build_model(
            model, self._input_shape(augmented), 2, seed=_derived_seed(seed, model, "P2", "init")
        )
        self.log.append("train_start", model=model, phase="P2", seed=seed)
        outcome = train_loop(graph, self._streams(augmented, config.batch_size, config.seed), config)
        self.log.append("train_end", model=model, phase="P2", seed=seed,
                        epochs=outcome.stopped_epoch, best_epoch=outcome.best_epoch)
        # export the pretrained weights before the test split is ever read
        ckpt = self._checkpoint_path(model, "P2", seed)
        ckpt_abs = os.path.join(self.out, ckpt)
        persist.save(graph, ckpt_abs, {"phase": "P2", "seed": seed, "model": model})
        self.log.append("checkpoint_saved", model=model, phase="P2", seed=seed,
                        path=ckpt, sha256=persist.file_sha256(ckpt_abs))
        report = self._evaluate_test(graph, augmented, model, "P2", seed)
        result = PhaseResult(model, "P2", seed, report, outcome.history, ckpt)
        self._save_result(result)
        return result

    def run_phase3(self, split_manifest: datamod.Manifest, model: str, seed: int) -> PhaseResult:
        source = self._checkpoint_path(model, "P2", seed)
        source_abs = os.path.join(self.out, source)
        if not os.path.exists(source_abs):
            raise MissingCheckpoint(f"phase 3 for {model}/s{seed} needs {source_abs}")
        self._gate(split_manifest, f"phase3/{model}/s{seed}")
        train_config = replace(self.config.phase3, seed=_derived_seed(seed, model, "P3"))
        tconfig = transmod.TransferConfig(
            dense_width=self.config.head["dense_width"],
            dropout_p=self.config.head["dropout_p"],
            l2_lambda=self.config.head["l2_lambda"],
            fine_tune_alpha=train_config.alpha,
            source_checkpoint=source,
            train=train_config,
        )
        fragment, _ = transmod.load_frozen_backbone(source_abs)
        graph = transmod.attach_head(fragment, tconfig, 2)
        self.log.append("train_start", model=model, phase="P3", seed=seed, source=source)
        streams = self._streams(split_manifest, train_config.batch_size, train_config.seed)
        outcome = transmod.fine_tune(graph, streams, tconfig)
        self.log.append("train_end", model=model, phase="P3", seed=seed,
                        epochs=outcome.result.stopped_epoch,
                        best_epoch=outcome.result.best_epoch)
        ckpt = self._checkpoint_path(model, "P3", seed)
        ckpt_abs = os.path.join(self.out, ckpt)
        persist.save(graph, ckpt_abs, {"phase": "P3", "seed": seed, "model": model})
        self.log.append("checkpoint_saved", model=model, phase="P3", seed=seed,
                        path=ckpt, sha256=persist.file_sha256(ckpt_abs))
        report = self._evaluate_test(graph, split_manifest, model, "P3", seed)
        result = PhaseResult(
            model, "P3", seed, report, outcome.result.history, ckpt,
            extras={
                "backbone_hash_before": outcome.backbone_hash_before,
                "backbone_hash_after": outcome.backbone_hash_after,
                "source_checkpoint": source,
            },
        )
        self._save_result(result)
        return result

    def run(self, phases=PHASES, models=None, seeds=None) -> list[PhaseResult]:
        models = list(models or self.config.models)
        seeds = list(seeds or self.config.seeds)
        corpus = self.ensure_corpus()
        with_specs = self.ensure_spectrograms(corpus)
        results = []
        for seed in seeds:
            split_manifest = self.split_for_seed(with_specs, seed)
            augmented = self.augment_for_seed(split_manifest, seed) if "P2" in phases else None
            for model in models:
                if "P1" in phases:
                    results.append(self.run_phase1(split_manifest, model, seed))
                if "P2" in phases:
                    results.append(self.run_phase2(augmented, model, seed))
                if "P3" in phases:
                    results.append(self.run_phase3(split_manifest, model, seed))
        return results

    # -- audits ---------------------------------------------------------

    def audit(self) -> tuple[bool, list[str]]:
        """Verify run-log invariants; returns (ok, failure descriptions)."""
        failures: list[str] = []
        events = self.log.read()

        test_reads: dict[tuple, list[dict]] = {}
        train_ends: dict[tuple, list[int]] = {}
        ckpt_saves: dict[tuple, list[int]] = {}
        for ev in events:
            key = (ev.get("model"), ev.get("phase"), ev.get("seed"))
            if ev["event"] == "test_read":
                test_reads.setdefault(key, []).append(ev)
            elif ev["event"] == "train_end":
                train_ends.setdefault(key, []).append(ev["seq"])
            elif ev["event"] == "checkpoint_saved":
                ckpt_saves.setdefault(key, []).append(ev["seq"])

        for key, reads in sorted(test_reads.items(), key=str):
            if len(reads) != 1:
                failures.append(f"test split read {len(reads)} times for {key}")
                continue
            read_seq = reads[0]["seq"]
            if key not in train_ends or min(train_ends[key]) > read_seq:
                failures.append(f"test read before training finished for {key}")
            if key[1] in ("P2", "P3"):
                if key not in ckpt_saves or min(ckpt_saves[key]) > read_seq:
                    failures.append(f"checkpoint not exported before test read for {key}")

        # phase comparability: all phases of one (model, seed) share the test set
        by_model_seed: dict[tuple, set] = {}
        for key, reads in test_reads.items():
            if len(reads) == 1:
                by_model_seed.setdefault((key[0], key[2]), set()).add(reads[0]["test_ids_sha"])
        for pair, digests in sorted(by_model_seed.items(), key=str):
            if len(digests) > 1:
                failures.append(f"test split differs across phases for {pair}")

        # P3 freezing invariant, from persisted results
        res_dir = os.path.join(self.out, "results")
        if os.path.isdir(res_dir):
            for name in sorted(os.listdir(res_dir)):
                if not name.endswith(".json"):
                    continue
                with open(os.path.join(res_dir, name), "r", encoding="utf-8") as fh:
                    data = json.load(fh)
                extras = data.get("extras", {})
                if data["phase"] == "P3":
                    if extras.get("backbone_hash_before") != extras.get("backbone_hash_after"):
                        failures.append(f"backbone hash changed in {name}")

        self.log.append("audit", ok=not failures, failures=failures)
        return (not failures, failures)


# ---------------------------------------------------------------------------
# reporting


def _median(values: list[float]) -> float:
    return float(np.median(np.asarray(values, dtype=np.float64)))


PHASE_TITLES = {"P1": "Non-Augmented", "P2": "Augmented", "P3": "Transfer Learning"}


def build_bundle(results: list[PhaseResult]) -> dict:
    """Aggregate results into a JSON-serializable bundle (full precision)."""
    runs = [r.to_dict() for r in sorted(results, key=lambda r: (r.model, r.phase, r.seed))]
    summary: dict = {}
    grouped: dict[tuple, list[PhaseResult]] = {}
    for r in results:
        grouped.setdefault((r.model, r.phase), []).append(r)
    for (model, phase), rs in sorted(grouped.items()):
        metrics_by_seed = {
            "accuracy": [r.report.accuracy for r in rs],
            "precision": [r.report.precision for r in rs],
            "recall": [r.report.recall for r in rs],
            "f1": [r.report.f1 for r in rs],
            "auc": [r.report.auc for r in rs],
        }
        aggregated = "median" if len(rs) >= 3 else "raw"
        entry = {
            "aggregation": aggregated,
            "n_seeds": len(rs),
            "seeds": sorted(r.seed for r in rs),
        }
        for name, values in metrics_by_seed.items():
            entry[name] = _median(values) if aggregated == "median" else values[0]
            entry[f"{name}_per_seed"] = values
        summary.setdefault(model, {})[phase] = entry
    return {"runs": runs, "summary": summary}


def render_markdown(bundle: dict) -> str:
    """Deterministic markdown rendering of a bundle (2-decimal metrics)."""
    lines = ["# Experiment report", ""]
    summary = bundle["summary"]
    phases_present = sorted({p for model in summary.values() for p in model})

    for phase in phases_present:
        lines.append(f"## Phase {phase[-1]}: {PHASE_TITLES.get(phase, phase)} — performance")
        lines.append("")
        lines.append("| Model | Accuracy | Precision | Recall | F1-Score |")
        lines.append("|---|---|---|---|---|")
        for model in sorted(summary):
            if phase not in summary[model]:
                continue
            e = summary[model][phase]
            flag = "" if e["aggregation"] == "median" else " (raw, <3 seeds)"
            lines.append(
                f"| {model}{flag} | {e['accuracy']:.2f} | {e['precision']:.2f} "
                f"| {e['recall']:.2f} | {e['f1']:.2f} |"
            )
        lines.append("")
        lines.append(f"### AUC — {PHASE_TITLES.get(phase, phase)}")
        lines.append("")
        lines.append("| Model | AUC |")
        lines.append("|---|---|")
        for model in sorted(summary):
            if phase in summary[model]:
                lines.append(f"| {model} | {summary[model][phase]['auc']:.2f} |")
        lines.append("")

    lines.append("## Comparative performance across phases")
    lines.append("")
    lines.append("| Model | Phase | Accuracy | Precision | Recall | F1-Score |")
    lines.append("|---|---|---|---|---|---|")
    for model in sorted(summary):
        for phase in phases_present:
            if phase not in summary[model]:
                continue
            e = summary[model][phase]
            lines.append(
                f"| {model} | {PHASE_TITLES.get(phase, phase)} | {e['accuracy']:.2f} "
                f"| {e['precision']:.2f} | {e['recall']:.2f} | {e['f1']:.2f} |"
            )
    lines.append("")
    return "\n".join(lines)


def write_report(results: list[PhaseResult], out_dir: str) -> dict:
    """Emit bundle.json, report.md, summary CSV, and per-run ROC CSVs."""
    report_dir = os.path.join(out_dir, "report")
    os.makedirs(report_dir, exist_ok=True)
    bundle = build_bundle(results)

    with open(os.path.join(report_dir, "bundle.json"), "w", encoding="utf-8") as fh:
        json.dump(bundle, fh, indent=2, sort_keys=True)
    with open(os.path.join(report_dir, "report.md"), "w", encoding="utf-8") as fh:
        fh.write(render_markdown(bundle))

    rows = ["model,phase,aggregation,accuracy,precision,recall,f1,auc"]
    for model in sorted(bundle["summary"]):
        for phase in sorted(bundle["summary"][model]):
            e = bundle["summary"][model][phase]
            rows.append(
                f"{model},{phase},{e['aggregation']},{e['accuracy']:.17g},"
                f"{e['precision']:.17g},{e['recall']:.17g},{e['f1']:.17g},{e['auc']:.17g}"
            )
    with open(os.path.join(report_dir, "summary.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")

    for r in results:
        roc_name = f"roc_{r.model}_{r.phase.lower()}_s{r.seed}.csv"
        with open(os.path.join(report_dir, roc_name), "w", encoding="utf-8") as fh:
            fh.write(r.report.roc_csv())
    return bundle
