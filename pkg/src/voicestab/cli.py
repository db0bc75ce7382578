"""Command-line interface.

Verbs: synth, spectrogram, split, augment, train, transfer, evaluate,
report, verify-manifest.  Exit code 0 means the requested work finished
and every invariant audit passed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from . import dataset as datamod
from . import metrics as metmod
from . import model_zoo, persist, transfer as transmod
from .errors import VoicestabError
from .experiment import Experiment, ExperimentConfig, PhaseResult, write_report


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config)
    if getattr(args, "out", None):
        config = replace(config, output_dir=os.path.abspath(args.out))
    if getattr(args, "seed", None) is not None:
        config = replace(config, seeds=(args.seed,))
    return config


def cmd_synth(args) -> int:
    experiment = Experiment(_load_config(args))
    manifest = experiment.ensure_corpus()
    print(f"corpus ready: {len(manifest)} clips under {experiment.out}")
    return 0


def cmd_spectrogram(args) -> int:
    experiment = Experiment(_load_config(args))
    manifest = experiment.ensure_spectrograms(experiment.ensure_corpus())
    print(f"spectrograms ready for {len(manifest)} clips")
    return 0


def cmd_split(args) -> int:
    experiment = Experiment(_load_config(args))
    manifest = experiment.ensure_spectrograms(experiment.ensure_corpus())
    for seed in experiment.config.seeds:
        split = experiment.split_for_seed(manifest, seed)
        sizes = {s: len(split.by_split(s)) for s in datamod.SPLITS}
        report = datamod.check_leakage(split)
        print(f"seed {seed}: {sizes} leakage_ok={report.ok}")
        if not report.ok:
            return 1
    return 0


def cmd_augment(args) -> int:
    experiment = Experiment(_load_config(args))
    manifest = experiment.ensure_spectrograms(experiment.ensure_corpus())
    for seed in experiment.config.seeds:
        split = experiment.split_for_seed(manifest, seed)
        augmented = experiment.augment_for_seed(split, seed)
        report = datamod.check_leakage(augmented)
        print(
            f"seed {seed}: train {len(split.by_split('train'))} -> "
            f"{len(augmented.by_split('train'))} leakage_ok={report.ok}"
        )
        if not report.ok:
            return 1
    return 0


def cmd_train(args) -> int:
    experiment = Experiment(_load_config(args))
    phase = args.phase.upper()
    phases = ("P1", "P2", "P3") if phase == "ALL" else (phase,)
    results = experiment.run(phases=phases)
    write_report(results, experiment.out)
    ok, failures = experiment.audit()
    for r in results:
        print(
            f"{r.model} {r.phase} seed={r.seed}: accuracy={r.report.accuracy:.3f} "
            f"auc={r.report.auc:.3f} epochs={len(r.history)}"
        )
    if not ok:
        for f in failures:
            print(f"AUDIT FAIL: {f}", file=sys.stderr)
        return 1
    print("audit: ok")
    return 0


def cmd_transfer(args) -> int:
    manifest = datamod.Manifest.load(args.manifest)
    config = ExperimentConfig.from_file(args.config)
    report = datamod.check_leakage(manifest)
    if not report.ok:
        for v in report.violations:
            print(f"LEAKAGE: {v}", file=sys.stderr)
        return 1
    train_config = replace(config.phase3, seed=config.seeds[0])
    tconfig = transmod.TransferConfig(
        dense_width=config.head["dense_width"],
        dropout_p=config.head["dropout_p"],
        l2_lambda=config.head["l2_lambda"],
        fine_tune_alpha=train_config.alpha,
        source_checkpoint=args.source,
        train=train_config,
    )
    fragment, _ = transmod.load_frozen_backbone(args.source)
    graph = transmod.attach_head(fragment, tconfig, 2)
    streams = datamod.SplitStreams(
        train=datamod.BatchStream(manifest, datamod.TRAIN, train_config.batch_size, train_config.seed),
        val=datamod.BatchStream(manifest, datamod.VAL, train_config.batch_size, train_config.seed),
    )
    outcome = transmod.fine_tune(graph, streams, tconfig)
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, "fine_tuned.vsmc")
    persist.save(graph, ckpt, {"phase": "P3", "seed": train_config.seed, "source": args.source})
    history_path = os.path.join(out_dir, "fine_tune_history.json")
    with open(history_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "history": outcome.result.history,
                "backbone_hash_before": outcome.backbone_hash_before,
                "backbone_hash_after": outcome.backbone_hash_after,
            },
            fh, indent=2, sort_keys=True,
        )
    print(f"fine-tuned checkpoint: {ckpt}")
    print(f"history: {history_path}")
    return 0


def cmd_evaluate(args) -> int:
    manifest = datamod.Manifest.load(args.manifest)
    graph, metadata = persist.load(args.checkpoint)
    stream = datamod.BatchStream(manifest, args.split, 32, seed=0)
    labels, scores = [], []
    for x, y, _ in stream.epoch(0):
        probs = graph.forward(x, training=False)
        scores.extend(probs[:, 1].tolist())
        labels.extend(int(v) for v in y)
    report = metmod.evaluate_scores(labels, scores)
    report.meta.update({"checkpoint": args.checkpoint, "split": args.split, "phase": metadata.get("phase")})
    text = report.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text)
    return 0


def cmd_report(args) -> int:
    config = _load_config(args)
    res_dir = os.path.join(config.output_dir, "results")
    if not os.path.isdir(res_dir):
        print(f"no results under {res_dir}", file=sys.stderr)
        return 1
    results = []
    for name in sorted(os.listdir(res_dir)):
        if name.endswith(".json"):
            with open(os.path.join(res_dir, name), "r", encoding="utf-8") as fh:
                results.append(PhaseResult.from_dict(json.load(fh)))
    write_report(results, config.output_dir)
    print(f"report written under {os.path.join(config.output_dir, 'report')}")
    return 0


def cmd_verify_manifest(args) -> int:
    manifest = datamod.Manifest.load(args.manifest)
    report = datamod.check_leakage(manifest)
    print(f"entries: {len(manifest)}")
    for v in report.violations:
        print(f"violation: {v}")
    print(f"ok: {report.ok}")
    return 0 if report.ok else 1


def cmd_describe(args) -> int:
    graph = model_zoo.build_model(args.model, (1, args.n_mels, args.n_frames), 2)
    print(model_zoo.describe_text(graph))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voicestab",
        description="Voice-spectrogram stability classification pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p, seed=True, out=True):
        p.add_argument("--config", required=True, help="experiment config (YAML)")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="restrict to one seed")
        if out:
            p.add_argument("--out", default=None, help="override output_dir")

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    with_config(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("spectrogram", help="compute spectrogram tensors")
    with_config(p)
    p.set_defaults(func=cmd_spectrogram)

    p = sub.add_parser("split", help="assign subject-independent splits")
    with_config(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("augment", help="augment the training split")
    with_config(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="run experiment phases")
    with_config(p)
    p.add_argument("--phase", default="all", choices=["P1", "P2", "P3", "all", "p1", "p2", "p3"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="fine-tune from a phase-2 checkpoint")
    p.add_argument("--source", required=True, help="phase-2 checkpoint (.vsmc)")
    p.add_argument("--manifest", required=True, help="non-augmented split manifest (JSONL)")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=list(datamod.SPLITS))
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="rebuild the report from saved results")
    with_config(p, seed=False)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify-manifest", help="leakage-audit a manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_verify_manifest)

    p = sub.add_parser("describe", help="print a model summary")
    p.add_argument("--model", required=True, choices=list(model_zoo.MODEL_NAMES))
    p.add_argument("--n-mels", type=int, default=128)
    p.add_argument("--n-frames", type=int, default=188)
    p.set_defaults(func=cmd_describe)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VoicestabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
