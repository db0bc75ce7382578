"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Criteria C1-C9 and C11 are oracle/property checks at fixed tolerances.
C10 is the end-to-end directional check on the synthetic corpus
(12 subjects x 10 clips, three model families, three seeds, three
phases); its artifacts also back the C7 freezing audit.  The directional
gate is median Phase-3 accuracy >= 0.90 with AUC >= 0.95 and
Phase 3 >= Phase 1; Phase 3 vs Phase 2 is reported but not gated.
"""

import hashlib
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

import voicestab
from voicestab import metrics as metmod
from voicestab import model_zoo, persist
from voicestab import transfer as transmod
from voicestab.audio_dsp import Label, SpectrogramParams, mel_spectrogram, normalize_clip
from voicestab.dataset import Manifest, ManifestEntry, SplitSpec, check_leakage, split_by_subject
from voicestab.errors import CorruptCheckpoint, LeakageRefusal
from voicestab.experiment import Experiment, ExperimentConfig, write_report
from voicestab.nn import AdamState, Conv2D, Ctx, Dense, MaxPool2D, TrainConfig, TrainController, adam_step
from voicestab.nn.gradcheck import check_gradients
from voicestab.nn.graph import INPUT

from oracles import naive_conv2d, naive_dense, naive_dft_magnitude, naive_maxpool, pair_count_auc
from test_tensor_nn import ALL_KINDS, well_conditioned_micro_graph


def announce(criterion: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    line = f"[ACCEPT] {criterion}: {status}"
    if detail:
        line += f"  ({detail})"
    print(line, file=sys.__stdout__, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# shared end-to-end run (C7 and C10)

E2E_CONFIG = {
    "synth": {"seed": 7, "n_subjects": 12, "clips_per_subject": 10,
              "sample_rate": 48000, "duration_s": 2.0},
    "models": ["mini-vgg", "mini-inception", "mini-dense"],
    "seeds": [101, 102, 103],
    # desk-scale overrides: smaller mel grid and a larger learning rate so
    # the full 27-run protocol finishes in minutes; defaults stay canonical
    "spectrogram": {"n_mels": 48, "hop": 1536},
    "augment": {"copies_per_sample": 3},
    "phase1": {"batch_size": 16, "alpha": 1.0e-3, "max_epochs": 12, "early_stop_patience": 4},
    "phase2": {"batch_size": 32, "alpha": 1.0e-3, "max_epochs": 12, "early_stop_patience": 4},
    "phase3": {"batch_size": 16, "alpha": 1.0e-3, "max_epochs": 15, "early_stop_patience": 5,
               "early_stop_metric": "val_accuracy"},
}


@pytest.fixture(scope="session")
def e2e_run(tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("acceptance_e2e")
    raw = json.loads(json.dumps(E2E_CONFIG))
    raw["output_dir"] = str(out_dir)
    config = ExperimentConfig.from_dict(raw)
    experiment = Experiment(config)
    started = time.monotonic()
    results = experiment.run()
    elapsed = time.monotonic() - started
    write_report(results, experiment.out)
    return experiment, results, elapsed


def test_c01_gradient_oracle():
    started = time.monotonic()
    worst = {}
    for kind in ALL_KINDS:
        graph, x, labels = well_conditioned_micro_graph(kind)
        worst[kind] = check_gradients(graph, x, labels, n_coords=100, h=1e-5,
                                      coord_rng=np.random.default_rng(0))
    elapsed = time.monotonic() - started
    bad = {k: v for k, v in worst.items() if v >= 1e-4}
    announce(
        "C1 gradient oracle (all layer kinds, 100 coords, h=1e-5)",
        not bad and elapsed < 120.0,
        f"max rel err {max(worst.values()):.2e}, {elapsed:.1f}s",
    )


def test_c02_kernel_oracles():
    rng = np.random.default_rng(2024)
    eval_ctx = Ctx(training=False)
    failures = []

    for _ in range(50):
        cin, f, k = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 3))
        h = int(rng.integers(k, k + 5))
        w = int(rng.integers(k, k + 5))
        x = rng.standard_normal((int(rng.integers(1, 3)), cin, h, w))
        conv = Conv2D("c", [INPUT], cin, f, k, stride=stride, padding=padding)
        conv.init_params(rng, np.float64)
        want = naive_conv2d(x, conv.params["weight"].value, conv.params["bias"].value, stride, padding)
        if not np.allclose(conv.forward([x], eval_ctx), want, atol=1e-6):
            failures.append("conv2d")

    for _ in range(50):
        k = int(rng.integers(2, 4))
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, min(2, k)))
        h = int(rng.integers(k + 1, k + 6))
        w = int(rng.integers(k + 1, k + 6))
        x = rng.standard_normal((2, int(rng.integers(1, 3)), h, w))
        pool = MaxPool2D("p", [INPUT], kernel_size=k, stride=stride, padding=padding)
        if not np.allclose(pool.forward([x], eval_ctx), naive_maxpool(x, k, stride, padding), atol=1e-6):
            failures.append("maxpool")

    for _ in range(50):
        fin, fout = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        x = rng.standard_normal((int(rng.integers(1, 5)), fin))
        dense = Dense("d", [INPUT], fin, fout)
        dense.init_params(rng, np.float64)
        want = naive_dense(x, dense.params["weight"].value, dense.params["bias"].value)
        if not np.allclose(dense.forward([x], eval_ctx), want, atol=1e-6):
            failures.append("dense")

    from voicestab.audio_dsp import _window, frame_signal

    for n_fft in (32, 64, 128, 256):
        for window in ("hann", "rectangular"):
            params = SpectrogramParams(
                sample_rate=48000, n_fft=n_fft, hop=n_fft, n_mels=4,
                window=window, center_pad=False,
            )
            signal = rng.standard_normal(n_fft * 2)
            clip = normalize_clip(signal, 48000, "s", Label.STABLE, "c")
            mag = voicestab.stft_magnitude(clip, params)
            frames = frame_signal(clip.samples, params)
            for t in range(frames.shape[0]):
                want = naive_dft_magnitude(frames[t], _window(params), n_fft)
                got = mag[:, t]
                if not np.allclose(got, want, rtol=1e-6, atol=1e-9):
                    failures.append(f"stft_{n_fft}")

    announce("C2 kernel oracles (conv/pool/dense x50, STFT vs direct DFT)", not failures,
             f"failures={failures or 'none'}")


def test_c03_spectrogram_contract():
    params = SpectrogramParams()
    rng = np.random.default_rng(31)
    ok_shape = ok_range = ok_gain = True
    for i in range(20):
        samples = rng.standard_normal(96000) * rng.uniform(0.05, 0.9)
        clip = normalize_clip(samples, 48000, "s", Label.STABLE, f"c{i}")
        spec = mel_spectrogram(clip, params)
        ok_shape &= spec.data.shape == (128, 188)
        ok_range &= 0.0 <= float(spec.data.min()) and float(spec.data.max()) <= 1.0
        c = float(rng.uniform(0.1, 9.0))
        scaled = replace(clip, samples=clip.samples * c)
        ok_gain &= bool(np.allclose(spec.data, mel_spectrogram(scaled, params).data, atol=2e-5))
    announce("C3 spectrogram contract (128x188, [0,1], gain invariance x20)",
             ok_shape and ok_range and ok_gain,
             f"shape={ok_shape} range={ok_range} gain={ok_gain}")


def test_c04_adam_first_step_and_trace():
    alpha, eps = 1e-4, 1e-7
    theta = np.zeros(8, dtype=np.float64)
    adam_step(AdamState(alpha=alpha, epsilon=eps), {"w": theta}, {"w": np.ones(8)})
    first_ok = bool(np.all(np.abs(theta - (-alpha / (1.0 + eps))) < 1e-9))

    import math

    grads = [0.7, -0.2, 1.3]
    m = v = 0.0
    oracle = 0.25
    for t, g in enumerate(grads, 1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        oracle -= alpha * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + eps)
    theta = np.array([0.25])
    state = AdamState(alpha=alpha, epsilon=eps)
    for g in grads:
        adam_step(state, {"w": theta}, {"w": np.array([g])})
    trace_ok = abs(float(theta[0]) - oracle) < 1e-12
    announce("C4 Adam first step and 3-step scalar trace", first_ok and trace_ok,
             f"first={first_ok} trace={trace_ok}")


def test_c05_auc_equivalence():
    rng = np.random.default_rng(55)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(4, 1001))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        decimals = int(rng.integers(1, 5))
        s = np.round(rng.uniform(0, 1, n), decimals)
        trap = metmod.auc(metmod.roc_curve(y, s))
        worst = max(worst, abs(trap - pair_count_auc(y, s)))
    perfect = metmod.auc(metmod.roc_curve([1, 1, 0, 0], [0.9, 0.8, 0.2, 0.1]))
    uniform = metmod.auc(metmod.roc_curve([1, 0, 1, 0], [0.4, 0.4, 0.4, 0.4]))
    announce("C5 AUC trapezoid == pair statistic (200 cases, <=1000 samples)",
             worst < 1e-12 and perfect == 1.0 and uniform == 0.5,
             f"max |diff|={worst:.2e}, perfect={perfect}, uniform={uniform}")


def _random_corpus(rng, trial):
    entries = []
    n_subjects = int(rng.integers(3, 25))
    for s in range(n_subjects):
        label = Label.STABLE if rng.random() < 0.5 else Label.UNSTABLE
        for c in range(int(rng.integers(1, 9))):
            entries.append(
                ManifestEntry(f"r{trial}s{s}c{c}", f"r{trial}s{s}", label)
            )
    return Manifest(entries=entries)


def test_c06_leakage_suite(tmp_path):
    rng = np.random.default_rng(66)
    clean = 0
    for trial in range(500):
        manifest = _random_corpus(rng, trial)
        try:
            out = split_by_subject(manifest, SplitSpec(seed=trial))
        except voicestab.errors.UnsatisfiableSplit:
            continue
        if not check_leakage(out).ok:
            announce("C6 leakage suite", False, f"clean split flagged at trial {trial}")
        clean += 1

    base = split_by_subject(
        Manifest(entries=[
            ManifestEntry(f"s{s}c{c}", f"s{s}", Label.STABLE if s % 2 else Label.UNSTABLE)
            for s in range(8) for c in range(4)
        ]),
        SplitSpec(seed=1),
    )
    # planted fault (a): one clip of a train subject strays into val
    fault_a = Manifest(entries=list(base.entries))
    victim = fault_a.by_split("train")[0]
    fault_a.entries[fault_a.entries.index(victim)] = replace(victim, split="val")
    found_a = any(v.kind == "subject_overlap" for v in check_leakage(fault_a).violations)

    # planted fault (b): augmented entry in the test split
    fault_b = Manifest(entries=list(base.entries))
    src = fault_b.by_split("train")[0]
    fault_b.entries.append(replace(src, clip_id="aug_b", augmented=True,
                                   source_clip_id=src.clip_id, split="test"))
    found_b = any(v.kind == "augmented_outside_train" for v in check_leakage(fault_b).violations)

    # planted fault (c): augmented entry whose source lives in val
    fault_c = Manifest(entries=list(base.entries))
    src = fault_c.by_split("val")[0]
    fault_c.entries.append(replace(src, clip_id="aug_c", augmented=True,
                                   source_clip_id=src.clip_id, split="train"))
    found_c = any(v.kind == "augmented_source_not_train" for v in check_leakage(fault_c).violations)

    # runners refuse dirty manifests
    refused = 0
    config = ExperimentConfig.from_dict(
        {"output_dir": str(tmp_path / "refuse"), "synth": {}}, config_dir=str(tmp_path)
    )
    experiment = Experiment(config)
    for dirty in (fault_a, fault_b, fault_c):
        try:
            experiment.run_phase1(dirty, "mini-vgg", 0)
        except LeakageRefusal:
            refused += 1
    announce(
        "C6 leakage suite (500 corpora, 3 planted faults, runner refusal)",
        clean >= 400 and found_a and found_b and found_c and refused == 3,
        f"clean={clean}/500 faults=({found_a},{found_b},{found_c}) refusals={refused}/3",
    )


def test_c07_freezing(e2e_run):
    experiment, results, _ = e2e_run
    p3 = [r for r in results if r.phase == "P3"]
    hash_ok = all(
        r.extras["backbone_hash_before"] == r.extras["backbone_hash_after"] for r in p3
    )
    byte_ok = True
    for r in p3:
        source_graph, _ = persist.load(os.path.join(experiment.out, r.extras["source_checkpoint"]))
        tuned_graph, _ = persist.load(os.path.join(experiment.out, r.checkpoint_path))
        fragment_names = [
            layer.name for layer in tuned_graph.layers if not layer.name.startswith("head_")
        ]
        src_tensors = source_graph.named_tensors()
        tuned_tensors = tuned_graph.named_tensors()
        for name, arr in tuned_tensors.items():
            if name.split(".")[0] in fragment_names:
                byte_ok &= bool(np.array_equal(arr, src_tensors[name]))
    announce("C7 backbone freezing (hash + byte equality, 3 families x 3 seeds)",
             hash_ok and byte_ok and len(p3) == 9,
             f"p3_runs={len(p3)} hash={hash_ok} bytes={byte_ok}")


DET_CONFIG = {
    "synth": {"seed": 3, "n_subjects": 12, "clips_per_subject": 2,
              "sample_rate": 8000, "duration_s": 2.0},
    "models": ["mini-vgg"],
    "seeds": [5],
    "spectrogram": {"sample_rate": 8000, "n_fft": 512, "hop": 250, "n_mels": 32, "f_max": 4000},
    "augment": {"copies_per_sample": 2},
    "phase1": {"batch_size": 4, "alpha": 1.0e-3, "max_epochs": 3, "early_stop_patience": 3},
    "phase2": {"batch_size": 8, "alpha": 1.0e-3, "max_epochs": 3, "early_stop_patience": 3},
    "phase3": {"batch_size": 4, "alpha": 1.0e-3, "max_epochs": 3, "early_stop_patience": 3},
}


def _full_run(out_dir):
    raw = json.loads(json.dumps(DET_CONFIG))
    raw["output_dir"] = str(out_dir)
    experiment = Experiment(ExperimentConfig.from_dict(raw))
    results = experiment.run()
    write_report(results, experiment.out)
    return experiment, results


def _hash_tree(root, suffix):
    digests = {}
    for dirpath, _, files in os.walk(root):
        for name in sorted(files):
            if name.endswith(suffix):
                rel = os.path.relpath(os.path.join(dirpath, name), root)
                digests[rel] = hashlib.sha256(open(os.path.join(dirpath, name), "rb").read()).hexdigest()
    return digests


def test_c08_determinism(tmp_path):
    exp_a, res_a = _full_run(tmp_path / "runA")
    exp_b, res_b = _full_run(tmp_path / "runB")

    specs_equal = _hash_tree(exp_a.out, ".vstn") == _hash_tree(exp_b.out, ".vstn")
    histories_a = [r.history for r in res_a]
    histories_b = [r.history for r in res_b]
    histories_equal = histories_a == histories_b
    orders_equal = all(
        [rec["batch_digest"] for rec in ha] == [rec["batch_digest"] for rec in hb]
        for ha, hb in zip(histories_a, histories_b)
    )
    report_equal = True
    for name in ("bundle.json", "report.md", "summary.csv"):
        a = open(os.path.join(exp_a.out, "report", name), "rb").read()
        b = open(os.path.join(exp_b.out, "report", name), "rb").read()
        report_equal &= a == b
    announce(
        "C8 determinism (two full runs: spectrograms, batch orders, histories, reports)",
        specs_equal and histories_equal and orders_equal and report_equal,
        f"specs={specs_equal} histories={histories_equal} orders={orders_equal} reports={report_equal}",
    )


def test_c09_persistence(tmp_path):
    graph = model_zoo.build_mini_inception((1, 48, 63), 2, seed=77)
    path = tmp_path / "model.vsmc"
    persist.save(graph, path, {"phase": "P2", "seed": 77})
    loaded, _ = persist.load(path)
    rng = np.random.default_rng(7)
    pred_ok = all(
        np.array_equal(
            graph.forward(x := rng.standard_normal((2, 1, 48, 63)).astype(np.float32)),
            loaded.forward(x),
        )
        for _ in range(10)
    )

    blob = bytearray(path.read_bytes())
    blob[-50] ^= 0x01
    corrupt_path = tmp_path / "corrupt.vsmc"
    corrupt_path.write_bytes(bytes(blob))
    try:
        persist.load(corrupt_path)
        reject_ok = False
    except CorruptCheckpoint:
        reject_ok = True

    probe = persist.probe_input(graph.input_shape)
    graph.forward(probe, keep_activations=True)
    want = graph.activation(graph.cut_point).copy()
    fragment, _ = transmod.load_frozen_backbone(path)
    probe_ok = bool(np.array_equal(fragment.forward(probe), want))

    announce("C9 persistence (round-trip, corruption rejection, probe fidelity)",
             pred_ok and reject_ok and probe_ok,
             f"pred={pred_ok} reject={reject_ok} probe={probe_ok}")


def test_c10_end_to_end_directional(e2e_run):
    _, results, elapsed = e2e_run
    summary = {}
    for r in results:
        summary.setdefault((r.model, r.phase), []).append(r)
    ok = True
    details = []
    for model in E2E_CONFIG["models"]:
        acc = {
            phase: float(np.median([r.report.accuracy for r in summary[(model, phase)]]))
            for phase in ("P1", "P2", "P3")
        }
        auc_p3 = float(np.median([r.report.auc for r in summary[(model, "P3")]]))
        gate = acc["P3"] >= acc["P1"] and acc["P3"] >= 0.90 and auc_p3 >= 0.95
        ok &= gate
        # Phase 3 vs Phase 2 is informational only
        details.append(
            f"{model}: P1={acc['P1']:.2f} P2={acc['P2']:.2f} P3={acc['P3']:.2f} "
            f"AUC3={auc_p3:.2f} P3>=P2={acc['P3'] >= acc['P2']}"
        )
    runtime_ok = elapsed <= 45 * 60
    announce(
        "C10 end-to-end directional (P3 >= P1, P3 acc >= 0.90, AUC >= 0.95, 3-seed medians)",
        ok and runtime_ok,
        "; ".join(details) + f"; runtime={elapsed / 60:.1f}min",
    )


def test_c11_callback_schedules():
    # early stop: single improvement at epoch 1, patience 10 -> stop at 11
    controller = TrainController(TrainConfig(early_stop_patience=10))
    stop_epoch = None
    for epoch in range(1, 40):
        if controller.observe(epoch, 1.0 if epoch == 1 else 2.0, 0.5).stop:
            stop_epoch = epoch
            break
    stop_ok = stop_epoch == 11

    # plateau: improving epochs 1-4, flat after; patience 5 -> cuts at 9, 14, 19
    config = TrainConfig(alpha=1e-3, plateau_factor=0.5, plateau_patience=5,
                         min_alpha=1e-7, early_stop_patience=100)
    controller = TrainController(config)
    reductions = []
    for epoch in range(1, 22):
        loss = 1.0 - 0.1 * epoch if epoch <= 4 else 0.6
        if controller.observe(epoch, loss, 0.0).reduced:
            reductions.append(epoch)
    plateau_ok = reductions == [9, 14, 19] and controller.alpha == pytest.approx(1e-3 * 0.125)

    # floor: alpha never drops below min_alpha
    config = TrainConfig(alpha=2e-7, plateau_factor=0.5, plateau_patience=1,
                         min_alpha=1e-7, early_stop_patience=100)
    controller = TrainController(config)
    for epoch in range(1, 10):
        controller.observe(epoch, 1.0, 0.0)
    floor_ok = controller.alpha == 1e-7

    # accuracy-mode stopping: improvements at 1 and 3, patience 10 -> stop at 13
    controller = TrainController(TrainConfig(early_stop_patience=10, early_stop_metric="val_accuracy"))
    accs = {1: 0.6, 3: 0.7}
    stop_acc = None
    for epoch in range(1, 30):
        if controller.observe(epoch, 1.0, accs.get(epoch, 0.5)).stop:
            stop_acc = epoch
            break
    acc_ok = stop_acc == 13

    announce("C11 callback schedules (early stop at 1+10, plateau cuts, LR floor)",
             stop_ok and plateau_ok and floor_ok and acc_ok,
             f"stop={stop_epoch} cuts={reductions} floor={floor_ok} accstop={stop_acc}")
