"""Engine tests: naive-loop kernel oracles, finite differences, callbacks."""

import math
import zlib
from types import SimpleNamespace

import numpy as np
import pytest

from voicestab.errors import (
    BatchTooSmall,
    InvalidParam,
    LabelError,
    NumericalError,
    ShapeError,
)
from voicestab.nn import (
    AdamState,
    BatchNorm,
    Concat,
    Conv2D,
    Ctx,
    Dense,
    Dropout,
    Flatten,
    GlobalAvgPool,
    MaxPool2D,
    ModelGraph,
    ReLU,
    Softmax,
    TrainConfig,
    TrainController,
    adam_step,
    cross_entropy,
    cross_entropy_grad,
    one_hot,
    softmax,
    train_loop,
)
from voicestab.nn.gradcheck import check_gradients
from voicestab.nn.graph import INPUT

from oracles import naive_conv2d, naive_dense, naive_maxpool

EVAL = Ctx(training=False)


# ---------------------------------------------------------------------------
# kernel forward oracles


class TestConvForward:
    def test_identity_kernel(self):
        layer = Conv2D("c", [INPUT], 1, 1, 1)
        layer.init_params(np.random.default_rng(0), np.float64)
        layer.params["weight"].value[:] = 1.0
        layer.params["bias"].value[:] = 0.0
        x = np.random.default_rng(1).standard_normal((2, 1, 4, 5))
        assert np.allclose(layer.forward([x], EVAL), x)

    def test_bias_passthrough_on_zero_input(self):
        layer = Conv2D("c", [INPUT], 2, 3, 3, padding=1)
        layer.init_params(np.random.default_rng(0), np.float64)
        layer.params["bias"].value[:] = [1.0, -2.0, 0.5]
        out = layer.forward([np.zeros((1, 2, 6, 6))], EVAL)
        for fi, bias in enumerate([1.0, -2.0, 0.5]):
            assert np.all(out[0, fi] == bias)

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(42)
        x = rng.standard_normal((1, 2, 5, 5))
        layer = Conv2D("c", [INPUT], 2, 3, 3, stride=1, padding=0)
        layer.init_params(rng, np.float64)
        w = layer.params["weight"].value
        b = layer.params["bias"].value
        assert np.allclose(layer.forward([x], EVAL), naive_conv2d(x, w, b, 1, 0), atol=1e-6)

    def test_random_shapes_match_naive(self):
        rng = np.random.default_rng(7)
        for _ in range(12):
            bsz = int(rng.integers(1, 3))
            cin = int(rng.integers(1, 4))
            f = int(rng.integers(1, 4))
            k = int(rng.integers(1, 4))
            stride = int(rng.integers(1, 3))
            padding = int(rng.integers(0, 3))
            h = int(rng.integers(k, k + 5))
            w = int(rng.integers(k, k + 5))
            x = rng.standard_normal((bsz, cin, h, w))
            layer = Conv2D("c", [INPUT], cin, f, k, stride=stride, padding=padding)
            layer.init_params(rng, np.float64)
            got = layer.forward([x], EVAL)
            want = naive_conv2d(x, layer.params["weight"].value, layer.params["bias"].value, stride, padding)
            assert got.shape == want.shape
            assert np.allclose(got, want, atol=1e-6)

    def test_shape_error(self):
        layer = Conv2D("c", [INPUT], 2, 3, 3)
        layer.init_params(np.random.default_rng(0), np.float64)
        with pytest.raises(ShapeError):
            layer.forward([np.zeros((1, 5, 4, 4))], EVAL)


class TestMaxPoolForward:
    def test_matches_naive(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            k = int(rng.integers(2, 4))
            stride = int(rng.integers(1, 3))
            padding = int(rng.integers(0, min(2, k)))
            h = int(rng.integers(k + 1, k + 6))
            w = int(rng.integers(k + 1, k + 6))
            x = rng.standard_normal((2, 2, h, w))
            layer = MaxPool2D("p", [INPUT], kernel_size=k, stride=stride, padding=padding)
            got = layer.forward([x], EVAL)
            assert np.allclose(got, naive_maxpool(x, k, stride, padding))


class TestDenseForward:
    def test_matches_naive(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            fin = int(rng.integers(1, 8))
            fout = int(rng.integers(1, 8))
            x = rng.standard_normal((3, fin))
            layer = Dense("d", [INPUT], fin, fout)
            layer.init_params(rng, np.float64)
            got = layer.forward([x], EVAL)
            want = naive_dense(x, layer.params["weight"].value, layer.params["bias"].value)
            assert np.allclose(got, want, atol=1e-9)


class TestSoftmaxAndLoss:
    def test_uniform_logits(self):
        assert np.allclose(softmax(np.zeros((1, 2))), [[0.5, 0.5]])

    def test_large_logits_no_overflow(self):
        out = softmax(np.array([[1000.0, 0.0]]))
        assert np.all(np.isfinite(out))
        assert out[0, 0] == pytest.approx(1.0)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        out = softmax(rng.standard_normal((50, 7)) * 20)
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)

    def test_perfect_prediction_zero_loss(self):
        probs = np.array([[1.0, 0.0], [0.0, 1.0]])
        labels = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert cross_entropy(probs, labels) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_prediction_ln_c(self):
        for c in (2, 5):
            probs = np.full((4, c), 1.0 / c)
            labels = one_hot(np.zeros(4, dtype=int), c)
            assert cross_entropy(probs, labels) == pytest.approx(math.log(c), abs=1e-12)

    def test_l2_adds_exact_penalty(self):
        layer = Dense("d", [INPUT], 3, 2, l2=0.01)
        layer.init_params(np.random.default_rng(0), np.float64)
        w = layer.params["weight"].value
        probs = np.array([[0.5, 0.5]])
        labels = np.array([[1.0, 0.0]])
        base = cross_entropy(probs, labels)
        with_l2 = cross_entropy(probs, labels, [(0.01, w)])
        assert with_l2 - base == pytest.approx(0.01 * float(np.sum(w**2)), rel=1e-12)

    def test_non_onehot_rejected(self):
        with pytest.raises(LabelError):
            cross_entropy(np.array([[0.5, 0.5]]), np.array([[0.5, 0.5]]))

    def test_softmax_ce_gradient_identity(self):
        # through the softmax layer, d(loss)/d(logits) == (p - y) / B
        rng = np.random.default_rng(9)
        z = rng.standard_normal((6, 3))
        labels = one_hot(rng.integers(0, 3, 6), 3)
        layer = Softmax("s", [INPUT])
        probs = layer.forward([z], EVAL)
        dlogits = layer.backward(cross_entropy_grad(probs, labels))[0]
        assert np.allclose(dlogits, (probs - labels) / 6, atol=1e-12)


# ---------------------------------------------------------------------------
# Adam


class TestAdam:
    def test_first_step_unit_gradient(self):
        theta = np.zeros(4, dtype=np.float64)
        state = AdamState(alpha=0.0001)
        adam_step(state, {"w": theta}, {"w": np.ones(4)})
        assert np.allclose(theta, -0.0001 / (1.0 + 1e-7), atol=1e-9 * 0.0001)

    def test_zero_gradient_no_change(self):
        theta = np.full(3, 2.5)
        adam_step(AdamState(alpha=0.1), {"w": theta}, {"w": np.zeros(3)})
        assert np.all(theta == 2.5)

    def test_three_step_scalar_recurrence(self):
        # independent plain-Python recurrence, same three scripted gradients
        alpha, b1, b2, eps = 0.01, 0.9, 0.999, 1e-7
        grads = [0.3, -1.2, 0.45]
        theta_oracle = 0.7
        m = v = 0.0
        for t, g in enumerate(grads, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            theta_oracle -= alpha * m_hat / (math.sqrt(v_hat) + eps)

        theta = np.array([0.7])
        state = AdamState(alpha=alpha, epsilon=eps)
        for g in grads:
            adam_step(state, {"w": theta}, {"w": np.array([g])})
        assert abs(float(theta[0]) - theta_oracle) < 1e-12

    def test_nonfinite_gradient_rejected(self):
        with pytest.raises(NumericalError):
            adam_step(AdamState(), {"w": np.zeros(1)}, {"w": np.array([np.nan])})

    def test_moments_lazy_per_param(self):
        state = AdamState()
        adam_step(state, {"a": np.zeros(2)}, {"a": np.ones(2)})
        assert set(state.m) == {"a"}


# ---------------------------------------------------------------------------
# dropout and batch norm


class TestDropout:
    def test_p_zero_identity(self):
        layer = Dropout("dr", [INPUT], 0.0)
        x = np.random.default_rng(0).standard_normal((4, 5))
        assert np.array_equal(layer.forward([x], Ctx(training=True)), x)

    def test_inference_identity(self):
        layer = Dropout("dr", [INPUT], 0.7)
        x = np.random.default_rng(0).standard_normal((4, 5))
        assert np.array_equal(layer.forward([x], EVAL), x)

    def test_expectation_preserved(self):
        layer = Dropout("dr", [INPUT], 0.4)
        x = np.ones((1, 200))
        acc = 0.0
        n = 10_000 // 200
        for step in range(50):
            acc += layer.forward([x], Ctx(training=True, seed=123, step=step)).mean()
        assert acc / 50 == pytest.approx(1.0, abs=0.02)

    def test_p_one_rejected(self):
        with pytest.raises(InvalidParam):
            Dropout("dr", [INPUT], 1.0)

    def test_mask_fixed_per_step(self):
        layer = Dropout("dr", [INPUT], 0.5)
        x = np.random.default_rng(1).standard_normal((3, 8))
        a = layer.forward([x], Ctx(training=True, seed=9, step=4))
        b = layer.forward([x], Ctx(training=True, seed=9, step=4))
        assert np.array_equal(a, b)


class TestBatchNorm:
    def _layer(self, n, dtype=np.float64):
        layer = BatchNorm("bn", [INPUT], n)
        layer.init_params(np.random.default_rng(0), dtype)
        return layer

    def test_standardizes_4d(self):
        layer = self._layer(3)
        x = np.random.default_rng(2).standard_normal((8, 3, 4, 4)) * 3 + 1
        y = layer.forward([x], Ctx(training=True))
        assert np.allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
        assert np.allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-2)

    def test_affine_contract(self):
        layer = self._layer(2)
        layer.params["gamma"].value[:] = 2.0
        layer.params["beta"].value[:] = 3.0
        x = np.random.default_rng(3).standard_normal((16, 2))
        y = layer.forward([x], Ctx(training=True))
        base = self._layer(2).forward([x], Ctx(training=True))
        assert np.allclose(y, 2.0 * base + 3.0, atol=1e-10)

    def test_inference_matches_training_when_stats_equal(self):
        layer = self._layer(2)
        x = np.random.default_rng(4).standard_normal((32, 2))
        layer.buffers["running_mean"] = x.mean(axis=0)
        layer.buffers["running_var"] = x.var(axis=0)
        eval_out = layer.forward([x], EVAL)
        train_out = self._layer(2).forward([x], Ctx(training=True))
        assert np.allclose(eval_out, train_out, atol=1e-10)

    def test_batch_of_one_rejected(self):
        layer = self._layer(2)
        with pytest.raises(BatchTooSmall):
            layer.forward([np.zeros((1, 2))], Ctx(training=True))

    def test_frozen_bn_ignores_training_mode(self):
        layer = self._layer(2)
        layer.trainable = False
        x = np.random.default_rng(5).standard_normal((8, 2))
        before = dict(layer.buffers)
        out_train = layer.forward([x], Ctx(training=True))
        out_eval = layer.forward([x], EVAL)
        assert np.array_equal(out_train, out_eval)
        assert np.array_equal(before["running_mean"], layer.buffers["running_mean"])


# ---------------------------------------------------------------------------
# gradient checks, one micro-network per layer kind


def micro_graph(kind: str, data_seed: int = 0) -> tuple[ModelGraph, np.ndarray, np.ndarray]:
    rng = np.random.default_rng((zlib.crc32(kind.encode()), data_seed))
    if kind in ("conv2d", "relu", "flatten"):
        layers = [
            Conv2D("conv", [INPUT], 2, 3, 3, padding=1, l2=0.001),
            ReLU("relu", ["conv"]),
            Flatten("flat", ["relu"]),
            Dense("out", ["flat"], 3 * 6 * 5, 2),
            Softmax("probs", ["out"]),
        ]
        x = rng.standard_normal((3, 2, 6, 5))
    elif kind == "maxpool2d":
        layers = [
            Conv2D("conv", [INPUT], 1, 2, 3, padding=1),
            MaxPool2D("pool", ["conv"], kernel_size=2, stride=2),
            Flatten("flat", ["pool"]),
            Dense("out", ["flat"], 2 * 3 * 3, 2),
            Softmax("probs", ["out"]),
        ]
        x = rng.standard_normal((2, 1, 6, 6))
    elif kind == "global_avg_pool":
        layers = [
            Conv2D("conv", [INPUT], 1, 4, 3, padding=1),
            GlobalAvgPool("gap", ["conv"]),
            Dense("out", ["gap"], 4, 2),
            Softmax("probs", ["out"]),
        ]
        x = rng.standard_normal((3, 1, 5, 5))
    elif kind == "batchnorm":
        layers = [
            Conv2D("conv", [INPUT], 1, 3, 3, padding=1),
            BatchNorm("bn", ["conv"], 3),
            ReLU("relu", ["bn"]),
            GlobalAvgPool("gap", ["relu"]),
            Dense("out", ["gap"], 3, 2),
            Softmax("probs", ["out"]),
        ]
        x = rng.standard_normal((4, 1, 4, 4))
    elif kind == "batchnorm2d":
        layers = [
            Dense("fc", [INPUT], 6, 5),
            BatchNorm("bn", ["fc"], 5),
            ReLU("relu", ["bn"]),
            Dense("out", ["relu"], 5, 2),
            Softmax("probs", ["out"]),
        ]
        x = rng.standard_normal((6, 6))
    elif kind == "dropout":
        layers = [
            Dense("fc", [INPUT], 6, 8),
            Dropout("drop", ["fc"], 0.3),
            Dense("out", ["drop"], 8, 2),
            Softmax("probs", ["out"]),
        ]
        x = rng.standard_normal((4, 6))
    elif kind == "dense":
        layers = [
            Dense("fc", [INPUT], 5, 7, l2=0.002),
            ReLU("relu", ["fc"]),
            Dense("out", ["relu"], 7, 3),
            Softmax("probs", ["out"]),
        ]
        x = rng.standard_normal((4, 5))
    elif kind == "concat":
        layers = [
            Conv2D("a", [INPUT], 1, 2, 3, padding=1),
            Conv2D("b", [INPUT], 1, 3, 1),
            Concat("cat", ["a", "b"]),
            GlobalAvgPool("gap", ["cat"]),
            Dense("out", ["gap"], 5, 2),
            Softmax("probs", ["out"]),
        ]
        x = rng.standard_normal((2, 1, 4, 4))
    elif kind == "softmax":
        layers = [
            Dense("fc", [INPUT], 4, 3),
            Softmax("probs", ["fc"]),
        ]
        x = rng.standard_normal((5, 4))
    else:
        raise ValueError(kind)

    num_classes = layers[-2].out_features
    graph = ModelGraph(layers, (1, 1, 1), num_classes, dtype=np.float64)
    graph.init_params(seed=17)
    labels = one_hot(rng.integers(0, num_classes, x.shape[0]), num_classes)
    return graph, x, labels


ALL_KINDS = [
    "conv2d", "maxpool2d", "global_avg_pool", "batchnorm", "batchnorm2d",
    "dropout", "dense", "concat", "softmax",
]


def conditioning_margin(graph: ModelGraph, x: np.ndarray) -> float:
    """Distance of the loss surface from the nearest kink.

    Finite differences are only valid where the network is locally smooth:
    no pre-ReLU value near zero and no near-tie inside a pooling window.
    """
    graph.forward(x, training=True, step=0, keep_activations=True)
    margin = np.inf
    for layer in graph.layers:
        if layer.kind == "relu":
            margin = min(margin, float(np.abs(graph.activation(layer.inputs[0])).min()))
        elif layer.kind == "maxpool2d":
            src = graph.activation(layer.inputs[0])
            k = layer.kernel_size[0]
            sh, sw = layer.stride
            b, c, h, w = src.shape
            for i in range(0, h - k + 1, sh):
                for j in range(0, w - k + 1, sw):
                    window = src[:, :, i : i + k, j : j + k].reshape(b, c, -1)
                    top2 = np.sort(window, axis=2)[:, :, -2:]
                    margin = min(margin, float((top2[:, :, 1] - top2[:, :, 0]).min()))
    graph._acts = None
    return margin


def well_conditioned_micro_graph(kind: str):
    for data_seed in range(50):
        graph, x, labels = micro_graph(kind, data_seed)
        if conditioning_margin(graph, x) > 1e-3:
            return graph, x, labels
    raise AssertionError(f"no well-conditioned draw found for {kind}")


class TestGradients:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_finite_difference_match(self, kind):
        graph, x, labels = well_conditioned_micro_graph(kind)
        max_rel = check_gradients(graph, x, labels, n_coords=100, h=1e-5,
                                  coord_rng=np.random.default_rng(0))
        assert max_rel < 1e-4, f"{kind}: max rel err {max_rel:.3e}"

    def test_all_frozen_zero_gradient_set(self):
        graph, x, labels = micro_graph("dense")
        for layer in graph.layers:
            layer.trainable = False
        probs = graph.forward(x, training=True)
        loss = cross_entropy(probs, labels, graph.l2_terms())
        assert math.isfinite(loss)
        graph.zero_grads()
        graph.backward(cross_entropy_grad(probs, labels))
        assert graph.trainable_params() == {}
        assert all(p.grad is None for layer in graph.layers for p in layer.params.values())

    def test_frozen_layers_pass_activation_gradients(self):
        graph, x, labels = micro_graph("dense")
        graph.layer("fc").trainable = False
        probs = graph.forward(x, training=True)
        graph.zero_grads()
        dx = graph.backward(cross_entropy_grad(probs, labels), need_input_grad=True)
        assert dx is not None and np.any(dx != 0)
        assert graph.layer("fc").params["weight"].grad is None
        assert graph.layer("out").params["weight"].grad is not None


# ---------------------------------------------------------------------------
# training loop


class ArrayStream:
    """In-memory stand-in for a BatchStream."""

    def __init__(self, x, y, batch_size, seed=0, poison_epoch=None):
        self.x = x
        self.y = y
        self.batch_size = batch_size
        self.seed = seed
        self.poison_epoch = poison_epoch
        self.entries = [SimpleNamespace(augmented=False)] * len(y)
        self.manifest = None

    def epoch(self, epoch):
        order = np.random.default_rng((self.seed, epoch)).permutation(len(self.y))
        for start in range(0, len(order), self.batch_size):
            idx = order[start : start + self.batch_size]
            x = self.x[idx].copy()
            if self.poison_epoch is not None and epoch >= self.poison_epoch:
                x[:] = np.nan
            yield x, self.y[idx], [f"clip{i}" for i in idx]


def separable_data(n=64, seed=0):
    rng = np.random.default_rng(seed)
    half = n // 2
    x0 = rng.normal(loc=(-2.0, 0.0), scale=0.4, size=(half, 2))
    x1 = rng.normal(loc=(2.0, 0.0), scale=0.4, size=(half, 2))
    x = np.concatenate([x0, x1]).astype(np.float32)
    y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)])
    return x, y


def toy_graph(seed=0, dtype=np.float32):
    layers = [
        Dense("fc", [INPUT], 2, 8),
        ReLU("relu", ["fc"]),
        Dense("out", ["relu"], 8, 2),
        Softmax("probs", ["out"]),
    ]
    graph = ModelGraph(layers, (1, 1, 2), 2, dtype=dtype)
    graph.init_params(seed)
    return graph


class TestTrainController:
    def test_stops_at_one_plus_patience(self):
        controller = TrainController(TrainConfig(early_stop_patience=10))
        stop_epoch = None
        for epoch in range(1, 40):
            val_loss = 1.0 if epoch == 1 else 1.5
            decision = controller.observe(epoch, val_loss, 0.5)
            if decision.stop:
                stop_epoch = epoch
                break
        assert stop_epoch == 11
        assert controller.best_epoch == 1

    def test_plateau_reduces_once_per_plateau(self):
        config = TrainConfig(alpha=1e-3, plateau_factor=0.5, plateau_patience=5, min_alpha=1e-7,
                             early_stop_patience=100)
        controller = TrainController(config)
        reductions = []
        # improving epochs 1-3, flat 4-20
        for epoch in range(1, 21):
            val_loss = {1: 1.0, 2: 0.9, 3: 0.8}.get(epoch, 0.8)
            decision = controller.observe(epoch, val_loss, 0.0)
            if decision.reduced:
                reductions.append(epoch)
        # flat run starts at epoch 4; 5th flat epoch is 8, then reset -> 13, 18
        assert reductions == [8, 13, 18]
        assert controller.alpha == pytest.approx(1e-3 * 0.5**3)

    def test_alpha_floored_at_min(self):
        config = TrainConfig(alpha=4e-7, plateau_factor=0.5, plateau_patience=1, min_alpha=1e-7,
                             early_stop_patience=100)
        controller = TrainController(config)
        for epoch in range(1, 12):
            controller.observe(epoch, 1.0, 0.0)
        assert controller.alpha == 1e-7

    def test_accuracy_metric_mode(self):
        config = TrainConfig(early_stop_metric="val_accuracy", early_stop_patience=3)
        controller = TrainController(config)
        accs = [0.5, 0.6, 0.6, 0.6, 0.6]
        stops = [controller.observe(e, 1.0, a).stop for e, a in enumerate(accs, 1)]
        assert stops == [False, False, False, False, True]


class TestTrainLoop:
    def test_loss_halves_on_separable_toy(self):
        x, y = separable_data()
        graph = toy_graph(seed=1)
        probs = graph.forward(x)
        initial = cross_entropy(probs, one_hot(y, 2))
        streams = SimpleNamespace(train=ArrayStream(x, y, 64), val=ArrayStream(x, y, 64))
        config = TrainConfig(batch_size=64, alpha=0.05, max_epochs=50,
                             early_stop_patience=50, seed=3)
        result = train_loop(graph, streams, config)
        final = cross_entropy(graph.forward(x), one_hot(y, 2))
        assert final <= 0.5 * initial
        assert result.history[-1]["val_accuracy"] >= 0.9

    def test_determinism(self):
        x, y = separable_data(seed=5)
        streams = SimpleNamespace(train=ArrayStream(x, y, 16, seed=2), val=ArrayStream(x, y, 32, seed=2))
        config = TrainConfig(batch_size=16, alpha=0.01, max_epochs=6, early_stop_patience=10, seed=11)
        h1 = train_loop(toy_graph(seed=4), streams, config).history
        h2 = train_loop(toy_graph(seed=4), streams, config).history
        assert h1 == h2

    def test_returns_best_checkpoint_weights(self):
        x, y = separable_data(seed=6)
        streams = SimpleNamespace(train=ArrayStream(x, y, 16, seed=3), val=ArrayStream(x, y, 32, seed=3))
        config = TrainConfig(batch_size=16, alpha=0.05, max_epochs=8, early_stop_patience=20, seed=1)
        graph = toy_graph(seed=9)
        snapshots = {}

        def capture(record):
            snapshots[record["epoch"]] = graph.snapshot()

        result = train_loop(graph, streams, config, callbacks=[capture])
        best = snapshots[result.best_epoch]
        for name, arr in graph.named_tensors().items():
            assert np.array_equal(arr, best[name])

    def test_frozen_params_conserved(self):
        x, y = separable_data(seed=7)
        graph = toy_graph(seed=2)
        graph.layer("fc").trainable = False
        before = {k: v.copy() for k, v in graph.named_tensors().items() if k.startswith("fc.")}
        streams = SimpleNamespace(train=ArrayStream(x, y, 16, seed=1), val=ArrayStream(x, y, 32, seed=1))
        config = TrainConfig(batch_size=16, alpha=0.05, max_epochs=5, early_stop_patience=10, seed=0)
        train_loop(graph, streams, config)
        for k, v in before.items():
            assert np.array_equal(v, graph.named_tensors()[k]), k

    def test_numerical_error_carries_partial_history(self):
        x, y = separable_data(seed=8)
        streams = SimpleNamespace(
            train=ArrayStream(x, y, 32, seed=4, poison_epoch=3),
            val=ArrayStream(x, y, 32, seed=4),
        )
        config = TrainConfig(batch_size=32, alpha=0.01, max_epochs=10, early_stop_patience=10, seed=0)
        with pytest.raises(NumericalError) as excinfo:
            train_loop(toy_graph(seed=3), streams, config)
        assert len(excinfo.value.history) == 2
