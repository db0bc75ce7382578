"""Three miniature CNN families, each with a declared transfer cut point.

Each builder returns a ModelGraph whose serialized layer order is the
topological order listed here; the cut point is always the sixth layer of
that order, counting primitive layers (activations are layers).  Channel
widths keep every model under 100k parameters.

Families:
  - mini-vgg: stacked 3x3 convolutions, spatial-hierarchy style;
  - mini-inception: parallel 1x1/3x3/5x5/pooled branches concatenated on
    channels, multi-scale style;
  - mini-dense: BN-ReLU-conv layers whose inputs concatenate every
    earlier feature map in the block, feature-reuse style.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ShapeError
from .nn.graph import INPUT, Ctx, ModelGraph
from .nn.layers import (
    BatchNorm,
    Concat,
    Conv2D,
    Dense,
    GlobalAvgPool,
    MaxPool2D,
    ReLU,
    Softmax,
)

MODEL_NAMES = ("mini-vgg", "mini-inception", "mini-dense")
CUT_LAYER_POSITION = 6  # 1-based index into the serialized backbone order


def _check_input(input_shape, min_side: int = 32):
    c, h, w = input_shape
    if min(h, w) < min_side:
        raise ShapeError(f"spatial dims must be >= {min_side}, got {h}x{w}")
    return int(c), int(h), int(w)


def build_mini_vgg(input_shape, num_classes: int, seed: int = 0, dtype=np.float32) -> ModelGraph:
    """Two conv-conv-pool blocks (16 then 32 filters), GAP classifier."""
    c, _, _ = _check_input(input_shape)
    layers = [
        Conv2D("block1_conv1", [INPUT], c, 16, 3, stride=1, padding=1),
        ReLU("block1_relu1", ["block1_conv1"]),
        Conv2D("block1_conv2", ["block1_relu1"], 16, 16, 3, stride=1, padding=1),
        ReLU("block1_relu2", ["block1_conv2"]),
        MaxPool2D("block1_pool", ["block1_relu2"], kernel_size=2, stride=2),
        Conv2D("block2_conv1", ["block1_pool"], 16, 32, 3, stride=1, padding=1),
        ReLU("block2_relu1", ["block2_conv1"]),
        Conv2D("block2_conv2", ["block2_relu1"], 32, 32, 3, stride=1, padding=1),
        ReLU("block2_relu2", ["block2_conv2"]),
        MaxPool2D("block2_pool", ["block2_relu2"], kernel_size=2, stride=2),
        GlobalAvgPool("gap", ["block2_pool"]),
        Dense("classifier", ["gap"], 32, num_classes),
        Softmax("probs", ["classifier"]),
    ]
    graph = ModelGraph(
        layers, input_shape, num_classes,
        family="SpatialExploitation", cut_point="block2_conv1", dtype=dtype,
    )
    graph.init_params(seed)
    return graph


def _inception_block(name: str, src: str, in_channels: int) -> tuple[list, str, int]:
    """Branches: 1x1 | 1x1->3x3 | 1x1->5x5 | pool3x3->1x1, concat order fixed."""
    b = 8
    layers = [
        Conv2D(f"{name}_b0_conv", [src], in_channels, b, 1),
        Conv2D(f"{name}_b1_reduce", [src], in_channels, b, 1),
        Conv2D(f"{name}_b1_conv", [f"{name}_b1_reduce"], b, b, 3, padding=1),
        Conv2D(f"{name}_b2_reduce", [src], in_channels, b, 1),
        Conv2D(f"{name}_b2_conv", [f"{name}_b2_reduce"], b, b, 5, padding=2),
        MaxPool2D(f"{name}_b3_pool", [src], kernel_size=3, stride=1, padding=1),
        Conv2D(f"{name}_b3_conv", [f"{name}_b3_pool"], in_channels, b, 1),
        Concat(
            f"{name}_concat",
            [f"{name}_b0_conv", f"{name}_b1_conv", f"{name}_b2_conv", f"{name}_b3_conv"],
        ),
        ReLU(f"{name}_relu", [f"{name}_concat"]),
    ]
    return layers, f"{name}_relu", 4 * b


def build_mini_inception(input_shape, num_classes: int, seed: int = 0, dtype=np.float32) -> ModelGraph:
    """Conv stem plus two four-branch multi-scale blocks."""
    c, _, _ = _check_input(input_shape)
    layers = [
        Conv2D("stem_conv", [INPUT], c, 16, 3, stride=1, padding=1),
        ReLU("stem_relu", ["stem_conv"]),
        MaxPool2D("stem_pool", ["stem_relu"], kernel_size=2, stride=2),
    ]
    block1, out1, ch1 = _inception_block("inc1", "stem_pool", 16)
    block2, out2, ch2 = _inception_block("inc2", out1, ch1)
    layers += block1 + block2 + [
        GlobalAvgPool("gap", [out2]),
        Dense("classifier", ["gap"], ch2, num_classes),
        Softmax("probs", ["classifier"]),
    ]
    graph = ModelGraph(
        layers, input_shape, num_classes,
        family="DepthMultiScale", cut_point="inc1_b1_conv", dtype=dtype,
    )
    graph.init_params(seed)
    return graph


def _dense_block(name: str, src: str, in_channels: int, n_layers: int, growth: int) -> tuple[list, str, int]:
    layers = []
    feat = src
    channels = in_channels
    for j in range(1, n_layers + 1):
        bn = f"{name}_{j}_bn"
        relu = f"{name}_{j}_relu"
        conv = f"{name}_{j}_conv"
        layers += [
            BatchNorm(bn, [feat], channels),
            ReLU(relu, [bn]),
            Conv2D(conv, [relu], channels, growth, 3, padding=1),
            Concat(f"{name}_{j}_concat", [feat, conv]),
        ]
        feat = f"{name}_{j}_concat"
        channels += growth
    return layers, feat, channels


def build_mini_dense(input_shape, num_classes: int, seed: int = 0, dtype=np.float32) -> ModelGraph:
    """Conv stem, two 4-layer dense blocks (growth 8), halving transition."""
    c, _, _ = _check_input(input_shape)
    growth = 8
    layers = [
        Conv2D("stem_conv", [INPUT], c, 16, 3, stride=1, padding=1),
        ReLU("stem_relu", ["stem_conv"]),
        MaxPool2D("stem_pool", ["stem_relu"], kernel_size=2, stride=2),
    ]
    block1, feat1, ch1 = _dense_block("d1", "stem_pool", 16, 4, growth)
    trans_ch = ch1 // 2
    layers += block1 + [
        Conv2D("trans_conv", [feat1], ch1, trans_ch, 1),
        MaxPool2D("trans_pool", ["trans_conv"], kernel_size=2, stride=2),
    ]
    block2, feat2, ch2 = _dense_block("d2", "trans_pool", trans_ch, 4, growth)
    layers += block2 + [
        GlobalAvgPool("gap", [feat2]),
        Dense("classifier", ["gap"], ch2, num_classes),
        Softmax("probs", ["classifier"]),
    ]
    graph = ModelGraph(
        layers, input_shape, num_classes,
        family="MultiPathDense", cut_point="d1_1_conv", dtype=dtype,
    )
    graph.init_params(seed)
    return graph


_BUILDERS = {
    "mini-vgg": build_mini_vgg,
    "mini-inception": build_mini_inception,
    "mini-dense": build_mini_dense,
}


def build_model(name: str, input_shape, num_classes: int, seed: int = 0, dtype=np.float32) -> ModelGraph:
    if name not in _BUILDERS:
        raise ShapeError(f"unknown model {name!r}; choose from {MODEL_NAMES}")
    return _BUILDERS[name](input_shape, num_classes, seed=seed, dtype=dtype)


def describe(graph: ModelGraph) -> dict:
    """Deterministic summary: layers, output shapes, param counts, cut point."""
    x = np.zeros((1, *graph.input_shape), dtype=graph.dtype)
    shapes = {}
    acts = {INPUT: x}
    ctx = Ctx(training=False)
    for layer in graph.layers:
        acts[layer.name] = layer.forward([acts[nm] for nm in layer.inputs], ctx)
        shapes[layer.name] = list(acts[layer.name].shape[1:])
    return {
        "family": graph.family,
        "cut_point": graph.cut_point,
        "input_shape": list(graph.input_shape),
        "num_classes": graph.num_classes,
        "total_params": graph.param_count(),
        "layers": [
            {
                "name": layer.name,
                "kind": layer.kind,
                "inputs": list(layer.inputs),
                "output_shape": shapes[layer.name],
                "params": layer.param_count(),
                "trainable": bool(layer.trainable),
            }
            for layer in graph.layers
        ],
    }


def describe_text(graph: ModelGraph) -> str:
    d = describe(graph)
    lines = [
        f"family: {d['family']}  cut_point: {d['cut_point']}  "
        f"input: {d['input_shape']}  params: {d['total_params']}",
        f"{'name':24} {'kind':16} {'output':18} {'params':>8}  trainable",
    ]
    for item in d["layers"]:
        lines.append(
            f"{item['name']:24} {item['kind']:16} {str(item['output_shape']):18} "
            f"{item['params']:>8}  {item['trainable']}"
        )
    return "\n".join(lines)


def describe_json(graph: ModelGraph) -> str:
    return json.dumps(describe(graph), indent=2, sort_keys=True)
