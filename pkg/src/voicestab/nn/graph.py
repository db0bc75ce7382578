"""Model graphs: a serialized list of layers wired as a DAG.

The reserved input name is "input".  Layers appear in topological order;
forward evaluates them in that order and backward walks it in reverse,
accumulating activation gradients where a producer feeds several
consumers.  Layers whose output nothing consumes (possible in truncated
transfer fragments) are still evaluated but receive no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import rng as rngmod
from ..errors import NumericalError, ShapeError
from .layers import LAYER_KINDS, Layer, Param

INPUT = "input"


@dataclass
class Ctx:
    """Per-call context threaded through layer forward passes."""

    training: bool = False
    seed: int = 0
    step: int = 0


class ModelGraph:
    def __init__(
        self,
        layers: list[Layer],
        input_shape: tuple[int, int, int],
        num_classes: int,
        family: str = "custom",
        cut_point: str | None = None,
        dtype=np.float32,
    ):
        self.layers = list(layers)
        self.input_shape = tuple(int(v) for v in input_shape)
        self.num_classes = int(num_classes)
        self.family = family
        self.cut_point = cut_point
        self.dtype = np.dtype(dtype)
        self._by_name = {}
        for layer in self.layers:
            if layer.name in self._by_name or layer.name == INPUT:
                raise ShapeError(f"duplicate or reserved layer name {layer.name!r}")
            self._by_name[layer.name] = layer
        for layer in self.layers:
            for src in layer.inputs:
                if src != INPUT and src not in self._by_name:
                    raise ShapeError(f"{layer.name}: unknown input {src!r}")
        if cut_point is not None and cut_point not in self._by_name:
            raise ShapeError(f"cut_point {cut_point!r} names no layer")
        self._acts: dict[str, np.ndarray] | None = None

    # -- structure ---------------------------------------------------------

    def layer(self, name: str) -> Layer:
        return self._by_name[name]

    def layer_index(self, name: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise KeyError(name)

    def init_params(self, seed: int) -> None:
        for layer in self.layers:
            layer.init_params(rngmod.stream(seed, "init", layer.name), self.dtype)

    def named_tensors(self) -> dict[str, np.ndarray]:
        """All state arrays: parameters plus buffers (running stats)."""
        out = {}
        for layer in self.layers:
            for pname, p in layer.params.items():
                out[f"{layer.name}.{pname}"] = p.value
            for bname, b in layer.buffers.items():
                out[f"{layer.name}.{bname}"] = b
        return out

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for name, arr in tensors.items():
            layer_name, _, field = name.rpartition(".")
            layer = self._by_name[layer_name]
            if field in layer.params:
                if layer.params[field].value.shape != arr.shape:
                    raise ShapeError(f"{name}: shape {arr.shape} != {layer.params[field].value.shape}")
                layer.params[field].value = arr.astype(self.dtype)
            elif field in layer.buffers:
                if layer.buffers[field].shape != arr.shape:
                    raise ShapeError(f"{name}: shape {arr.shape} != {layer.buffers[field].shape}")
                layer.buffers[field] = arr.astype(self.dtype)
            else:
                raise ShapeError(f"{name}: no such parameter or buffer")

    def trainable_params(self) -> dict[str, Param]:
        out = {}
        for layer in self.layers:
            if not layer.trainable:
                continue
            for pname, p in layer.params.items():
                out[f"{layer.name}.{pname}"] = p
        return out

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def l2_terms(self) -> list[tuple[float, np.ndarray]]:
        terms = []
        for layer in self.layers:
            lam = getattr(layer, "l2", 0.0)
            if lam > 0.0 and "weight" in layer.params:
                terms.append((lam, layer.params["weight"].value))
        return terms

    def zero_grads(self) -> None:
        for layer in self.layers:
            for p in layer.params.values():
                p.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.named_tensors().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        self.load_tensors({name: arr.copy() for name, arr in snap.items()})

    # -- execution ---------------------------------------------------------

    def forward(
        self,
        x: np.ndarray,
        training: bool = False,
        seed: int = 0,
        step: int = 0,
        keep_activations: bool = False,
    ) -> np.ndarray:
        ctx = Ctx(training=training, seed=seed, step=step)
        acts = {INPUT: np.asarray(x, dtype=self.dtype)}
        for layer in self.layers:
            acts[layer.name] = layer.forward([acts[nm] for nm in layer.inputs], ctx)
        out = acts[self.layers[-1].name]
        self._acts = acts if keep_activations else None
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"non-finite output from layer {self.layers[-1].name!r}")
        return out

    def activation(self, name: str) -> np.ndarray:
        if self._acts is None or name not in self._acts:
            raise KeyError(f"no recorded activation for {name!r}; forward with keep_activations")
        return self._acts[name]

    def backward(self, d_output: np.ndarray, need_input_grad: bool = False) -> np.ndarray | None:
        """Backpropagate from the last layer's output gradient.

        Stops below the lowest layer holding trainable parameters unless
        the input gradient is requested; frozen layers above that point
        still pass activation gradients through.
        """
        stop_idx = 0
        if not need_input_grad:
            trainable_idxs = [
                i for i, layer in enumerate(self.layers) if layer.trainable and layer.params
            ]
            stop_idx = min(trainable_idxs) if trainable_idxs else len(self.layers)
        grads: dict[str, np.ndarray] = {self.layers[-1].name: d_output}
        for i in range(len(self.layers) - 1, -1, -1):
            if i < stop_idx:
                break
            layer = self.layers[i]
            dy = grads.pop(layer.name, None)
            if dy is None:
                continue  # dangling output: nothing consumed it
            dxs = layer.backward(dy)
            for name, p in layer.params.items():
                if p.grad is not None and not np.all(np.isfinite(p.grad)):
                    raise NumericalError(f"non-finite gradient in layer {layer.name!r} ({name})")
            for src, dx in zip(layer.inputs, dxs):
                if src in grads:
                    grads[src] = grads[src] + dx
                else:
                    grads[src] = dx
        return grads.get(INPUT)

    # -- serialization -----------------------------------------------------

    def descriptor(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "family": self.family,
            "cut_point": self.cut_point,
            "layers": [
                {
                    "name": layer.name,
                    "kind": layer.kind,
                    "inputs": list(layer.inputs),
                    "trainable": bool(layer.trainable),
                    "config": layer.config(),
                }
                for layer in self.layers
            ],
        }


def graph_from_descriptor(desc: dict, dtype=np.float32) -> ModelGraph:
    """Rebuild a graph skeleton (zero-initialized params) from a descriptor."""
    layers = []
    for spec in desc["layers"]:
        cls = LAYER_KINDS[spec["kind"]]
        kwargs = dict(spec["config"])
        if "kernel_size" in kwargs:
            kwargs["kernel_size"] = tuple(kwargs["kernel_size"])
        if "stride" in kwargs and isinstance(kwargs["stride"], list):
            kwargs["stride"] = tuple(kwargs["stride"])
        layer = cls(spec["name"], spec["inputs"], **kwargs)
        # freeze flags persist exactly as saved, even for parameterless kinds
        layer.trainable = bool(spec["trainable"])
        layers.append(layer)
    graph = ModelGraph(
        layers,
        input_shape=tuple(desc["input_shape"]),
        num_classes=desc["num_classes"],
        family=desc.get("family", "custom"),
        cut_point=desc.get("cut_point"),
        dtype=dtype,
    )
    graph.init_params(seed=0)
    return graph
