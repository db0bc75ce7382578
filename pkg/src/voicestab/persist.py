"""Bit-exact binary containers for tensors and model checkpoints.

Both formats are explicitly little-endian and end in a CRC-32 of all
preceding bytes, so any flipped or missing byte is detected at load.

Tensor file (.vstn):
    magic "VSTN" | u32 ndim | u64 dims... | f32 payload | u32 crc

Checkpoint file (.vsmc):
    magic "VSMC" | u32 version | u64 header_len | header JSON | payload | u32 crc

The header JSON holds the graph descriptor (layer list, configs, wiring,
cut point, trainable flags), the tensor table (name, dtype, shape, byte
offset into the payload), a probe record (hashes of a fixed synthetic
input and of the cut-point activation it produces), and caller metadata.
The probe lets a loader verify activation fidelity without any reference
to training or evaluation data; checkpoints have no field that could
carry validation/test statistics.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import zlib

import numpy as np

from . import rng as rngmod
from .errors import CorruptCheckpoint, InvalidParam, IoError, UnsupportedVersion
from .nn.graph import ModelGraph, graph_from_descriptor

TENSOR_MAGIC = b"VSTN"
CHECKPOINT_MAGIC = b"VSMC"
FORMAT_VERSION = 1
_PROBE_SEED = 1337  # fixed; probe inputs are synthetic by construction


def _atomic_write(path, data: bytes) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_tensor(path, array: np.ndarray) -> None:
    """Write a float32 array in the flat VSTN layout."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    parts = [TENSOR_MAGIC, struct.pack("<I", arr.ndim)]
    parts += [struct.pack("<Q", d) for d in arr.shape]
    parts.append(arr.tobytes())
    body = b"".join(parts)
    _atomic_write(path, body + struct.pack("<I", zlib.crc32(body)))


def read_tensor(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(blob) < 12 or blob[:4] != TENSOR_MAGIC:
        raise CorruptCheckpoint(f"{path}: not a VSTN tensor file")
    body, crc_bytes = blob[:-4], blob[-4:]
    if struct.unpack("<I", crc_bytes)[0] != zlib.crc32(body):
        raise CorruptCheckpoint(f"{path}: CRC mismatch")
    ndim = struct.unpack_from("<I", body, 4)[0]
    offset = 8
    dims = []
    for _ in range(ndim):
        dims.append(struct.unpack_from("<Q", body, offset)[0])
        offset += 8
    count = int(np.prod(dims)) if dims else 1
    payload = body[offset:]
    if len(payload) != 4 * count:
        raise CorruptCheckpoint(f"{path}: payload length {len(payload)} != {4 * count}")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def probe_input(input_shape) -> np.ndarray:
    """Fixed synthetic probe batch for activation-fidelity records."""
    gen = rngmod.stream(_PROBE_SEED, "probe", *input_shape)
    return gen.standard_normal((1, *input_shape)).astype(np.float32)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _probe_record(graph: ModelGraph) -> dict:
    x = probe_input(graph.input_shape)
    cut = graph.cut_point or graph.layers[-1].name
    graph.forward(x, training=False, keep_activations=True)
    activation = np.ascontiguousarray(graph.activation(cut), dtype="<f4")
    record = {
        "cut_point": cut,
        "input_sha256": _sha256(np.ascontiguousarray(x, dtype="<f4").tobytes()),
        "activation_sha256": _sha256(activation.tobytes()),
    }
    graph._acts = None
    return record


def save(model: ModelGraph, path, metadata: dict) -> None:
    """Serialize a model; re-reading yields bit-identical tensors."""
    if "phase" not in metadata or "seed" not in metadata:
        raise InvalidParam("checkpoint metadata must include 'phase' and 'seed'")

    tensors = model.named_tensors()
    table = []
    payload_parts = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = arr.tobytes()
        table.append(
            {"name": name, "dtype": "f32", "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        payload_parts.append(raw)
        offset += len(raw)

    header = {
        "graph": model.descriptor(),
        "tensor_table": table,
        "probe": _probe_record(model),
        "metadata": dict(metadata),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(
        [
            CHECKPOINT_MAGIC,
            struct.pack("<I", FORMAT_VERSION),
            struct.pack("<Q", len(header_bytes)),
            header_bytes,
            *payload_parts,
        ]
    )
    _atomic_write(path, body + struct.pack("<I", zlib.crc32(body)))


def load(path, verify_probe: bool = True) -> tuple[ModelGraph, dict]:
    """Load a checkpoint, verifying CRC, structure, and probe activation."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(blob) < 20 or blob[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint(f"{path}: not a VSMC checkpoint")
    body, crc_bytes = blob[:-4], blob[-4:]
    if struct.unpack("<I", crc_bytes)[0] != zlib.crc32(body):
        raise CorruptCheckpoint(f"{path}: CRC mismatch")
    version = struct.unpack_from("<I", body, 4)[0]
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"{path}: format version {version}")
    header_len = struct.unpack_from("<Q", body, 8)[0]
    header_end = 16 + header_len
    if header_end > len(body):
        raise CorruptCheckpoint(f"{path}: truncated header")
    try:
        header = json.loads(body[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header: {exc}") from exc

    payload = body[header_end:]
    graph = graph_from_descriptor(header["graph"], dtype=np.float32)

    tensors = {}
    seen_ranges = []
    for entry in header["tensor_table"]:
        if entry["dtype"] != "f32":
            raise CorruptCheckpoint(f"{path}: unsupported tensor dtype {entry['dtype']}")
        start, nbytes = entry["offset"], entry["nbytes"]
        end = start + nbytes
        if start < 0 or end > len(payload):
            raise CorruptCheckpoint(f"{path}: tensor {entry['name']!r} out of bounds")
        for s, e in seen_ranges:
            if start < e and s < end:
                raise CorruptCheckpoint(f"{path}: overlapping tensor ranges")
        seen_ranges.append((start, end))
        arr = np.frombuffer(payload[start:end], dtype="<f4").reshape(entry["shape"]).copy()
        tensors[entry["name"]] = arr

    expected = set(graph.named_tensors())
    if set(tensors) != expected:
        missing = expected - set(tensors)
        extra = set(tensors) - expected
        raise CorruptCheckpoint(f"{path}: tensor table mismatch (missing={missing}, extra={extra})")
    graph.load_tensors(tensors)

    if verify_probe:
        record = _probe_record(graph)
        stored = header["probe"]
        if record["activation_sha256"] != stored["activation_sha256"]:
            raise CorruptCheckpoint(f"{path}: probe activation mismatch after load")
    return graph, header["metadata"]


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
