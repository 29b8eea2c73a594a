"""Binary checkpoints for chain models.

Layout (all integers little-endian)::

    8 bytes   magic  b"CHNHDR\\x00\\x1a"
    uint32    format version
    uint32    manifest length in bytes
    ...       manifest: UTF-8 JSON (architecture, stages, tensor names/shapes)
    ...       tensors in manifest order, float32 little-endian, C order

The optional training state (Adam moments and step counts, epochs done) is
stored as extra named tensors so an interrupted run can resume exactly.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .layers import AdamState, BatchNormStats
from .network import ChainModel, SubnetworkParams, block_specs

MAGIC = b"CHNHDR\x00\x1a"
VERSION = 1
_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class TensorCountError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


@dataclass
class TrainState:
    """Optimizer state needed to continue training bit-identically."""

    epochs_done: int = 0
    adam: dict[int, dict[str, AdamState]] = field(default_factory=dict)
    log: list[dict] = field(default_factory=list)


def _stage_tensors(stage: SubnetworkParams) -> list[tuple[str, np.ndarray]]:
    out = sorted(stage.tensors.items())
    for name in sorted(stage.stats):
        out.append((f"{name}.running_mean", stage.stats[name].mean))
        out.append((f"{name}.running_var", stage.stats[name].var))
    return out


def save_checkpoint(model: ChainModel, path: str | os.PathLike, state: TrainState | None = None) -> str:
    """Write ``model`` (and optionally its training state); returns the sha256."""
    blobs: list[np.ndarray] = []
    stages = []
    for ev, stage in model.stages():
        entries = []
        for name, arr in _stage_tensors(stage):
            entries.append([name, list(arr.shape)])
            blobs.append(arr)
        stages.append({
            "ev": ev,
            "direction": stage.direction,
            "width": stage.width,
            "dilations": list(stage.dilations),
            "activation": stage.activation,
            "bn_updates": {k: s.updates for k, s in sorted(stage.stats.items())},
            "tensors": entries,
        })
    optim = []
    if state is not None:
        for ev in sorted(state.adam):
            for name in sorted(state.adam[ev]):
                st = state.adam[ev][name]
                optim.append({"ev": ev, "name": name, "step": st.step_count, "shape": list(st.first_moment.shape)})
                blobs.extend([st.first_moment, st.second_moment])
    manifest = {
        "architecture": {"kernel": 3, "width": model.width, "dilations": list(model.up_stages[0].dilations)},
        "metadata": model.metadata,
        "stages": stages,
        "train_state": None if state is None else {"epochs_done": state.epochs_done, "adam": optim, "log": state.log},
        "tensor_count": len(blobs),
    }
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    payload = b"".join(np.ascontiguousarray(b, dtype=_DTYPE).tobytes() for b in blobs)
    data = MAGIC + struct.pack("<II", VERSION, len(header)) + header + payload

    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return hashlib.sha256(data).hexdigest()


def _parse(data: bytes) -> tuple[dict, memoryview]:
    if len(data) < len(MAGIC) + 8:
        raise TruncatedCheckpointError(f"file is {len(data)} bytes, too short for a checkpoint header")
    if data[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic bytes {data[:len(MAGIC)]!r}; not a chain checkpoint")
    version, hlen = struct.unpack_from("<II", data, len(MAGIC))
    if version != VERSION:
        raise VersionError(f"checkpoint format version {version}, this reader supports {VERSION}")
    start = len(MAGIC) + 8
    if len(data) < start + hlen:
        raise TruncatedCheckpointError("manifest is truncated")
    try:
        manifest = json.loads(bytes(data[start:start + hlen]).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"manifest is not valid JSON: {exc}") from exc
    return manifest, memoryview(data)[start + hlen:]


def _expected_shapes(width: int, dilations) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for name, (c_out, c_in, k, _) in block_specs(width, dilations).items():
        shapes[f"{name}.weight"] = (c_out, c_in, k, k)
        shapes[f"{name}.bias"] = (c_out,)
        if name != "r4":
            for suffix in ("gamma", "beta", "alpha", "running_mean", "running_var"):
                shapes[f"{name}.{suffix}"] = (c_out,)
    return shapes


def load_checkpoint_with_state(path: str | os.PathLike, expected_width: int | None = None
                               ) -> tuple[ChainModel, TrainState | None]:
    data = Path(path).read_bytes()
    manifest, payload = _parse(data)
    declared = manifest.get("tensor_count")
    stage_entries = [e for s in manifest["stages"] for e in s["tensors"]]
    adam_entries = [] if manifest.get("train_state") is None else manifest["train_state"]["adam"]
    listed = len(stage_entries) + 2 * len(adam_entries)
    if declared != listed:
        raise TensorCountError(f"manifest declares {declared} tensors but lists {listed}")
    sizes = [int(np.prod(shape)) for _, shape in stage_entries]
    sizes += [int(np.prod(e["shape"])) for e in adam_entries for _ in range(2)]
    need = sum(sizes) * _DTYPE.itemsize
    if len(payload) < need:
        raise TruncatedCheckpointError(f"tensor data truncated: {len(payload)} of {need} bytes present")
    if len(payload) > need:
        raise TensorCountError(f"{len(payload) - need} trailing bytes after the last tensor")

    arrays = np.frombuffer(payload, dtype=_DTYPE)
    offset = 0

    def take(shape) -> np.ndarray:
        nonlocal offset
        size = int(np.prod(shape))
        arr = arrays[offset:offset + size].astype(np.float32).reshape(shape)
        offset += size
        return arr

    width = manifest["architecture"]["width"]
    if expected_width is not None and width != expected_width:
        raise ShapeMismatchError(f"checkpoint has width {width}, expected {expected_width}")
    stages: dict[int, SubnetworkParams] = {}
    for s in manifest["stages"]:
        expected = _expected_shapes(s["width"], s["dilations"])
        names = [n for n, _ in s["tensors"]]
        if sorted(names) != sorted(expected):
            raise TensorCountError(f"stage EV {s['ev']}: tensor set does not match the architecture")
        tensors, running = {}, {}
        for name, shape in s["tensors"]:
            if tuple(shape) != expected[name]:
                raise ShapeMismatchError(
                    f"stage EV {s['ev']} tensor {name}: stored shape {tuple(shape)}, "
                    f"architecture (width {s['width']}) needs {expected[name]}")
            arr = take(shape)
            if name.endswith((".running_mean", ".running_var")):
                running[name] = arr
            else:
                tensors[name] = arr
        stats = {
            blk: BatchNormStats(running[f"{blk}.running_mean"], running[f"{blk}.running_var"], int(n))
            for blk, n in s["bn_updates"].items()
        }
        stages[s["ev"]] = SubnetworkParams(s["direction"], tensors, stats, s["width"], tuple(s["dilations"]),
                                         s.get("activation", ""))
    if sorted(stages) != [-3, -2, -1, 1, 2, 3]:
        raise TensorCountError(f"checkpoint holds stages {sorted(stages)}, expected EV -3..-1 and 1..3")
    model = ChainModel([stages[k] for k in (1, 2, 3)], [stages[k] for k in (-1, -2, -3)],
                       manifest.get("metadata", {}))

    state = None
    if manifest.get("train_state") is not None:
        ts = manifest["train_state"]
        state = TrainState(ts["epochs_done"], {}, ts.get("log", []))
        for e in adam_entries:
            m, v = take(e["shape"]), take(e["shape"])
            state.adam.setdefault(e["ev"], {})[e["name"]] = AdamState(m, v, e["step"])
    return model, state


def load_checkpoint(path: str | os.PathLike, expected_width: int | None = None) -> ChainModel:
    return load_checkpoint_with_state(path, expected_width)[0]


def file_digest(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
