"""Flat parameter vectors, interpolation arithmetic, task vectors, checkpoints.

Every model is handled as a flat float64 vector tagged with a layout id, so
merging is plain vector arithmetic regardless of architecture. The canonical
flat order is: for each layer in forward order, the weight matrix in row-major
order followed by its bias vector.

Checkpoint files: magic "DWIN1", a 4-byte little-endian header length, a UTF-8
JSON header (architecture + training metadata), then the raw little-endian
float64 payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import CheckpointFormatError, IncompatibleModelsError
from .util import atomic_write

CHECKPOINT_MAGIC = b"DWIN1"


def _freeze(values: Any) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True, order="C")
    if arr.ndim != 1:
        raise ValueError("parameter values must be one-dimensional")
    if arr.size == 0:
        raise ValueError("parameter vector is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError("parameter values must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ParamVector:
    """Immutable flat view of one model's weights."""

    values: np.ndarray
    layout_id: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _freeze(self.values))
        if not self.layout_id:
            raise ValueError("layout_id must be non-empty")

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def with_values(self, values: Any) -> "ParamVector":
        """Same layout, new numbers."""
        return ParamVector(values, self.layout_id)


@dataclass(frozen=True)
class TaskVector:
    """Difference theta_task - theta_base, tied to the base layout."""

    delta: ParamVector
    base_layout: str

    def __post_init__(self) -> None:
        if self.delta.layout_id != self.base_layout:
            raise IncompatibleModelsError(
                f"task vector layout {self.delta.layout_id!r} does not match "
                f"base layout {self.base_layout!r}"
            )

    def __len__(self) -> int:
        return len(self.delta)


def check_compatible(a: ParamVector, b: ParamVector) -> None:
    if a.layout_id != b.layout_id:
        raise IncompatibleModelsError(
            f"layout mismatch: {a.layout_id!r} vs {b.layout_id!r}"
        )
    if len(a) != len(b):
        raise IncompatibleModelsError(
            f"length mismatch under layout {a.layout_id!r}: {len(a)} vs {len(b)}"
        )


def interpolate_pair(theta_0: ParamVector, theta_1: ParamVector, lam: float) -> ParamVector:
    """(1 - lam) * theta_0 + lam * theta_1, elementwise."""
    check_compatible(theta_0, theta_1)
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0.0 or lam > 1.0:
        raise ValueError(f"interpolation coefficient must lie in [0, 1], got {lam}")
    merged = (1.0 - lam) * theta_0.values + lam * theta_1.values
    return ParamVector(merged, theta_0.layout_id)


def make_task_vector(theta_task: ParamVector, theta_base: ParamVector) -> TaskVector:
    check_compatible(theta_task, theta_base)
    delta = theta_task.values - theta_base.values
    return TaskVector(ParamVector(delta, theta_base.layout_id), theta_base.layout_id)


def combine_task_vectors(
    theta_0: ParamVector,
    lambda_0: float,
    weights: Sequence[float],
    taus: Sequence[TaskVector],
) -> ParamVector:
    """theta_0 + lambda_0 * sum_j weights[j] * taus[j]."""
    lambda_0 = float(lambda_0)
    if not np.isfinite(lambda_0):
        raise ValueError("lambda_0 must be finite")
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != len(taus):
        raise ValueError(f"expected {len(taus)} weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0.0):
        raise ValueError("task-vector weights must be finite and non-negative")
    acc = theta_0.values.copy()
    for weight, tau in zip(w, taus):
        if tau.base_layout != theta_0.layout_id or len(tau) != len(theta_0):
            raise IncompatibleModelsError(
                f"task vector (layout {tau.base_layout!r}, len {len(tau)}) does not "
                f"match base (layout {theta_0.layout_id!r}, len {len(theta_0)})"
            )
        acc += lambda_0 * weight * tau.delta.values
    return ParamVector(acc, theta_0.layout_id)


# ----- canonical MLP layout ---------------------------------------------------

def mlp_layer_shapes(
    input_dim: int, hidden_widths: Sequence[int], class_count: int
) -> list[tuple[int, int]]:
    """(fan_in, fan_out) per layer, forward order."""
    dims = [int(input_dim), *(int(w) for w in hidden_widths), int(class_count)]
    return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]


def mlp_param_count(input_dim: int, hidden_widths: Sequence[int], class_count: int) -> int:
    return sum(fi * fo + fo for fi, fo in mlp_layer_shapes(input_dim, hidden_widths, class_count))


def mlp_layout_id(
    input_dim: int, hidden_widths: Sequence[int], class_count: int, activation: str
) -> str:
    hidden = ",".join(str(int(w)) for w in hidden_widths) or "-"
    return f"mlp:d{int(input_dim)}:h{hidden}:{activation}:c{int(class_count)}"


_HEADER_ARCH_KEYS = ("input_dim", "hidden_widths", "class_count", "activation")


def _validate_arch_header(arch: dict) -> dict:
    if not isinstance(arch, dict):
        raise CheckpointFormatError("header field 'arch' must be an object")
    for key in _HEADER_ARCH_KEYS:
        if key not in arch:
            raise CheckpointFormatError(f"header arch missing key {key!r}")
    input_dim = int(arch["input_dim"])
    class_count = int(arch["class_count"])
    hidden = [int(w) for w in arch["hidden_widths"]]
    activation = str(arch["activation"])
    if input_dim < 1 or class_count < 2 or any(w < 1 for w in hidden):
        raise CheckpointFormatError("header arch has non-positive dimensions")
    return {
        "input_dim": input_dim,
        "hidden_widths": hidden,
        "class_count": class_count,
        "activation": activation,
    }


@dataclass(frozen=True)
class Checkpoint:
    """A parameter vector plus the architecture and provenance that made it."""

    arch: dict
    payload: ParamVector
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        arch = _validate_arch_header(self.arch)
        object.__setattr__(self, "arch", arch)
        expected = mlp_param_count(arch["input_dim"], arch["hidden_widths"], arch["class_count"])
        if expected != len(self.payload):
            raise CheckpointFormatError(
                f"architecture implies {expected} parameters, payload has {len(self.payload)}"
            )
        layout = mlp_layout_id(
            arch["input_dim"], arch["hidden_widths"], arch["class_count"], arch["activation"]
        )
        if self.payload.layout_id != layout:
            raise CheckpointFormatError(
                f"payload layout {self.payload.layout_id!r} does not match "
                f"architecture layout {layout!r}"
            )


def checkpoint_id(ckpt: Checkpoint) -> str:
    """Stable short id: hash of layout and payload bytes."""
    digest = hashlib.sha256()
    digest.update(ckpt.payload.layout_id.encode("utf-8"))
    digest.update(np.ascontiguousarray(ckpt.payload.values, dtype="<f8").tobytes())
    return digest.hexdigest()[:16]


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    header = {
        "arch": ckpt.arch,
        "meta": ckpt.meta,
        "param_count": len(ckpt.payload),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = b"".join(
        [
            CHECKPOINT_MAGIC,
            struct.pack("<I", len(header_bytes)),
            header_bytes,
            np.ascontiguousarray(ckpt.payload.values, dtype="<f8").tobytes(),
        ]
    )
    atomic_write(path, blob)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as handle:
        blob = handle.read()
    if len(blob) < len(CHECKPOINT_MAGIC) + 4:
        raise CheckpointFormatError(f"{path}: file too short for a checkpoint")
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {blob[:5]!r}")
    offset = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if len(blob) < offset + header_len:
        raise CheckpointFormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: header is not valid JSON: {exc}") from exc
    offset += header_len
    if not isinstance(header, dict) or "arch" not in header or "param_count" not in header:
        raise CheckpointFormatError(f"{path}: header missing required fields")
    arch = _validate_arch_header(header["arch"])
    declared = int(header["param_count"])
    payload_bytes = blob[offset:]
    if len(payload_bytes) % 8 != 0 or len(payload_bytes) // 8 != declared:
        raise CheckpointFormatError(
            f"{path}: payload holds {len(payload_bytes) / 8:g} float64 values, "
            f"header declares {declared}"
        )
    expected = mlp_param_count(arch["input_dim"], arch["hidden_widths"], arch["class_count"])
    if expected != declared:
        raise CheckpointFormatError(
            f"{path}: header inconsistency, architecture implies {expected} "
            f"parameters but header declares {declared}"
        )
    values = np.frombuffer(payload_bytes, dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise CheckpointFormatError(f"{path}: payload contains non-finite values")
    layout = mlp_layout_id(
        arch["input_dim"], arch["hidden_widths"], arch["class_count"], arch["activation"]
    )
    meta = header.get("meta", {})
    if not isinstance(meta, dict):
        raise CheckpointFormatError(f"{path}: meta must be an object")
    return Checkpoint(arch=arch, payload=ParamVector(values, layout), meta=meta)
