"""Binary checkpoint container for model parameters, buffers, and config.

Layout (little-endian, normative):
  magic ``NCKP`` | u16 version | u32 tensor count |
  per tensor: u16 name length | name bytes (utf-8) | u8 rank |
              u32 extent per dimension | float32 payload (C order) |
  u32 config length | config text (utf-8, canonical key=value form) |
  u64 checksum of every prior byte.

The checksum is BLAKE2b with an 8-byte digest, read as a little-endian
u64 — a fast, well-specified 64-bit integrity check from the standard
library.  Tensors are stored in the model's deterministic enumeration
order: all parameters first, then all buffers (running statistics).
Loading rebuilds the model from the embedded config and validates the
stored tensor set name-by-name and shape-by-shape.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .config import ExperimentConfig
from .errors import (
    CheckpointError,
    CheckpointExtraTensor,
    CheckpointMissingTensor,
    CheckpointShapeMismatch,
    CheckpointVersionError,
)
from .model import TrialClassifier

__all__ = ["save_checkpoint", "load_checkpoint", "read_checkpoint_tensors"]

_MAGIC = b"NCKP"
_VERSION = 1
_HEADER = struct.Struct("<4sHI")
_U16 = struct.Struct("<H")
_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_MAX_RANK = 255


def _checksum(payload: bytes) -> int:
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return _U64.unpack(digest)[0]


def _model_tensors(model: TrialClassifier) -> list[tuple[str, np.ndarray]]:
    """Every persistent array of the model: parameters, then buffers."""
    out = [(name, p.data) for name, p in model.named_parameters()]
    out.extend(model.named_buffers())
    return out


def save_checkpoint(path, model: TrialClassifier, config: ExperimentConfig) -> None:
    """Serialize the model's tensors and its experiment config."""
    tensors = _model_tensors(model)
    blob = bytearray()
    blob += _HEADER.pack(_MAGIC, _VERSION, len(tensors))
    for name, array in tensors:
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f"tensor name too long to store: {name!r}")
        if array.ndim > _MAX_RANK:
            raise CheckpointError(f"tensor rank {array.ndim} exceeds format limit: {name!r}")
        blob += _U16.pack(len(encoded))
        blob += encoded
        blob += _U8.pack(array.ndim)
        for extent in array.shape:
            blob += _U32.pack(extent)
        blob += np.ascontiguousarray(array, dtype="<f4").tobytes()
    config_bytes = config.to_text().encode("utf-8")
    blob += _U32.pack(len(config_bytes))
    blob += config_bytes
    blob += _U64.pack(_checksum(bytes(blob)))
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


class _Reader:
    """Cursor over the checkpoint blob with offset-carrying errors."""

    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, count: int, what: str) -> bytes:
        end = self.offset + count
        if end > len(self.blob):
            raise CheckpointError(
                f"truncated checkpoint: needed {count} bytes for {what} "
                f"at byte offset {self.offset}, file ends at {len(self.blob)}"
            )
        piece = self.blob[self.offset : end]
        self.offset = end
        return piece

    def u8(self, what: str) -> int:
        return _U8.unpack(self.take(1, what))[0]

    def u16(self, what: str) -> int:
        return _U16.unpack(self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def read_checkpoint_tensors(path) -> tuple[dict[str, np.ndarray], ExperimentConfig]:
    """Parse and integrity-check a checkpoint without building a model."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size + _U64.size:
        raise CheckpointError(f"file too small to be a checkpoint ({len(blob)} bytes)")
    stored_sum = _U64.unpack(blob[-8:])[0]
    actual_sum = _checksum(blob[:-8])
    if stored_sum != actual_sum:
        raise CheckpointError(
            f"checksum mismatch: stored {stored_sum:#018x}, computed {actual_sum:#018x}"
        )
    reader = _Reader(blob[:-8])
    magic, version, count = _HEADER.unpack(reader.take(_HEADER.size, "header"))
    if magic != _MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    if version != _VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version} not supported (expected {_VERSION})"
        )
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        name_len = reader.u16(f"tensor {i} name length")
        name = reader.take(name_len, f"tensor {i} name").decode("utf-8")
        rank = reader.u8(f"{name}: rank")
        shape = tuple(reader.u32(f"{name}: extent {d}") for d in range(rank))
        n_items = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = reader.take(4 * n_items, f"{name}: payload")
        array = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        if name in tensors:
            raise CheckpointError(f"duplicate tensor name in checkpoint: {name!r}")
        tensors[name] = array
    config_len = reader.u32("config length")
    config_text = reader.take(config_len, "config text").decode("utf-8")
    if reader.offset != len(reader.blob):
        raise CheckpointError(
            f"trailing bytes after config at byte offset {reader.offset}"
        )
    return tensors, ExperimentConfig.from_text(config_text)


def load_checkpoint(
    path,
    config_override: ExperimentConfig | None = None,
    partial: bool = False,
) -> tuple[TrialClassifier, ExperimentConfig]:
    """Rebuild a model from a checkpoint.

    The model architecture comes from the embedded config unless
    ``config_override`` is given (e.g. loading into a head-reduced
    architecture).  Strict by default: every model tensor must be present,
    every stored tensor must land somewhere, and shapes must agree.  With
    ``partial=True`` stored tensors with no slot in the model are skipped;
    tensors the model needs remain mandatory.
    """
    stored, embedded_config = read_checkpoint_tensors(path)
    config = config_override if config_override is not None else embedded_config
    model = TrialClassifier(config.model_config(), seed=0)
    targets = _model_tensors(model)
    target_names = {name for name, _ in targets}
    for name, target in targets:
        if name not in stored:
            raise CheckpointMissingTensor(f"checkpoint lacks tensor {name!r}")
        if stored[name].shape != target.shape:
            raise CheckpointShapeMismatch(
                f"tensor {name!r}: checkpoint shape {stored[name].shape} "
                f"!= model shape {target.shape}"
            )
    extras = [name for name in stored if name not in target_names]
    if extras and not partial:
        raise CheckpointExtraTensor(
            f"checkpoint holds {len(extras)} tensor(s) the model has no slot for, "
            f"first: {extras[0]!r} (pass --partial to skip them)"
        )
    for name, target in targets:
        np.copyto(target, stored[name])
    return model, config
