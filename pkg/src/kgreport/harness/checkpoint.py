"""Binary checkpoint container: magic "KGN1", little-endian throughout.

Layout: magic(4) | version u32 | meta_len u32 | meta JSON (config snapshot,
seed, entry count) | entries.  Each entry: name_len u32 | name utf-8 |
dtype tag u8 (0 = float32) | ndim u32 | dims u32 each | row-major payload.
Parameter payloads are always stored as 32-bit floats.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..model import ReportModel
from .config import TrainConfig
from .data import build_tokenizer

MAGIC = b"KGN1"
VERSION = 1
_DTYPE_TAGS = {0: np.float32}


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint."""


def save_checkpoint(path: str, model: ReportModel) -> None:
    params = model.parameters()
    meta = {
        "config": model.cfg.to_dict(),
        "seed": model.cfg.seed,
        "n_entries": len(params),
    }
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
        for name, tensor in params.items():
            payload = np.ascontiguousarray(tensor.data, dtype=np.float32)
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", 0))
            fh.write(struct.pack("<I", payload.ndim))
            fh.write(struct.pack(f"<{payload.ndim}I", *payload.shape))
            if payload.dtype.byteorder == ">":
                payload = payload.byteswap()
            fh.write(payload.tobytes())


def read_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    """Return (meta, {name: float32 array})."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    offset = 4
    (version,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if version != VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {version} != supported {VERSION}")
    (meta_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    meta = json.loads(blob[offset:offset + meta_len].decode("utf-8"))
    offset += meta_len
    entries: dict[str, np.ndarray] = {}
    for _ in range(meta["n_entries"]):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (tag,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        if tag not in _DTYPE_TAGS:
            raise CheckpointError(f"{path}: unknown dtype tag {tag}")
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        entries[name] = arr.reshape(shape).astype(np.float32)
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return meta, entries


def load_model(path: str) -> ReportModel:
    """Rebuild the model from the config snapshot and stored parameters."""
    meta, entries = read_checkpoint(path)
    cfg = TrainConfig.from_mapping(meta["config"])
    model = ReportModel(cfg, build_tokenizer())
    params = model.parameters()
    missing = sorted(set(params) - set(entries))
    extra = sorted(set(entries) - set(params))
    if missing or extra:
        raise CheckpointError(
            f"{path}: parameter set mismatch (missing {missing[:3]}, extra {extra[:3]})")
    for name, tensor in params.items():
        stored = entries[name]
        if stored.shape != tensor.data.shape:
            raise CheckpointError(
                f"{path}: {name} shape {stored.shape} != model {tensor.data.shape}")
        tensor.data = stored.astype(tensor.data.dtype)
    return model


def assign_parameters(model: ReportModel, entries: dict[str, np.ndarray]) -> None:
    for name, tensor in model.parameters().items():
        tensor.data = entries[name].astype(tensor.data.dtype)

