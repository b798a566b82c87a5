"""Binary checkpoint: JSON manifest followed by little-endian float64 arrays.

Layout::

    MAGIC (8 bytes) | header length (uint64 LE) | JSON header | payload

The header holds the schema version, the training config, extra metadata
and a registry of ``(name, shape, dtype)`` in payload order.  Complex
arrays are stored as interleaved real/imaginary float64 pairs.
"""

from __future__ import annotations

import json
import struct
from typing import Optional

import numpy as np

from .config import train_config_from_dict, train_config_to_dict
from .errors import (CheckpointError, CheckpointFormatError, CheckpointShapeError,
                     CheckpointTruncatedError, CheckpointVersionError)
from .model import FreqFlow

MAGIC = b"FQFLOWCK"
SCHEMA_VERSION = 1
_LEN = struct.Struct("<Q")


def save_checkpoint(model: FreqFlow, path, metadata: Optional[dict] = None):
    registry, chunks = [], []
    for name, p in model.named_parameters():
        arr = np.ascontiguousarray(p.data)
        registry.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name})
        real = arr.view(np.float64) if np.iscomplexobj(arr) else arr.astype(np.float64, copy=False)
        chunks.append(real.astype("<f8", copy=False).tobytes())
    payload = b"".join(chunks)
    header = {
        "schema_version": SCHEMA_VERSION,
        "config": train_config_to_dict(model.cfg),
        "n_vars": model.n_vars,
        "cutoff": model.cutoff,
        "flow_enabled": model.flow_enabled,
        "metadata": metadata or {},
        "registry": registry,
        "payload_bytes": len(payload),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + _LEN.pack(len(blob)) + blob + payload)


def read_header(path) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic bytes)")
    pos = len(MAGIC)
    if len(raw) < pos + _LEN.size:
        raise CheckpointTruncatedError(f"{path}: truncated before header length")
    (n,) = _LEN.unpack_from(raw, pos)
    pos += _LEN.size
    if len(raw) < pos + n:
        raise CheckpointTruncatedError(f"{path}: truncated inside header")
    try:
        header = json.loads(raw[pos: pos + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable header: {exc}") from exc
    version = header.get("schema_version")
    if version != SCHEMA_VERSION:
        raise CheckpointVersionError(f"{path}: schema version {version}, expected {SCHEMA_VERSION}")
    payload = raw[pos + n:]
    if len(payload) < header["payload_bytes"]:
        raise CheckpointTruncatedError(
            f"{path}: payload has {len(payload)} of {header['payload_bytes']} bytes")
    if len(payload) > header["payload_bytes"]:
        raise CheckpointFormatError(f"{path}: trailing bytes after payload")
    return header, payload


def load_checkpoint(path) -> FreqFlow:
    """Rebuild the model; the saved metadata is attached as ``model.metadata``."""
    header, payload = read_header(path)
    try:
        cfg = train_config_from_dict(header["config"])
    except (TypeError, KeyError) as exc:
        raise CheckpointFormatError(f"{path}: bad config block: {exc}") from exc
    model = FreqFlow(cfg, header["n_vars"], header["cutoff"])
    params = dict(model.named_parameters())
    entries = header["registry"]
    if [e["name"] for e in entries] != list(params):
        raise CheckpointShapeError(f"{path}: parameter registry does not match the model")
    offset = 0
    for entry in entries:
        p = params[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != p.data.shape or entry["dtype"] != p.data.dtype.name:
            raise CheckpointShapeError(
                f"{entry['name']}: stored {shape} {entry['dtype']}, model has "
                f"{p.data.shape} {p.data.dtype.name}")
        count = p.data.size * (2 if p.is_complex else 1)
        flat = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).astype(np.float64)
        offset += 8 * count
        p.data[...] = flat.view(np.complex128).reshape(shape) if p.is_complex else flat.reshape(shape)
    if offset != len(payload):
        raise CheckpointError(f"{path}: registry covers {offset} of {len(payload)} payload bytes")
    model.flow_enabled = bool(header["flow_enabled"])
    model.metadata = header.get("metadata", {})
    return model
