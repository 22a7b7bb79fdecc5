"""Binary checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic  b"IRISCKPT"
    uint32    format version (1)
    uint64    header length H
    H bytes   UTF-8 JSON header (keys sorted)
    payload   float64 little-endian tensors, row-major, in header order

The header holds ``variant``, ``hyperparams``, ``loss``, ``conventions``,
free-form ``meta``, the SHA-256 of the payload, and for each tensor its
``name``, ``shape`` and element ``offset`` into the payload. Nothing
time- or path-dependent is written, so identical runs give identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .model import Hyperparams, ModelParams

__all__ = ["CheckpointError", "FORMAT_VERSION", "CONVENTIONS", "save_checkpoint", "load_checkpoint"]

MAGIC = b"IRISCKPT"
FORMAT_VERSION = 1
CONVENTIONS = {
    "embedding_init": "normal(mean=0, std=init_std)",
    "weight_init": "xavier_uniform",
    "log_loss": "negative log-likelihood, no 1/2 factor",
    "bpr_loss": "sum of -log sigmoid(r_ui - r_ux), no 1/2 factor",
    "mse_loss": "1/2 sum of squared error",
    "weight_layout": "(fan_in, fan_out), row vectors",
}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams, hp: Hyperparams, loss: str = "pointwise_log",
                    meta: dict | None = None) -> None:
    names = list(params.tensors)
    table, offset, chunks = [], 0, []
    for name in names:
        t = np.ascontiguousarray(params.tensors[name], dtype="<f8")
        table.append({"name": name, "shape": list(t.shape), "offset": offset})
        offset += t.size
        chunks.append(t.tobytes())
    payload = b"".join(chunks)
    header = {
        "variant": params.variant.value,
        "hyperparams": hp.to_dict(),
        "loss": loss,
        "conventions": CONVENTIONS,
        "meta": meta or {},
        "tensors": table,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    data = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hbytes)) + hbytes + payload
    Path(path).write_bytes(data)


def load_checkpoint(path) -> tuple[ModelParams, Hyperparams, dict]:
    """Returns ``(params, hyperparams, header)``."""
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    try:
        header = json.loads(data[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupted header ({exc})") from None
    payload = data[20 + hlen:]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch")
    if len(payload) % 8:
        raise CheckpointError(f"{path}: truncated payload")
    values = np.frombuffer(payload, dtype="<f8")
    try:
        tensors = {}
        for entry in header["tensors"]:
            size = int(np.prod(entry["shape"], dtype=np.int64))
            start = int(entry["offset"])
            if start < 0 or start + size > values.size:
                raise CheckpointError(f"{path}: tensor {entry['name']} runs past the payload")
            tensors[entry["name"]] = values[start:start + size].reshape(entry["shape"]).astype(np.float64)
        params = ModelParams(header["variant"], tensors)
        hp = Hyperparams.from_dict(header["hyperparams"])
    except (KeyError, ValueError, TypeError, FloatingPointError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: invalid header ({exc})") from None
    return params, hp, header
