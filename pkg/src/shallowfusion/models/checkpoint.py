"""Self-describing binary checkpoints.

Layout: magic ``SFCK``, little-endian u16 format version, u32 header length,
UTF-8 JSON header, then every parameter as little-endian float64 in header
order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..text import CharVocab

MAGIC = b"SFCK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHI")


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: dict[str, np.ndarray], path, *, kind: str, vocab: CharVocab,
                    config: dict | None = None) -> None:
    names = list(params)
    header = {
        "kind": kind,
        "vocab": vocab.symbols,
        "vocab_hash": vocab.fingerprint,
        "config": config or {},
        "params": [[n, list(np.shape(params[n]))] for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())


def load_checkpoint(path, vocab: CharVocab | None = None, kind: str | None = None):
    """Return ``(params, header)``; refuse on version, kind or vocab mismatch."""
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated header ({len(data)} bytes)")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, not a checkpoint")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    start = _PREFIX.size
    if len(data) < start + hlen:
        raise CheckpointError(f"{path}: truncated header, need {hlen} bytes")
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from None
    stored = CharVocab(header["vocab"][3:])
    if stored.fingerprint != header["vocab_hash"]:
        raise CheckpointError(f"{path}: stored vocab does not match its own hash")
    if vocab is not None and vocab.fingerprint != header["vocab_hash"]:
        raise CheckpointError(
            f"{path}: vocab hash {header['vocab_hash']} does not match expected {vocab.fingerprint}")
    if kind is not None and header["kind"] != kind:
        raise CheckpointError(f"{path}: holds a {header['kind']!r} model, expected {kind!r}")
    params = {}
    offset = start + hlen
    for name, shape in header["params"]:
        n = int(np.prod(shape)) if shape else 1
        end = offset + 8 * n
        if end > len(data):
            raise CheckpointError(f"{path}: payload truncated inside parameter {name!r}")
        params[name] = np.frombuffer(data, dtype="<f8", count=n, offset=offset).astype(np.float64).reshape(shape)
        offset = end
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes after payload")
    return params, header
