"""TDW1 tensor container.

Layout (all integers little-endian)::

    8 bytes   magic  b"TDWEIGHT"
    8 bytes   u64    length L of the metadata document
    L bytes   UTF-8 JSON  {"format": "TDW1", "version": 1,
                           "config": {...} | null,
                           "tensors": [{"name": str, "shape": [int, ...]}, ...]}
    payload   float64 little-endian, tensors concatenated in manifest order

The same container holds model weights (config set) and single dataset images
(config null, one tensor named ``image``).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .model import ConfigError, ViTConfig, ViTWeights, expected_shapes

MAGIC = b"TDWEIGHT"
FORMAT = "TDW1"
VERSION = 1


class FormatError(ValueError):
    pass


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensors(tensors: dict[str, np.ndarray], config: dict | None = None) -> bytes:
    manifest = [{"name": name, "shape": list(np.shape(arr))} for name, arr in tensors.items()]
    meta = {"format": FORMAT, "version": VERSION, "config": config, "tensors": manifest}
    meta_bytes = json.dumps(meta, sort_keys=False, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<Q", len(meta_bytes)), meta_bytes]
    for arr in tensors.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_tensors(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(buf) < 16:
        raise FormatError(f"file too short ({len(buf)} bytes) for a TDW1 header")
    if buf[:8] != MAGIC:
        raise FormatError(f"bad magic {buf[:8]!r}")
    (meta_len,) = struct.unpack("<Q", buf[8:16])
    if 16 + meta_len > len(buf):
        raise FormatError("truncated metadata document")
    try:
        meta = json.loads(buf[16:16 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable metadata: {e}") from None
    if meta.get("format") != FORMAT:
        raise FormatError(f"format field {meta.get('format')!r} != {FORMAT!r}")
    if meta.get("version") != VERSION:
        raise FormatError(f"version {meta.get('version')!r} not supported (expected {VERSION})")
    manifest = meta.get("tensors")
    if not isinstance(manifest, list):
        raise FormatError("tensors manifest missing")

    offset = 16 + meta_len
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest:
        name, shape = entry.get("name"), entry.get("shape")
        if not isinstance(name, str) or not isinstance(shape, list) or any(
            not isinstance(s, int) or s < 0 for s in shape
        ):
            raise FormatError(f"malformed manifest entry {entry!r}")
        if name in tensors:
            raise FormatError(f"duplicate tensor {name!r}")
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(buf):
            raise FormatError(f"payload truncated in tensor {name!r}")
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(buf):
        raise FormatError(f"{len(buf) - offset} trailing bytes after last tensor")
    return meta, tensors


def write_tensors(path, tensors: dict[str, np.ndarray], config: dict | None = None) -> None:
    atomic_write_bytes(path, encode_tensors(tensors, config))


def read_tensors(path) -> tuple[dict, dict[str, np.ndarray]]:
    return decode_tensors(Path(path).read_bytes())


def save_weights(weights: ViTWeights, cfg: ViTConfig, path) -> None:
    write_tensors(path, weights.to_dict(), cfg.to_dict())


def load_weights(path) -> tuple[ViTConfig, ViTWeights]:
    meta, tensors = read_tensors(path)
    if not isinstance(meta.get("config"), dict):
        raise FormatError("weight file carries no model config")
    try:
        cfg = ViTConfig.from_dict(meta["config"])
    except (ConfigError, TypeError) as e:
        raise FormatError(f"config: {e}") from None
    want = expected_shapes(cfg)
    for name, shape in want.items():
        if name not in tensors:
            raise FormatError(f"tensor {name!r} missing from manifest")
        if tensors[name].shape != shape:
            raise FormatError(f"tensor {name!r} has shape {tensors[name].shape}, config implies {shape}")
    extra = set(tensors) - set(want)
    if extra:
        raise FormatError(f"unexpected tensors {sorted(extra)}")
    return cfg, ViTWeights.from_dict(cfg, {name: tensors[name] for name in want})
