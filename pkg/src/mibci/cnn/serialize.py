"""Binary model file.

Layout (all integers little-endian)::

    b"MIBC"                     magic
    u16   format version (1)
    u32   header length in bytes
    u64   number of float parameters
    ...   header: UTF-8 JSON, sorted keys, no whitespace
    f64[] parameters, layer order, weight then bias, row-major
    u32   CRC-32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..dsp import NormStats
from ..errors import BadMagic, ChecksumMismatch, MalformedHeader, TruncatedFile, VersionMismatch
from ..fetch import atomic_write
from .model import Model, layer_from_config

MAGIC = b"MIBC"
VERSION = 1
_PREFIX = struct.Struct("<4sHIQ")


def model_to_bytes(model: Model, metadata: dict | None = None) -> bytes:
    header = {
        "layers": [{"type": l.kind, **l.config()} for l in model.layers],
        "input_shape": list(model.input_shape),
        "class_names": list(model.class_names),
        "norm_stats": None if model.norm_stats is None else {
            "mean": [float(v) for v in model.norm_stats.mean],
            "std": [float(v) for v in model.norm_stats.std],
        },
        "seed": model.seed,
        "dtype": model.dtype.name,
        "metadata": metadata if metadata is not None else getattr(model, "metadata", {}) or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()
    params = model.parameters()
    n = sum(p.size for p in params)
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in params)
    blob = _PREFIX.pack(MAGIC, VERSION, len(head), n) + head + body
    return blob + struct.pack("<I", zlib.crc32(blob))


def model_from_bytes(data: bytes) -> Model:
    if len(data) < _PREFIX.size:
        raise TruncatedFile(f"{len(data)} bytes; model prefix needs {_PREFIX.size}")
    magic, version, head_len, n = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise VersionMismatch(f"file format version {version}, reader supports {VERSION}")
    expected = _PREFIX.size + head_len + 8 * n + 4
    if len(data) < expected:
        raise TruncatedFile(f"{len(data)} bytes; file declares {expected}")
    if len(data) > expected:
        raise ChecksumMismatch(f"{len(data) - expected} unexpected trailing bytes")
    (crc,) = struct.unpack_from("<I", data, expected - 4)
    if zlib.crc32(data[:expected - 4]) != crc:
        raise ChecksumMismatch("CRC-32 does not match file contents")

    try:
        header = json.loads(data[_PREFIX.size:_PREFIX.size + head_len].decode())
        layers = [layer_from_config(spec.pop("type"), spec) for spec in header["layers"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedHeader(f"model header: {exc}") from exc
    stats = header["norm_stats"]
    model = Model(
        layers,
        header["input_shape"],
        class_names=header["class_names"],
        norm_stats=None if stats is None else NormStats(np.array(stats["mean"], dtype=np.float64),
                                                        np.array(stats["std"], dtype=np.float64)),
        seed=header["seed"],
        dtype=np.dtype(header["dtype"]),
    )
    model.metadata = header.get("metadata", {})
    flat = np.frombuffer(data, dtype="<f8", count=n, offset=_PREFIX.size + head_len)
    pos = 0
    for layer in model.layers:
        if not layer.param_names:
            continue
        shapes = layer.param_shapes()
        layer.params = {}
        for name in layer.param_names:
            size = int(np.prod(shapes[name]))
            layer.params[name] = flat[pos:pos + size].reshape(shapes[name]).astype(model.dtype)
            pos += size
    if pos != n:
        raise MalformedHeader(f"header layers need {pos} parameters, file has {n}")
    return model


def save_model(model: Model, path, metadata: dict | None = None) -> Path:
    path = Path(path)
    atomic_write(path, model_to_bytes(model, metadata))
    return path


def load_model(path) -> Model:
    return model_from_bytes(Path(path).read_bytes())
