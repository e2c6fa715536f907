"""Binary tensor container plus a plain-text metadata sidecar.

Layout (all integers little-endian)::

    b"EHRFKPT1"  u32 version  u32 n_tensors
    per tensor:  u32 name_len, name (UTF-8), u8 dtype (0 = f32, 1 = f64),
                 u32 rank, rank x u64 dims, row-major payload

The sidecar ``<path>.meta`` is an INI file with ``[approximator]`` and
``[metadata]`` sections.
"""

from __future__ import annotations

import configparser
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .networks import approximator_from_config

MAGIC = b"EHRFKPT1"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, order="C")
        if arr.dtype not in _TAGS:
            raise CheckpointError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BI", _TAGS[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.astype(_DTYPES[_TAGS[arr.dtype]]).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_tensors(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:8]!r}")
    try:
        version, n = struct.unpack_from("<II", data, 8)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        pos = 16
        out = {}
        for _ in range(n):
            (name_len,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + name_len].decode("utf-8")
            pos += name_len
            tag, rank = struct.unpack_from("<BI", data, pos)
            pos += 5
            dims = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
            dtype = _DTYPES[tag]
            count = int(np.prod(dims, dtype=np.int64))
            nbytes = count * dtype.itemsize
            if pos + nbytes > len(data):
                raise CheckpointError(f"{path}: truncated tensor {name!r}")
            out[name] = np.frombuffer(data, dtype=dtype, count=count, offset=pos).reshape(dims).copy()
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint") from exc
    return out


def _sidecar_parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys such as S are case-sensitive
    return cp


def save_checkpoint(path, approx, metadata: dict | None = None) -> None:
    write_tensors(path, approx.tensors())
    cp = _sidecar_parser()
    cp["approximator"] = {k: str(v) for k, v in approx.config().items()}
    cp["metadata"] = {k: str(v) for k, v in (metadata or {}).items()}
    with open(f"{path}.meta", "w") as fh:
        cp.write(fh)


def load_checkpoint(path):
    """Rebuild the approximator; returns (approximator, metadata dict)."""
    tensors = read_tensors(path)
    cp = _sidecar_parser()
    if not cp.read(f"{path}.meta"):
        raise CheckpointError(f"{path}.meta: metadata sidecar missing")
    approx = approximator_from_config(dict(cp["approximator"]))
    approx.load_tensors(tensors)
    meta = dict(cp["metadata"]) if cp.has_section("metadata") else {}
    return approx, meta
