"""SRT1 dense tensor container.

Little-endian layout: magic ``b"SRT1"``, dtype code u8 (0=f32, 1=f64,
2=u8), rank u8, rank x u64 dimensions, then the raw row-major payload.
Round trips are bit-exact for all finite values.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CapacityError, FormatError
from .types import EmbeddingSet, LogitStack, ProbStack, ScoreMap

MAGIC = b"SRT1"

_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_KIND_TO_CODE = {("f", 4): 0, ("f", 8): 1, ("u", 1): 2}

# Refuse to allocate tensors beyond this element count (~1 TiB of f64).
MAX_ELEMENTS = 1 << 37


def write_array(arr: np.ndarray, path: str | Path) -> None:
    arr = np.ascontiguousarray(arr)
    code = _KIND_TO_CODE.get((arr.dtype.kind, arr.dtype.itemsize))
    if code is None:
        raise ValueError(f"unsupported dtype {arr.dtype}; use f32, f64 or u8")
    if arr.ndim < 1 or arr.ndim > 255:
        raise ValueError(f"rank {arr.ndim} outside [1, 255]")
    header = MAGIC + struct.pack("<BB", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = arr.astype(_CODE_TO_DTYPE[code], copy=False).tobytes()
    Path(path).write_bytes(header + payload)


def read_array(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 6:
        raise FormatError(f"{path}: truncated header")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    code, rank = struct.unpack_from("<BB", raw, 4)
    if code not in _CODE_TO_DTYPE:
        raise FormatError(f"{path}: unknown dtype code {code}")
    offset = 6
    if len(raw) < offset + 8 * rank:
        raise FormatError(f"{path}: truncated dimension list")
    dims = struct.unpack_from(f"<{rank}Q", raw, offset)
    offset += 8 * rank
    count = 1
    for d in dims:
        count *= d
        if count > MAX_ELEMENTS:
            raise CapacityError(f"{path}: {dims} exceeds {MAX_ELEMENTS} elements")
    dtype = _CODE_TO_DTYPE[code]
    expected = count * dtype.itemsize
    if len(raw) - offset != expected:
        raise FormatError(
            f"{path}: payload is {len(raw) - offset} bytes, header declares {expected}"
        )
    arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return arr.reshape(dims).copy()


def write_tensor(value, path: str | Path) -> None:
    """Persist a LogitStack/ProbStack (f32 rank 3), ScoreMap (f32 rank 2)
    or EmbeddingSet (f64 rank 2)."""
    if isinstance(value, (LogitStack, ProbStack, ScoreMap, EmbeddingSet)):
        write_array(value.data, path)
    else:
        raise TypeError(f"cannot serialize {type(value).__name__}")


def read_tensor(path: str | Path) -> LogitStack | ScoreMap:
    """Read a float tensor: rank 3 becomes a LogitStack, rank 2 a ScoreMap.

    A ProbStack written through :func:`write_tensor` reads back as a
    LogitStack; the container does not distinguish the two. ScoreMap
    polarity is not stored and defaults to higher-is-anomalous.
    """
    arr = read_array(path)
    if arr.dtype == np.dtype("<f4") and arr.ndim == 3:
        return LogitStack(arr)
    if arr.dtype == np.dtype("<f4") and arr.ndim == 2:
        return ScoreMap(arr)
    raise FormatError(f"{path}: rank {arr.ndim} / dtype {arr.dtype} is not a logit stack or score map")


def read_embeddings(path: str | Path) -> EmbeddingSet:
    arr = read_array(path)
    if arr.dtype != np.dtype("<f8") or arr.ndim != 2:
        raise FormatError(f"{path}: embeddings must be a rank-2 f64 tensor")
    return EmbeddingSet(arr)
