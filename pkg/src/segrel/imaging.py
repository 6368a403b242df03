"""8-bit PNG IO and deterministic resampling.

Resampling uses half-pixel-center alignment: an output pixel i samples the
source at ``(i + 0.5) * src/out`` (floored for nearest) or interpolates
around ``(i + 0.5) * src/out - 0.5`` (bilinear). Nearest resampling never
invents values, which keeps label maps and masks valid.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError
from .types import BinaryMask, LabelMap

_SINGLE_CHANNEL_MODES = ("L", "P")


def read_label_png(path: str | Path, ignore_id: int = 255) -> LabelMap:
    """Read an 8-bit single-channel label image (raw class ids)."""
    img = Image.open(path)
    if img.mode not in _SINGLE_CHANNEL_MODES:
        raise FormatError(
            f"{path}: label image must be 8-bit single-channel, got mode {img.mode!r}"
        )
    return LabelMap(np.asarray(img, dtype=np.uint8), ignore_id=ignore_id)


def write_label_png(label: LabelMap, path: str | Path) -> None:
    Image.fromarray(label.data, mode="L").save(path, format="PNG")


def read_mask_png(path: str | Path) -> BinaryMask:
    img = Image.open(path)
    if img.mode not in _SINGLE_CHANNEL_MODES:
        raise FormatError(f"{path}: mask must be 8-bit single-channel, got mode {img.mode!r}")
    return BinaryMask(np.asarray(img, dtype=np.uint8) > 127)


def write_mask_png(mask: BinaryMask, path: str | Path) -> None:
    Image.fromarray(np.where(mask.data, 255, 0).astype(np.uint8), mode="L").save(
        path, format="PNG"
    )


def read_image_png(path: str | Path) -> np.ndarray:
    """Read an RGB image as (h, w, 3) uint8."""
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)


def write_image_png(image: np.ndarray, path: str | Path) -> None:
    arr = np.ascontiguousarray(image, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) uint8 image, got shape {arr.shape}")
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def image_size_png(path: str | Path) -> tuple[int, int]:
    """(width, height) from the PNG header without decoding pixels."""
    with Image.open(path) as img:
        return img.size


def _nearest_indices(n_out: int, n_src: int) -> np.ndarray:
    scale = n_src / n_out
    idx = np.floor((np.arange(n_out) + 0.5) * scale).astype(np.int64)
    return np.clip(idx, 0, n_src - 1)


def resize_nearest_array(arr: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size {out_w}x{out_h} must be positive")
    ys = _nearest_indices(out_h, arr.shape[0])
    xs = _nearest_indices(out_w, arr.shape[1])
    return arr[np.ix_(ys, xs)]


def resize_nearest(value, out_w: int, out_h: int):
    """Nearest-neighbour resize of a LabelMap or BinaryMask.

    The output value set is a subset of the input's: no labels are invented.
    """
    if isinstance(value, LabelMap):
        return LabelMap(resize_nearest_array(value.data, out_w, out_h), value.ignore_id)
    if isinstance(value, BinaryMask):
        return BinaryMask(resize_nearest_array(value.data, out_w, out_h))
    raise TypeError(f"resize_nearest expects LabelMap or BinaryMask, got {type(value).__name__}")


def _axis_coords(n_out: int, n_src: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    centers = (np.arange(n_out) + 0.5) * (n_src / n_out) - 0.5
    lo = np.floor(centers)
    frac = centers - lo
    i0 = np.clip(lo, 0, n_src - 1).astype(np.int64)
    i1 = np.clip(lo + 1, 0, n_src - 1).astype(np.int64)
    return i0, i1, frac


def resize_bilinear(image: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers; dtype is preserved
    (integer outputs are rounded and clipped to the dtype range).

    Separable: one vertical then one horizontal pass. 8-bit inputs are
    interpolated in float32 (exact for the value range), everything else
    in float64.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size {out_w}x{out_h} must be positive")
    src = np.asarray(image)
    squeeze = src.ndim == 2
    if squeeze:
        src = src[:, :, None]
    if src.ndim != 3:
        raise ValueError(f"expected 2-D or 3-D array, got shape {src.shape}")
    ftype = np.float32 if src.dtype.itemsize == 1 else np.float64
    work = src.astype(ftype, copy=False)
    y0, y1, fy = _axis_coords(out_h, src.shape[0])
    x0, x1, fx = _axis_coords(out_w, src.shape[1])
    fy = fy.astype(ftype)[:, None, None]
    fx = fx.astype(ftype)[:, None, None]
    a = work[y0]
    b = work[y1]
    a *= 1 - fy
    b *= fy
    a += b
    # Row gathers are contiguous; transpose so the x pass also gathers rows.
    vt = np.ascontiguousarray(a.transpose(1, 0, 2))
    c = vt[x0]
    d = vt[x1]
    c *= 1 - fx
    d *= fx
    c += d
    out = c.transpose(1, 0, 2)
    if np.issubdtype(src.dtype, np.integer):
        info = np.iinfo(src.dtype)
        np.rint(out, out=out)
        np.clip(out, info.min, info.max, out=out)
    out = out.astype(src.dtype)
    return out[:, :, 0] if squeeze else out
